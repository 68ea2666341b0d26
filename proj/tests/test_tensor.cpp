#include "helpers.hpp"

using namespace fastmd;
using testing::bit_equal;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

// Element-wise triple-loop reference.
Tensor matmul_ref(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows(), b.cols()}, 0.0);
  for (int64_t i = 0; i < a.rows(); ++i)
    for (int64_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (int64_t k = 0; k < a.cols(); ++k) acc += a.at(i, k) * b.at(k, j);
      out.at(i, j) = acc;
    }
  return out;
}

Tensor conv2d_ref(const Tensor& x, const Tensor& k, int64_t stride, int64_t padding) {
  const int64_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int64_t cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const int64_t oh = (h + 2 * padding - kh) / stride + 1;
  const int64_t ow = (w + 2 * padding - kw) / stride + 1;
  Tensor out({cout, oh, ow}, 0.0);
  for (int64_t oc = 0; oc < cout; ++oc)
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (int64_t ic = 0; ic < cin; ++ic)
          for (int64_t ki = 0; ki < kh; ++ki)
            for (int64_t kj = 0; kj < kw; ++kj) {
              const int64_t ii = i * stride + ki - padding, jj = j * stride + kj - padding;
              if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
              acc += x.data()[(ic * h + ii) * w + jj] * k.data()[((oc * cin + ic) * kh + ki) * kw + kj];
            }
        out.data()[(oc * oh + i) * ow + j] = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("matmul identity and hand cases") {
  Tensor i2 = Tensor::from({2, 2}, {1, 0, 0, 1});
  REQUIRE(bit_equal(matmul(i2, i2), i2));

  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 1}, {0, 1});
  Tensor c = matmul(a, b);
  REQUIRE(c.at(0, 0) == 2.0);
  REQUIRE(c.at(1, 0) == 4.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(101);
  Tensor a = random_tensor(rng, {7, 5});
  Tensor b = random_tensor(rng, {5, 3});
  REQUIRE(max_abs_diff(matmul(a, b), matmul_ref(a, b)) <= 1e-12);
}

TEST_CASE("matmul rejects mismatched inner dims") {
  Tensor a({2, 3}), b({4, 2});
  REQUIRE_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("matmul associativity within 1e-9 relative") {
  Rng rng(7);
  for (int c = 0; c < 10; ++c) {
    Tensor a = random_tensor(rng, {4, 6});
    Tensor b = random_tensor(rng, {6, 5});
    Tensor d = random_tensor(rng, {5, 3});
    Tensor lhs = matmul(matmul(a, b), d);
    Tensor rhs = matmul(a, matmul(b, d));
    for (int64_t i = 0; i < lhs.numel(); ++i) {
      const double denom = std::max(1.0, std::fabs(lhs.data()[i]));
      REQUIRE(std::fabs(lhs.data()[i] - rhs.data()[i]) / denom <= 1e-9);
    }
  }
}

TEST_CASE("log_softmax basics") {
  Tensor x = Tensor::from({1, 2}, {0, 0});
  Tensor y = log_softmax(x);
  REQUIRE(y.at(0, 0) == Catch::Approx(std::log(0.5)).margin(1e-14));
  REQUIRE(y.at(0, 1) == Catch::Approx(std::log(0.5)).margin(1e-14));

  Tensor big = Tensor::from({1, 2}, {1000.0, 0.0});
  Tensor z = log_softmax(big);
  REQUIRE(std::isfinite(z.at(0, 0)));
  REQUIRE(z.at(0, 0) == Catch::Approx(0.0).margin(1e-10));
  REQUIRE(z.at(0, 1) == Catch::Approx(-1000.0).margin(1e-6));
}

TEST_CASE("log_softmax rows normalize and logsumexp is zero") {
  Rng rng(3);
  Tensor x = random_tensor(rng, {6, 4}, -3.0, 3.0);
  Tensor y = log_softmax(x);
  for (int64_t r = 0; r < y.rows(); ++r) {
    double sum = 0.0, lse = 0.0;
    for (int64_t j = 0; j < y.cols(); ++j) sum += std::exp(y.at(r, j));
    for (int64_t j = 0; j < y.cols(); ++j) lse += std::exp(y.at(r, j));
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(std::log(lse) == Catch::Approx(0.0).margin(1e-10));
  }
}

TEST_CASE("log_softmax shift invariance") {
  Rng rng(5);
  Tensor x = random_tensor(rng, {3, 5}, -2.0, 2.0);
  Tensor shifted = x;
  for (double& v : shifted.raw()) v += 17.25;
  REQUIRE(max_abs_diff(log_softmax(x), log_softmax(shifted)) <= 1e-10);
}

TEST_CASE("layer_norm constant row and unit variance") {
  Tensor gain({3}, 1.0), bias({3}, 0.0);
  Tensor c = Tensor::from({1, 3}, {5, 5, 5});
  Tensor n = layer_norm(c, gain, bias, 1e-5);
  for (int64_t j = 0; j < 3; ++j) REQUIRE(std::fabs(n.at(0, j)) <= 1e-10);

  Tensor x = Tensor::from({1, 3}, {1, 2, 3});
  Tensor y = layer_norm(x, gain, bias, 1e-12);
  double m = 0, var = 0;
  for (int64_t j = 0; j < 3; ++j) m += y.at(0, j);
  m /= 3;
  for (int64_t j = 0; j < 3; ++j) var += (y.at(0, j) - m) * (y.at(0, j) - m);
  var /= 3;
  REQUIRE(std::fabs(m) <= 1e-10);
  REQUIRE(var == Catch::Approx(1.0).margin(1e-8));
}

TEST_CASE("layer_norm degenerate gain") {
  Tensor gain({4}, 0.0);
  Tensor bias({4});
  for (int64_t j = 0; j < 4; ++j) bias.data()[j] = 0.5 * static_cast<double>(j);
  Rng rng(9);
  Tensor x = random_tensor(rng, {2, 4});
  Tensor y = layer_norm(x, gain, bias, 1e-5);
  for (int64_t r = 0; r < 2; ++r)
    for (int64_t j = 0; j < 4; ++j) REQUIRE(y.at(r, j) == bias.data()[j]);
}

TEST_CASE("layer_norm rejects non-positive eps") {
  Tensor gain({2}, 1.0), bias({2});
  REQUIRE_THROWS_AS(layer_norm(Tensor({1, 2}), gain, bias, 0.0), ValueError);
}

TEST_CASE("conv2d identity kernel") {
  Rng rng(11);
  Tensor x = random_tensor(rng, {1, 5, 6});
  Tensor k({1, 1, 3, 3}, 0.0);
  k.data()[4] = 1.0;  // center
  Tensor y = conv2d(x, k, 1, 1);
  REQUIRE(bit_equal(y, x));
}

TEST_CASE("conv2d matches nested-loop oracle") {
  Rng rng(13);
  Tensor x = random_tensor(rng, {2, 7, 6});
  Tensor k = random_tensor(rng, {3, 2, 3, 3});
  for (int64_t stride : {1, 2}) {
    for (int64_t padding : {0, 1}) {
      REQUIRE(max_abs_diff(conv2d(x, k, stride, padding), conv2d_ref(x, k, stride, padding)) <= 1e-12);
    }
  }
}

TEST_CASE("conv2d rejects oversized kernel") {
  Tensor x({1, 2, 2});
  Tensor k({1, 1, 3, 3});
  REQUIRE_THROWS_AS(conv2d(x, k, 1, 0), ShapeError);
}

TEST_CASE("depthwise conv hand case and oracle") {
  Tensor x = Tensor::from({3, 1}, {1, 2, 3});
  Tensor k = Tensor::from({1, 3}, {1, 1, 1});
  Tensor y = conv1d_depthwise(x, k, 1);
  REQUIRE(y.at(0, 0) == 3.0);
  REQUIRE(y.at(1, 0) == 6.0);
  REQUIRE(y.at(2, 0) == 5.0);

  Rng rng(17);
  Tensor x2 = random_tensor(rng, {9, 4});
  Tensor k2 = random_tensor(rng, {4, 5});
  Tensor got = conv1d_depthwise(x2, k2, 2);
  for (int64_t t = 0; t < 9; ++t)
    for (int64_t c = 0; c < 4; ++c) {
      double acc = 0.0;
      for (int64_t kk = 0; kk < 5; ++kk) {
        const int64_t src = t + kk - 2;
        if (src >= 0 && src < 9) acc += x2.at(src, c) * k2.at(c, kk);
      }
      REQUIRE(std::fabs(got.at(t, c) - acc) <= 1e-12);
    }
}

TEST_CASE("kernels are deterministic") {
  Rng rng(19);
  Tensor a = random_tensor(rng, {5, 5});
  Tensor b = random_tensor(rng, {5, 5});
  REQUIRE(bit_equal(matmul(a, b), matmul(a, b)));
  REQUIRE(bit_equal(log_softmax(a), log_softmax(a)));
  Tensor gain({5}, 1.0), bias({5});
  REQUIRE(bit_equal(layer_norm(a, gain, bias, 1e-5), layer_norm(a, gain, bias, 1e-5)));
}

TEST_CASE("kernels keep finite values finite") {
  Rng rng(23);
  Tensor a = random_tensor(rng, {4, 4}, -10.0, 10.0);
  for (const Tensor& t : {matmul(a, a), log_softmax(a), relu(a), swish(a), sigmoid(a)}) {
    for (double v : t.raw()) REQUIRE(std::isfinite(v));
  }
}
