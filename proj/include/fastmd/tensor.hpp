#pragma once

#include <cstring>
#include <numeric>
#include <sstream>

#include "fastmd/common.hpp"

namespace fastmd {

// Dense row-major tensor of 64-bit reals. All compute happens in double;
// 32-bit storage exists only in the checkpoint container.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> dims, double fill = 0.0)
      : dims_(std::move(dims)), data_(checked_numel(dims_), fill) {}

  static Tensor from(std::vector<int64_t> dims, std::vector<double> data) {
    Tensor t;
    t.dims_ = std::move(dims);
    if (checked_numel(t.dims_) != static_cast<int64_t>(data.size())) {
      throw ShapeError("tensor data length does not match dims");
    }
    t.data_ = std::move(data);
    return t;
  }

  const std::vector<int64_t>& dims() const { return dims_; }
  int rank() const { return static_cast<int>(dims_.size()); }
  int64_t dim(int i) const { return dims_.at(static_cast<size_t>(i)); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  // 2-D helpers; most of the model works in [rows x cols].
  int64_t rows() const { return rank() == 2 ? dims_[0] : throw_shape_2d(); }
  int64_t cols() const { return rank() == 2 ? dims_[1] : throw_shape_2d(); }
  double& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * dims_[1] + c)]; }
  double at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * dims_[1] + c)]; }
  double* row(int64_t r) { return data_.data() + r * dims_[1]; }
  const double* row(int64_t r) const { return data_.data() + r * dims_[1]; }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < dims_.size(); ++i) os << (i ? "x" : "") << dims_[i];
    os << "]";
    return os.str();
  }

 private:
  static int64_t checked_numel(const std::vector<int64_t>& dims) {
    int64_t n = 1;
    for (int64_t d : dims) {
      if (d <= 0) throw ShapeError("tensor extents must be positive");
      n *= d;
    }
    return n;
  }
  [[noreturn]] int64_t throw_shape_2d() const {
    throw ShapeError("expected rank-2 tensor, got " + shape_str());
  }

  std::vector<int64_t> dims_;
  std::vector<double> data_;
};

// a[MxK] * b[KxN]. ikj loop order: accumulation over k is ascending for every
// output element, so results are bit-identical regardless of how callers
// batch their rows.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul expects rank-2 operands, got " + a.shape_str() + " and " + b.shape_str());
  }
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul inner dims disagree: " + a.shape_str() + " vs " + b.shape_str());
  }
  const int64_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n}, 0.0);
  for (int64_t i = 0; i < m; ++i) {
    const double* ar = a.row(i);
    double* or_ = out.row(i);
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = ar[kk];
      const double* br = b.row(kk);
      for (int64_t j = 0; j < n; ++j) or_[j] += av * br[j];
    }
  }
  return out;
}

// Row-wise log-softmax over the last dim, max-subtracted.
inline Tensor log_softmax(const Tensor& x) {
  if (x.rank() < 1 || x.dim(x.rank() - 1) < 1) {
    throw ShapeError("log_softmax needs last dim >= 1");
  }
  const int64_t v = x.dim(x.rank() - 1);
  const int64_t rows = x.numel() / v;
  Tensor out = x;
  double* d = out.data();
  for (int64_t r = 0; r < rows; ++r, d += v) {
    double mx = d[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, d[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < v; ++j) sum += std::exp(d[j] - mx);
    const double lse = mx + std::log(sum);
    for (int64_t j = 0; j < v; ++j) d[j] -= lse;
  }
  return out;
}

// Normalizes each row of x[...xd] to zero mean / unit variance, then applies
// gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (eps <= 0.0) throw ValueError("layer_norm eps must be > 0");
  const int64_t d = x.dim(x.rank() - 1);
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm gain/bias width mismatch");
  }
  const int64_t rows = x.numel() / d;
  Tensor out = x;
  double* p = out.data();
  const double* g = gain.data();
  const double* b = bias.data();
  for (int64_t r = 0; r < rows; ++r, p += d) {
    double m = 0.0;
    for (int64_t j = 0; j < d; ++j) m += p[j];
    m /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double c = p[j] - m;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t j = 0; j < d; ++j) p[j] = (p[j] - m) * inv * g[j] + b[j];
  }
  return out;
}

// 2-D cross-correlation, valid region after optional zero padding.
// x: [Cin x H x W], kernels: [Cout x Cin x kh x kw], stride/padding on both
// spatial axes.
inline Tensor conv2d(const Tensor& x, const Tensor& kernels, int64_t stride, int64_t padding = 0) {
  if (x.rank() != 3 || kernels.rank() != 4) {
    throw ShapeError("conv2d expects x[Cin,H,W], kernels[Cout,Cin,kh,kw]");
  }
  if (stride < 1) throw ValueError("conv2d stride must be >= 1");
  const int64_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int64_t cout = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(1) != cin) throw ShapeError("conv2d channel mismatch");
  const int64_t ph = h + 2 * padding, pw = w + 2 * padding;
  if (kh > ph || kw > pw) {
    throw ShapeError("conv2d kernel larger than padded input");
  }
  const int64_t oh = (ph - kh) / stride + 1;
  const int64_t ow = (pw - kw) / stride + 1;
  Tensor out({cout, oh, ow}, 0.0);
  const double* xd = x.data();
  const double* kd = kernels.data();
  double* od = out.data();
  for (int64_t oc = 0; oc < cout; ++oc) {
    for (int64_t oi = 0; oi < oh; ++oi) {
      for (int64_t oj = 0; oj < ow; ++oj) {
        double acc = 0.0;
        for (int64_t ic = 0; ic < cin; ++ic) {
          for (int64_t ki = 0; ki < kh; ++ki) {
            const int64_t ii = oi * stride + ki - padding;
            if (ii < 0 || ii >= h) continue;
            for (int64_t kj = 0; kj < kw; ++kj) {
              const int64_t jj = oj * stride + kj - padding;
              if (jj < 0 || jj >= w) continue;
              acc += xd[(ic * h + ii) * w + jj] * kd[((oc * cin + ic) * kh + ki) * kw + kj];
            }
          }
        }
        od[(oc * oh + oi) * ow + oj] = acc;
      }
    }
  }
  return out;
}

// Depthwise 1-D cross-correlation along time. x: [T x C], kernel: [C x K],
// zero padding keeps the output length equal to T.
inline Tensor conv1d_depthwise(const Tensor& x, const Tensor& kernel, int64_t padding) {
  if (x.rank() != 2 || kernel.rank() != 2) {
    throw ShapeError("conv1d_depthwise expects x[T,C], kernel[C,K]");
  }
  const int64_t t = x.rows(), c = x.cols(), k = kernel.cols();
  if (kernel.rows() != c) throw ShapeError("conv1d_depthwise channel mismatch");
  if (k > t + 2 * padding) throw ShapeError("conv1d_depthwise kernel larger than padded input");
  if (t + 2 * padding - k + 1 != t) {
    throw ShapeError("conv1d_depthwise padding must preserve length");
  }
  Tensor out({t, c}, 0.0);
  for (int64_t i = 0; i < t; ++i) {
    double* orow = out.row(i);
    for (int64_t kk = 0; kk < k; ++kk) {
      const int64_t src = i + kk - padding;
      if (src < 0 || src >= t) continue;
      const double* xrow = x.row(src);
      const double* krow = kernel.data();
      for (int64_t ch = 0; ch < c; ++ch) orow[ch] += xrow[ch] * krow[ch * k + kk];
    }
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError("add shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
  Tensor out = a;
  double* o = out.data();
  const double* p = b.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] += p[i];
  return out;
}

// Adds a length-d bias vector to every row of x[...xd].
inline Tensor add_row(const Tensor& x, const Tensor& bias) {
  const int64_t d = x.dim(x.rank() - 1);
  if (bias.numel() != d) throw ShapeError("add_row bias width mismatch");
  Tensor out = x;
  double* p = out.data();
  const double* b = bias.data();
  const int64_t rows = x.numel() / d;
  for (int64_t r = 0; r < rows; ++r, p += d)
    for (int64_t j = 0; j < d; ++j) p[j] += b[j];
  return out;
}

inline Tensor scale(const Tensor& x, double s) {
  Tensor out = x;
  for (double& v : out.raw()) v *= s;
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.raw()) v = v > 0.0 ? v : 0.0;
  return out;
}

inline double sigmoid_scalar(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline Tensor sigmoid(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.raw()) v = sigmoid_scalar(v);
  return out;
}

// x * sigmoid(x)
inline Tensor swish(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.raw()) v = v * sigmoid_scalar(v);
  return out;
}

}  // namespace fastmd
