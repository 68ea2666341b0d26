#include "helpers.hpp"

using namespace fastmd;
using testing::random_posteriors;

namespace {

// Posteriors whose frame argmaxes follow the given symbol sequence.
Posteriors posteriors_with_argmax(const std::vector<int>& frames, int64_t v, double peak = 3.0) {
  Tensor logits({static_cast<int64_t>(frames.size()), v}, 0.0);
  for (size_t t = 0; t < frames.size(); ++t) logits.at(static_cast<int64_t>(t), frames[t]) = peak;
  return log_softmax(logits);
}

}  // namespace

TEST_CASE("greedy collapse rules") {
  // a a _ b b -> a b
  auto out = ctc_greedy(posteriors_with_argmax({1, 1, 0, 2, 2}, 3));
  REQUIRE(out.tokens == std::vector<int>{1, 2});
  REQUIRE(out.frame_spans == std::vector<std::pair<int64_t, int64_t>>{{0, 2}, {3, 5}});

  // all blanks -> empty
  REQUIRE(ctc_greedy(posteriors_with_argmax({0, 0, 0}, 3)).tokens.empty());

  // a _ a -> a a
  REQUIRE(ctc_greedy(posteriors_with_argmax({1, 0, 1}, 3)).tokens == std::vector<int>{1, 1});
}

TEST_CASE("greedy confidences are peak run probabilities in [0,1]") {
  Tensor logits({3, 3}, 0.0);
  logits.at(0, 1) = 1.0;
  logits.at(1, 1) = 4.0;  // peak frame of the run
  logits.at(2, 0) = 2.0;
  Posteriors post = log_softmax(logits);
  auto out = ctc_greedy(post);
  REQUIRE(out.tokens == std::vector<int>{1});
  REQUIRE(out.confidences[0] == Catch::Approx(std::exp(post.at(1, 1))));
  REQUIRE(out.confidences[0] >= 0.0);
  REQUIRE(out.confidences[0] <= 1.0);
}

TEST_CASE("greedy output re-collapses to itself when runs are separated") {
  Rng rng(61);
  for (int c = 0; c < 20; ++c) {
    auto out = ctc_greedy(random_posteriors(rng, 1 + rng.below(10), 4));
    // rebuild a posterior with one blank-separated run per token
    if (out.tokens.empty()) continue;
    std::vector<int> frames;
    for (int tok : out.tokens) {
      frames.push_back(tok);
      frames.push_back(0);
    }
    auto again = ctc_greedy(posteriors_with_argmax(frames, 4));
    REQUIRE(again.tokens == out.tokens);
    // and without adjacent duplicates, direct re-collapse is a fixpoint
    bool has_dup = false;
    for (size_t i = 1; i < out.tokens.size(); ++i) has_dup |= out.tokens[i] == out.tokens[i - 1];
    if (!has_dup) {
      REQUIRE(ctc_greedy(posteriors_with_argmax(out.tokens, 4)).tokens == out.tokens);
    }
  }
}

TEST_CASE("confidence reaches 1.0 only for an exact-one frame posterior") {
  Rng rng(62);
  for (int c = 0; c < 20; ++c) {
    auto out = ctc_greedy(random_posteriors(rng, 6, 4));
    for (double conf : out.confidences) REQUIRE(conf < 1.0);  // finite logits never reach 1
  }
  // a literal one-hot probability row does
  Tensor post({1, 3}, kLogZero);
  post.at(0, 1) = 0.0;  // log 1
  auto out = ctc_greedy(post);
  REQUIRE(out.tokens == std::vector<int>{1});
  REQUIRE(out.confidences[0] == 1.0);
}

TEST_CASE("ctc_loss uniform closed form") {
  Tensor logits({3, 3}, 0.0);
  const double loss = ctc_loss(log_softmax(logits), {1});
  REQUIRE(loss == Catch::Approx(-std::log(6.0 / 27.0)).margin(1e-9));
}

TEST_CASE("ctc_loss of the empty label is the all-blank path") {
  Rng rng(63);
  Posteriors post = random_posteriors(rng, 5, 3);
  double want = 0.0;
  for (int64_t t = 0; t < 5; ++t) want -= post.at(t, kBlankId);
  REQUIRE(ctc_loss(post, {}) == Catch::Approx(want).margin(1e-12));
}

TEST_CASE("ctc_loss is non-negative and rejects infeasible labels") {
  Rng rng(65);
  for (int c = 0; c < 20; ++c) {
    Posteriors post = random_posteriors(rng, 2 + rng.below(6), 4);
    REQUIRE(ctc_loss(post, {1}) >= 0.0);
  }
  Posteriors post = random_posteriors(rng, 2, 4);
  REQUIRE_THROWS_AS(ctc_loss(post, {1, 2, 3}), InfeasibleError);
  REQUIRE_THROWS_AS(ctc_loss(post, {1, 1}), InfeasibleError);  // needs a separator frame
  REQUIRE_THROWS_AS(ctc_loss(post, {0}), TokenError);          // blank is not a label
}

TEST_CASE("brute force agrees with the forward algorithm") {
  Rng rng(67);
  for (int c = 0; c < 40; ++c) {
    const int64_t t = 1 + rng.below(6);
    Posteriors post = random_posteriors(rng, t, 3);
    std::vector<int> label;
    const int len = static_cast<int>(rng.below(3));
    for (int i = 0; i < len; ++i) label.push_back(1 + static_cast<int>(rng.below(2)));
    if (t < static_cast<int64_t>(label.size()) + detail::duplicate_pairs(label)) continue;
    REQUIRE(std::fabs(ctc_loss(post, label) - ctc_brute_force(post, label)) <= 1e-9);
  }
}

TEST_CASE("brute force guards and infeasibility") {
  Rng rng(69);
  REQUIRE_THROWS_AS(ctc_brute_force(random_posteriors(rng, 30, 4), {1}), OracleLimitError);
  REQUIRE_THROWS_AS(ctc_brute_force(random_posteriors(rng, 2, 3), {1, 2, 1}), InfeasibleError);
}

TEST_CASE("gradient rows sum to zero and match finite differences") {
  Rng rng(71);
  Tensor logits({4, 3});
  for (double& v : logits.raw()) v = rng.uniform(-1.5, 1.5);
  const std::vector<int> label{2, 1};
  Tensor grad = ctc_loss_grad(logits, label);
  const double h = 1e-5;
  for (int64_t t = 0; t < 4; ++t) {
    double row = 0.0;
    for (int64_t j = 0; j < 3; ++j) {
      row += grad.at(t, j);
      Tensor lp = logits;
      lp.at(t, j) += h;
      const double up = ctc_loss(log_softmax(lp), label);
      lp.at(t, j) -= 2 * h;
      const double dn = ctc_loss(log_softmax(lp), label);
      REQUIRE(grad.at(t, j) == Catch::Approx((up - dn) / (2 * h)).margin(1e-6));
    }
    REQUIRE(std::fabs(row) <= 1e-10);
  }
}

TEST_CASE("gradient of the empty label is softmax minus the blank one-hot") {
  Rng rng(72);
  Tensor logits({3, 4});
  for (double& v : logits.raw()) v = rng.uniform(-1.0, 1.0);
  Tensor grad = ctc_loss_grad(logits, {});
  Tensor sm = log_softmax(logits);
  for (int64_t t = 0; t < 3; ++t)
    for (int64_t j = 0; j < 4; ++j) {
      const double want = std::exp(sm.at(t, j)) - (j == kBlankId ? 1.0 : 0.0);
      REQUIRE(grad.at(t, j) == Catch::Approx(want).margin(1e-12));
    }
}

TEST_CASE("score-only probe matches full extension") {
  Rng rng(74);
  Posteriors post = random_posteriors(rng, 5, 4);
  CtcPrefixScorer scorer(post, kSosEosId);
  CtcPrefixScorer::State st = scorer.init();
  for (int tok : {1, 3, 3, 2}) {
    for (int probe = 1; probe < 4; ++probe) {
      REQUIRE(scorer.extend_score(st, probe) == scorer.extend(st, probe).first);
    }
    REQUIRE(scorer.extend_score(st, kSosEosId) == scorer.full_score(st));
    st = scorer.extend(st, tok).second;
  }
  REQUIRE_THROWS_AS(scorer.extend_score(st, kBlankId), TokenError);
}

TEST_CASE("raising a forced label logit lowers the loss") {
  // single frame, label "a": the frame must emit a
  Tensor logits({1, 3}, 0.0);
  Tensor grad = ctc_loss_grad(logits, {1});
  REQUIRE(grad.at(0, 1) < 0.0);
  Tensor up = logits;
  up.at(0, 1) += 1e-4;
  REQUIRE(ctc_loss(log_softmax(up), {1}) < ctc_loss(log_softmax(logits), {1}));
}

TEST_CASE("prefix scorer single-frame case") {
  Tensor logits({1, 3}, 0.0);
  logits.at(0, 1) = std::log(0.9);
  logits.at(0, 0) = std::log(0.05);
  logits.at(0, 2) = std::log(0.05);
  Posteriors post = logits;  // already log probabilities
  CtcPrefixScorer scorer(post, /*eos_id=*/-1);
  auto [score, state] = scorer.extend(scorer.init(), 1);
  REQUIRE(score == Catch::Approx(std::log(0.9)).margin(1e-12));
  REQUIRE(scorer.full_score(state) == Catch::Approx(std::log(0.9)).margin(1e-12));
}

TEST_CASE("prefix scores are monotonically non-increasing") {
  Rng rng(73);
  Posteriors post = random_posteriors(rng, 6, 4);
  CtcPrefixScorer scorer(post, -1);
  CtcPrefixScorer::State st = scorer.init();
  double prev = 0.0;
  for (int tok : {1, 2, 3, 1}) {
    auto [score, ns] = scorer.extend(st, tok);
    REQUIRE(score <= prev + 1e-12);
    prev = score;
    st = std::move(ns);
  }
}

TEST_CASE("prefix scorer rejects blank and eos finalizes") {
  Rng rng(75);
  Posteriors post = random_posteriors(rng, 4, 3);
  CtcPrefixScorer scorer(post, kSosEosId);
  CtcPrefixScorer::State st = scorer.init();
  REQUIRE_THROWS_AS(scorer.extend(st, kBlankId), TokenError);
  st = scorer.extend(st, 1).second;
  auto [full, same] = scorer.extend(st, kSosEosId);
  REQUIRE(full == Catch::Approx(-ctc_loss(post, {1})).margin(1e-9));
  REQUIRE(full == Catch::Approx(scorer.full_score(st)).margin(1e-12));
}

TEST_CASE("full-sequence prefix scores equal negated ctc_loss") {
  Rng rng(77);
  for (int c = 0; c < 25; ++c) {
    const int64_t t = 2 + rng.below(5);
    Posteriors post = random_posteriors(rng, t, 4);
    std::vector<int> label;
    const int len = 1 + static_cast<int>(rng.below(3));
    for (int i = 0; i < len; ++i) label.push_back(1 + static_cast<int>(rng.below(3)));
    if (t < static_cast<int64_t>(label.size()) + detail::duplicate_pairs(label)) continue;
    CtcPrefixScorer scorer(post, -1);
    CtcPrefixScorer::State st = scorer.init();
    for (int tok : label) st = scorer.extend(st, tok).second;
    REQUIRE(scorer.full_score(st) == Catch::Approx(-ctc_loss(post, label)).margin(1e-9));
  }
}

TEST_CASE("prefix completeness on exhaustive instances") {
  for (const auto& check : verify_ctc_suite(91)) {
    if (check.name == "prefix-score completeness") {
      INFO(check.detail);
      REQUIRE(check.pass);
    }
  }
}
