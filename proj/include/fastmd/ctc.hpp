#pragma once

#include "fastmd/tensor.hpp"

namespace fastmd {

// Frame-level log posteriors [T x V] with the blank symbol at kBlankId.
using Posteriors = Tensor;

struct CollapsedOutput {
  std::vector<int> tokens;                          // non-blank ids, repeats collapsed
  std::vector<double> confidences;                  // max frame probability within each run
  std::vector<std::pair<int64_t, int64_t>> frame_spans;  // [start, end) per token
};

// Frame-wise argmax, collapse repeats, delete blanks. Ties go to the lowest
// id. Confidence of a collapsed token is the peak frame probability of its
// run.
inline CollapsedOutput ctc_greedy(const Posteriors& post) {
  if (post.rank() != 2 || post.rows() < 1) throw ShapeError("ctc_greedy expects [T x V] with T >= 1");
  const int64_t t_len = post.rows(), v = post.cols();
  CollapsedOutput out;
  int cur = kBlankId;
  for (int64_t t = 0; t < t_len; ++t) {
    const double* row = post.row(t);
    int64_t best = 0;
    for (int64_t j = 1; j < v; ++j)
      if (row[j] > row[best]) best = j;
    const double p = std::exp(row[best]);
    if (best == kBlankId) {
      cur = kBlankId;
      continue;
    }
    if (static_cast<int>(best) == cur) {
      out.confidences.back() = std::max(out.confidences.back(), p);
      out.frame_spans.back().second = t + 1;
    } else {
      out.tokens.push_back(static_cast<int>(best));
      out.confidences.push_back(p);
      out.frame_spans.emplace_back(t, t + 1);
      cur = static_cast<int>(best);
    }
  }
  return out;
}

namespace detail {

// Blank-augmented label sequence: blank, l1, blank, l2, ..., blank.
inline std::vector<int> augment_labels(const std::vector<int>& labels, int64_t v) {
  std::vector<int> aug;
  aug.reserve(labels.size() * 2 + 1);
  aug.push_back(kBlankId);
  for (int l : labels) {
    if (l == kBlankId) throw TokenError("ctc labels must not contain the blank id");
    if (l < 0 || l >= v) throw TokenError("ctc label id out of range");
    aug.push_back(l);
    aug.push_back(kBlankId);
  }
  return aug;
}

inline int64_t duplicate_pairs(const std::vector<int>& labels) {
  int64_t dup = 0;
  for (size_t i = 1; i < labels.size(); ++i)
    if (labels[i] == labels[i - 1]) ++dup;
  return dup;
}

inline void check_feasible(int64_t t_len, const std::vector<int>& labels) {
  const int64_t need = static_cast<int64_t>(labels.size()) + duplicate_pairs(labels);
  if (t_len < need) {
    throw InfeasibleError("ctc alignment infeasible: " + std::to_string(t_len) + " frames for " +
                          std::to_string(labels.size()) + " labels (+" +
                          std::to_string(duplicate_pairs(labels)) + " separators)");
  }
}

// Log-space forward variables over the augmented lattice. alpha[t][s]
// includes the emission at frame t.
inline std::vector<std::vector<double>> ctc_forward(const Posteriors& lp, const std::vector<int>& aug) {
  const int64_t t_len = lp.rows();
  const int64_t s_len = static_cast<int64_t>(aug.size());
  std::vector<std::vector<double>> alpha(static_cast<size_t>(t_len),
                                         std::vector<double>(static_cast<size_t>(s_len), kLogZero));
  alpha[0][0] = lp.at(0, aug[0]);
  if (s_len > 1) alpha[0][1] = lp.at(0, aug[1]);
  for (int64_t t = 1; t < t_len; ++t) {
    for (int64_t s = 0; s < s_len; ++s) {
      double acc = alpha[t - 1][s];
      if (s >= 1) acc = log_add(acc, alpha[t - 1][s - 1]);
      if (s >= 2 && aug[s] != kBlankId && aug[s] != aug[s - 2]) acc = log_add(acc, alpha[t - 1][s - 2]);
      alpha[t][s] = acc + lp.at(t, aug[s]);
    }
  }
  return alpha;
}

// Backward variables; beta[t][s] covers emissions from t+1 on.
inline std::vector<std::vector<double>> ctc_backward(const Posteriors& lp, const std::vector<int>& aug) {
  const int64_t t_len = lp.rows();
  const int64_t s_len = static_cast<int64_t>(aug.size());
  std::vector<std::vector<double>> beta(static_cast<size_t>(t_len),
                                        std::vector<double>(static_cast<size_t>(s_len), kLogZero));
  beta[t_len - 1][s_len - 1] = 0.0;
  if (s_len > 1) beta[t_len - 1][s_len - 2] = 0.0;
  for (int64_t t = t_len - 2; t >= 0; --t) {
    for (int64_t s = s_len - 1; s >= 0; --s) {
      double acc = beta[t + 1][s] + lp.at(t + 1, aug[s]);
      if (s + 1 < s_len) acc = log_add(acc, beta[t + 1][s + 1] + lp.at(t + 1, aug[s + 1]));
      if (s + 2 < s_len && aug[s + 2] != kBlankId && aug[s + 2] != aug[s])
        acc = log_add(acc, beta[t + 1][s + 2] + lp.at(t + 1, aug[s + 2]));
      beta[t][s] = acc;
    }
  }
  return beta;
}

}  // namespace detail

// Negative log probability of labels under the CTC alignment model, summed
// over all blank-augmented paths by the forward algorithm in log space.
inline double ctc_loss(const Posteriors& post, const std::vector<int>& labels) {
  if (post.rank() != 2 || post.rows() < 1) throw ShapeError("ctc_loss expects [T x V]");
  detail::check_feasible(post.rows(), labels);
  const std::vector<int> aug = detail::augment_labels(labels, post.cols());
  const auto alpha = detail::ctc_forward(post, aug);
  const int64_t t_last = post.rows() - 1;
  const int64_t s_len = static_cast<int64_t>(aug.size());
  double total = alpha[t_last][s_len - 1];
  if (s_len > 1) total = log_add(total, alpha[t_last][s_len - 2]);
  if (total <= kLogZero * 0.5) throw InfeasibleError("ctc alignment has zero probability");
  return -total;
}

// Gradient of ctc_loss with respect to raw logits [T x V], via
// forward-backward occupancies: d/dlogit = softmax - occupancy.
inline Tensor ctc_loss_grad(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.rows() < 1) throw ShapeError("ctc_loss_grad expects [T x V]");
  detail::check_feasible(logits.rows(), labels);
  const Posteriors lp = log_softmax(logits);
  const std::vector<int> aug = detail::augment_labels(labels, lp.cols());
  const auto alpha = detail::ctc_forward(lp, aug);
  const auto beta = detail::ctc_backward(lp, aug);
  const int64_t t_len = lp.rows(), v = lp.cols();
  const int64_t s_len = static_cast<int64_t>(aug.size());
  double log_p = alpha[t_len - 1][s_len - 1];
  if (s_len > 1) log_p = log_add(log_p, alpha[t_len - 1][s_len - 2]);
  if (log_p <= kLogZero * 0.5) throw InfeasibleError("ctc alignment has zero probability");
  Tensor grad({t_len, v});
  std::vector<double> occ(static_cast<size_t>(v));
  for (int64_t t = 0; t < t_len; ++t) {
    std::fill(occ.begin(), occ.end(), kLogZero);
    for (int64_t s = 0; s < s_len; ++s) {
      occ[static_cast<size_t>(aug[s])] = log_add(occ[static_cast<size_t>(aug[s])], alpha[t][s] + beta[t][s]);
    }
    double* g = grad.row(t);
    const double* row = lp.row(t);
    for (int64_t j = 0; j < v; ++j) {
      const double o = occ[static_cast<size_t>(j)];
      g[j] = std::exp(row[j]) - (o <= kLogZero * 0.5 ? 0.0 : std::exp(o - log_p));
    }
  }
  return grad;
}

// Exhaustive enumeration oracle: sums the probability of every frame path
// that collapses to labels. Guarded to V^T <= 10^7 states.
inline double ctc_brute_force(const Posteriors& post, const std::vector<int>& labels) {
  if (post.rank() != 2 || post.rows() < 1) throw ShapeError("ctc_brute_force expects [T x V]");
  const int64_t t_len = post.rows(), v = post.cols();
  double paths = 1.0;
  for (int64_t t = 0; t < t_len; ++t) {
    paths *= static_cast<double>(v);
    if (paths > 1e7) throw OracleLimitError("ctc_brute_force guard exceeded (V^T > 1e7)");
  }
  for (int l : labels) {
    if (l == kBlankId) throw TokenError("ctc labels must not contain the blank id");
    if (l < 0 || l >= v) throw TokenError("ctc label id out of range");
  }
  std::vector<int> path(static_cast<size_t>(t_len), 0);
  std::vector<int> collapsed;
  double total = kLogZero;
  while (true) {
    collapsed.clear();
    int prev = -1;
    for (int64_t t = 0; t < t_len; ++t) {
      const int s = path[static_cast<size_t>(t)];
      if (s != prev && s != kBlankId) collapsed.push_back(s);
      prev = s;
    }
    if (collapsed == labels) {
      double lp = 0.0;
      for (int64_t t = 0; t < t_len; ++t) lp += post.at(t, path[static_cast<size_t>(t)]);
      total = log_add(total, lp);
    }
    int64_t pos = t_len - 1;
    while (pos >= 0) {
      if (++path[static_cast<size_t>(pos)] < v) break;
      path[static_cast<size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
  if (total <= kLogZero * 0.5) throw InfeasibleError("ctc_brute_force: labels have zero probability");
  return -total;
}

// Label-synchronous CTC prefix scorer. Maintains, per hypothesis prefix, the
// log probabilities of producing the prefix with the last symbol ending in a
// non-blank (ln) or blank (lb) at each frame. extend() returns the prefix
// probability log P(prefix-so-far is a prefix of the CTC output);
// full_score() is the probability of the prefix as the complete output.
class CtcPrefixScorer {
 public:
  struct State {
    std::vector<double> ln, lb;  // indexed 0..T, frame t means "after t frames"
    double score = 0.0;          // running prefix log probability
    int last = -1;
  };

  explicit CtcPrefixScorer(Posteriors post, int eos_id = kSosEosId)
      : post_(std::move(post)), eos_id_(eos_id) {
    if (post_.rank() != 2 || post_.rows() < 1) throw ShapeError("prefix scorer expects [T x V]");
    t_len_ = post_.rows();
    v_ = post_.cols();
  }

  int eos_id() const { return eos_id_; }
  int64_t vocab_size() const { return v_; }

  State init() const {
    State s;
    s.ln.assign(static_cast<size_t>(t_len_) + 1, kLogZero);
    s.lb.assign(static_cast<size_t>(t_len_) + 1, kLogZero);
    s.lb[0] = 0.0;
    for (int64_t t = 1; t <= t_len_; ++t) s.lb[static_cast<size_t>(t)] = s.lb[static_cast<size_t>(t - 1)] + post_.at(t - 1, kBlankId);
    s.score = 0.0;  // the empty prefix is a prefix of everything
    return s;
  }

  // Prefix probability of extending with one token, without materializing
  // the successor state. Accumulates in the same frame order as extend(), so
  // both routes yield bit-identical scores.
  double extend_score(const State& s, int token) const {
    if (token == kBlankId) throw TokenError("ctc prefix scorer: blank is not a valid extension");
    if (token == eos_id_) return full_score(s);
    if (token < 0 || token >= v_) throw TokenError("ctc prefix scorer: token id out of range");
    double psi = kLogZero;
    for (int64_t t = 1; t <= t_len_; ++t) {
      double phi = s.lb[static_cast<size_t>(t - 1)];
      if (token != s.last) phi = log_add(phi, s.ln[static_cast<size_t>(t - 1)]);
      psi = log_add(psi, phi + post_.at(t - 1, token));
    }
    return psi;
  }

  // Extending with eos yields the full-sequence log probability of the
  // current prefix; any other non-blank token advances the prefix.
  std::pair<double, State> extend(const State& s, int token) const {
    if (token == kBlankId) throw TokenError("ctc prefix scorer: blank is not a valid extension");
    if (token == eos_id_) return {full_score(s), s};
    if (token < 0 || token >= v_) throw TokenError("ctc prefix scorer: token id out of range");
    State ns;
    ns.ln.assign(static_cast<size_t>(t_len_) + 1, kLogZero);
    ns.lb.assign(static_cast<size_t>(t_len_) + 1, kLogZero);
    ns.last = token;
    double psi = kLogZero;
    for (int64_t t = 1; t <= t_len_; ++t) {
      // Paths where this token is first emitted at frame t: the previous
      // prefix ended before t, with a blank in between if the token repeats.
      double phi = s.lb[static_cast<size_t>(t - 1)];
      if (token != s.last) phi = log_add(phi, s.ln[static_cast<size_t>(t - 1)]);
      const double p_tok = post_.at(t - 1, token);
      ns.ln[static_cast<size_t>(t)] = log_add(ns.ln[static_cast<size_t>(t - 1)], phi) + p_tok;
      ns.lb[static_cast<size_t>(t)] =
          log_add(ns.lb[static_cast<size_t>(t - 1)], ns.ln[static_cast<size_t>(t - 1)]) + post_.at(t - 1, kBlankId);
      psi = log_add(psi, phi + p_tok);
    }
    ns.score = psi;
    return {psi, ns};
  }

  double full_score(const State& s) const {
    return log_add(s.ln[static_cast<size_t>(t_len_)], s.lb[static_cast<size_t>(t_len_)]);
  }

 private:
  Posteriors post_;
  int eos_id_;
  int64_t t_len_ = 0;
  int64_t v_ = 0;
};

}  // namespace fastmd
