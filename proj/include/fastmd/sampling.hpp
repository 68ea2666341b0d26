#pragma once

#include "fastmd/io_vocab.hpp"
#include "fastmd/model.hpp"

namespace fastmd {

enum class MaskMode { None, Random };

struct SamplingConfig {
  double theta_cer = 0.4;  // may be +infinity to disable thresholding
  MaskMode mask_mode = MaskMode::None;
  uint64_t rng_seed = 0;

  void validate() const {
    if (!(theta_cer >= 0.0)) throw ConfigError("theta_cer must be >= 0");
  }
};

// Minimal edit distance with unit insert/delete/substitute costs.
template <typename Seq>
int64_t levenshtein(const Seq& a, const Seq& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int64_t> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int64_t>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int64_t>(i);
    for (size_t j = 1; j <= m; ++j) {
      const int64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

// Token ids to the character sequence of their detokenization, single spaces
// between tokens.
inline std::string detokenize_chars(const std::vector<int>& tokens, const Vocabulary& vocab) {
  std::string s;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) s.push_back(' ');
    s += vocab.str(tokens[i]);
  }
  return s;
}

// Character error rate of hyp against a non-empty ref, both detokenized with
// inter-word spaces preserved.
inline double cer(const std::vector<int>& hyp, const std::vector<int>& ref, const Vocabulary& vocab) {
  if (ref.empty()) throw ValueError("cer: reference is empty");
  const std::string h = detokenize_chars(hyp, vocab);
  const std::string r = detokenize_chars(ref, vocab);
  return static_cast<double>(levenshtein(h, r)) / static_cast<double>(r.size());
}

// Replaces m uniformly chosen distinct positions with the mask id, where m
// itself is uniform on 1..|tokens|.
inline std::vector<int> random_mask(std::vector<int> tokens, Rng& rng) {
  if (tokens.empty()) return tokens;
  const int64_t n = static_cast<int64_t>(tokens.size());
  const int64_t m = 1 + rng.below(n);
  std::vector<int64_t> pos(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) pos[static_cast<size_t>(i)] = i;
  for (int64_t i = 0; i < m; ++i) {  // partial Fisher-Yates
    const int64_t j = i + rng.below(n - i);
    std::swap(pos[static_cast<size_t>(i)], pos[static_cast<size_t>(j)]);
    tokens[static_cast<size_t>(pos[static_cast<size_t>(i)])] = kMaskId;
  }
  return tokens;
}

// CER-thresholded substitution: keep the sampled hypothesis unless its CER
// against the reference exceeds theta (strict inequality).
inline std::vector<int> apply_cer_threshold(const std::vector<int>& y_hat, const std::vector<int>& y_src,
                                            const Vocabulary& vocab, double theta_cer) {
  return (cer(y_hat, y_src, vocab) > theta_cer) ? y_src : y_hat;
}

// On-the-fly CTC sampling for training-time conditioning: greedy CTC output,
// CER thresholding against y_src, then an optional random mask over the
// selected sequence.
inline std::vector<int> ctc_sample(const MDModel& model, const Tensor& x, const std::vector<int>& y_src,
                                   const Vocabulary& vocab, const SamplingConfig& config, Rng& rng) {
  config.validate();
  if (y_src.empty()) throw ValueError("ctc_sample: y_src is empty");
  EncoderOutputs enc = model.encode_asr(x);
  const CollapsedOutput greedy = ctc_greedy(model.ctc_head(enc.h_asr));
  std::vector<int> selected = apply_cer_threshold(greedy.tokens, y_src, vocab, config.theta_cer);
  if (config.mask_mode == MaskMode::Random) selected = random_mask(std::move(selected), rng);
  return selected;
}

}  // namespace fastmd
