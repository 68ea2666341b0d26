#pragma once

#include <catch2/catch_amalgamated.hpp>

#include "fastmd/fastmd.hpp"

namespace testing {

inline bool bit_equal(const fastmd::Tensor& a, const fastmd::Tensor& b) {
  return a.dims() == b.dims() && a.raw() == b.raw();
}

inline double max_abs_diff(const fastmd::Tensor& a, const fastmd::Tensor& b) {
  REQUIRE(a.dims() == b.dims());
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  return m;
}

inline fastmd::Tensor random_tensor(fastmd::Rng& rng, std::vector<int64_t> dims, double lo = -1.0,
                                    double hi = 1.0) {
  fastmd::Tensor t(std::move(dims));
  for (double& v : t.raw()) v = rng.uniform(lo, hi);
  return t;
}

// Small model configuration for fast tests.
inline fastmd::MDModelConfig tiny_config(int asr_vocab = 8, int st_vocab = 8,
                                         fastmd::DecoderKind dk = fastmd::DecoderKind::Autoregressive) {
  fastmd::MDModelConfig cfg;
  cfg.asr_encoder_layers = 1;
  cfg.asr_decoder_layers = 2;
  cfg.st_encoder_layers = 1;
  cfg.st_decoder_layers = 2;
  cfg.d_model = 16;
  cfg.d_ff = 32;
  cfg.heads = 2;
  cfg.interctc_layers = {};
  cfg.asr_vocab_size = asr_vocab;
  cfg.st_vocab_size = st_vocab;
  cfg.decoder_kind = dk;
  cfg.feat_dim = 8;
  return cfg;
}

inline fastmd::Tensor random_features(fastmd::Rng& rng, int64_t t, int feat_dim) {
  return random_tensor(rng, {t, feat_dim});
}

// Log posteriors from random logits.
inline fastmd::Tensor random_posteriors(fastmd::Rng& rng, int64_t t, int64_t v, double spread = 2.0) {
  return fastmd::log_softmax(random_tensor(rng, {t, v}, -spread, spread));
}

// Posteriors whose greedy collapse is exactly `tokens`: one high-confidence
// frame per token, blank-separated.
inline fastmd::Tensor posteriors_for_tokens(const std::vector<int>& tokens, int64_t v, double peak = 8.0) {
  const int64_t t = static_cast<int64_t>(tokens.size()) * 2 + 1;
  fastmd::Tensor logits({t, v}, 0.0);
  for (int64_t i = 0; i < t; ++i) {
    if (i % 2 == 0) {
      logits.at(i, fastmd::kBlankId) = peak;
    } else {
      logits.at(i, tokens[static_cast<size_t>((i - 1) / 2)]) = peak;
    }
  }
  return fastmd::log_softmax(logits);
}

}  // namespace testing
