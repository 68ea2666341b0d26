#pragma once

#include "fastmd/decode.hpp"

namespace fastmd {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace detail {

inline Posteriors random_posteriors(Rng& rng, int64_t t, int64_t v, double spread = 2.0) {
  Tensor logits({t, v});
  for (double& x : logits.raw()) x = rng.uniform(-spread, spread);
  return log_softmax(logits);
}

inline std::vector<int> random_feasible_label(Rng& rng, int64_t t, int64_t v, int max_len) {
  while (true) {
    std::vector<int> label;
    const int len = static_cast<int>(rng.below(max_len + 1));
    for (int i = 0; i < len; ++i) label.push_back(1 + static_cast<int>(rng.below(v - 1)));
    if (t >= static_cast<int64_t>(label.size()) + duplicate_pairs(label)) return label;
  }
}

inline MDModelConfig tiny_config(int asr_vocab, int st_vocab, DecoderKind dk = DecoderKind::Autoregressive) {
  MDModelConfig cfg;
  cfg.asr_encoder_layers = 1;
  cfg.asr_decoder_layers = 1;
  cfg.st_encoder_layers = 1;
  cfg.st_decoder_layers = 1;
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

inline Tensor random_features(Rng& rng, int64_t t, int feat_dim) {
  Tensor x({t, feat_dim});
  for (double& v : x.raw()) v = rng.uniform(-1.0, 1.0);
  return x;
}

}  // namespace detail

// CTC forward algorithm against the exhaustive path-enumeration oracle, the
// uniform-posterior closed form and prefix-score completeness.
inline std::vector<CheckResult> verify_ctc_suite(uint64_t seed = 7) {
  std::vector<CheckResult> out;
  Rng rng(seed);

  {
    double max_diff = 0.0;
    int n_ok = 0;
    for (int c = 0; c < 200; ++c) {
      const int64_t t = 1 + rng.below(8);
      const int64_t v = 2 + rng.below(3);
      const Posteriors post = detail::random_posteriors(rng, t, v);
      const std::vector<int> label = detail::random_feasible_label(rng, t, v, 3);
      const double diff = std::fabs(ctc_loss(post, label) - ctc_brute_force(post, label));
      max_diff = std::max(max_diff, diff);
      if (diff <= 1e-9) ++n_ok;
    }
    std::ostringstream os;
    os << n_ok << "/200 within 1e-9, max |diff| = " << max_diff;
    out.push_back({"ctc forward vs brute-force oracle", n_ok == 200, os.str()});
  }

  {
    Tensor logits({3, 3}, 0.0);
    const Posteriors post = log_softmax(logits);
    const double want = -std::log(6.0 / 27.0);
    const double got = ctc_loss(post, {1});
    std::ostringstream os;
    os << "loss = " << got << ", closed form = " << want;
    out.push_back({"uniform-posterior closed form", std::fabs(got - want) <= 1e-9, os.str()});
  }

  {
    bool pass = true;
    std::ostringstream os;
    for (int64_t t = 2; t <= 4 && pass; ++t) {
      const Posteriors post = detail::random_posteriors(rng, t, 3);
      CtcPrefixScorer scorer(post, /*eos_id=*/-1);
      double total = 0.0;
      // all label sequences over {1, 2} up to length t
      std::vector<std::vector<int>> seqs{{}};
      for (int64_t len = 1; len <= t; ++len) {
        std::vector<std::vector<int>> next;
        for (const auto& s : seqs) {
          if (static_cast<int64_t>(s.size()) == len - 1) {
            for (int tok = 1; tok <= 2; ++tok) {
              auto n = s;
              n.push_back(tok);
              next.push_back(n);
            }
          }
        }
        seqs.insert(seqs.end(), next.begin(), next.end());
      }
      for (const auto& s : seqs) {
        CtcPrefixScorer::State st = scorer.init();
        for (int tok : s) st = scorer.extend(st, tok).second;
        const double full = scorer.full_score(st);
        total += std::exp(full);
        const int64_t need = static_cast<int64_t>(s.size()) + detail::duplicate_pairs(s);
        if (need <= t) {
          const double loss = ctc_loss(post, s);
          if (std::fabs(full + loss) > 1e-9) {
            pass = false;
            os << "prefix/full mismatch at T=" << t << ": " << full << " vs " << -loss << "; ";
          }
        }
      }
      if (std::fabs(total - 1.0) > 1e-9) {
        pass = false;
        os << "completeness sum at T=" << t << " is " << total << "; ";
      }
    }
    if (pass) os << "sums to 1 and matches ctc_loss for T' in {2,3,4}";
    out.push_back({"prefix-score completeness", pass, os.str()});
  }

  return out;
}

// Analytic CTC gradient against central finite differences.
inline std::vector<CheckResult> verify_grad_suite(uint64_t seed = 11) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  double max_err = 0.0;
  double max_row_sum = 0.0;
  int n_ok = 0;
  const int cases = 20;
  for (int c = 0; c < cases; ++c) {
    const int64_t t = 6, v = 4;
    Tensor logits({t, v});
    for (double& x : logits.raw()) x = rng.uniform(-2.0, 2.0);
    std::vector<int> label{1 + static_cast<int>(rng.below(v - 1)), 1 + static_cast<int>(rng.below(v - 1))};
    const Tensor grad = ctc_loss_grad(logits, label);
    double err = 0.0;
    const double h = 1e-5;
    for (int64_t i = 0; i < t; ++i) {
      double row_sum = 0.0;
      for (int64_t j = 0; j < v; ++j) {
        Tensor lp = logits;
        lp.at(i, j) += h;
        const double up = ctc_loss(log_softmax(lp), label);
        lp.at(i, j) -= 2 * h;
        const double dn = ctc_loss(log_softmax(lp), label);
        err = std::max(err, std::fabs(grad.at(i, j) - (up - dn) / (2 * h)));
        row_sum += grad.at(i, j);
      }
      max_row_sum = std::max(max_row_sum, std::fabs(row_sum));
    }
    max_err = std::max(max_err, err);
    if (err <= 1e-5) ++n_ok;
  }
  std::ostringstream os;
  os << n_ok << "/" << cases << " within 1e-5, max |grad err| = " << max_err << ", max |row sum| = " << max_row_sum;
  out.push_back({"ctc gradient vs finite differences", n_ok == cases && max_row_sum <= 1e-10, os.str()});
  return out;
}

// Beam width 1 without CTC/LM fusion must reproduce stepwise greedy AR
// decoding token for token.
inline std::vector<CheckResult> verify_beam_suite(uint64_t seed = 13, int cases = 50) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  int n_ok = 0;
  std::string first_fail;
  for (int c = 0; c < cases; ++c) {
    const int v_asr = 6 + static_cast<int>(rng.below(5));
    const int v_st = 6 + static_cast<int>(rng.below(5));
    MDModel model = MDModel::random_init(detail::tiny_config(v_asr, v_st), rng.next_u64());
    const Tensor x = detail::random_features(rng, 8 + rng.below(13), model.cfg.feat_dim);

    DecodeConfig config;
    config.mode = DecodeMode::Slow;
    config.b_asr = 1;
    config.ctc_weight = 0.0;
    config.lm_weight = 0.0;
    DecodeResult res = decode(model, x, config);

    EncoderOutputs enc = model.encode_asr(x);
    const std::vector<int> greedy =
        greedy_asr_decode(model, enc.h_asr, decode_max_len(config.max_len_ratio, enc.h_asr.rows()));
    if (res.transcript == greedy) {
      ++n_ok;
    } else if (first_fail.empty()) {
      first_fail = "case " + std::to_string(c);
    }
  }
  std::ostringstream os;
  os << n_ok << "/" << cases << " transcripts identical to greedy";
  if (!first_fail.empty()) os << " (first mismatch: " << first_fail << ")";
  out.push_back({"beam-1 / greedy equivalence", n_ok == cases, os.str()});
  return out;
}

inline std::vector<CheckResult> verify_all(uint64_t seed_base = 0) {
  std::vector<CheckResult> out;
  for (auto& c : verify_ctc_suite(7 + seed_base)) out.push_back(std::move(c));
  for (auto& c : verify_grad_suite(11 + seed_base)) out.push_back(std::move(c));
  for (auto& c : verify_beam_suite(13 + seed_base)) out.push_back(std::move(c));
  return out;
}

}  // namespace fastmd
