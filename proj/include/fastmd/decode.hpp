#pragma once

#include <optional>
#include <unordered_map>

#include "fastmd/model.hpp"

namespace fastmd {

// Add-one-smoothed n-gram LM with context-level backoff: a context that was
// never observed falls back to the next shorter one, so every conditional
// distribution stays normalized.
class NgramLm {
 public:
  using State = std::vector<int>;  // most recent tokens, capped at order-1

  static NgramLm fit(const std::vector<std::vector<int>>& corpus, int order, int vocab_size) {
    if (order < 1) throw ValueError("ngram order must be >= 1");
    if (vocab_size < 1) throw ValueError("ngram vocab size must be >= 1");
    if (corpus.empty()) throw ValueError("ngram fit: empty corpus");
    NgramLm lm;
    lm.order_ = order;
    lm.vocab_size_ = vocab_size;
    lm.tables_.resize(static_cast<size_t>(order));
    for (const auto& seq : corpus) {
      std::vector<int> hist{kSosEosId};
      for (size_t i = 0; i <= seq.size(); ++i) {
        const int w = (i < seq.size()) ? seq[i] : kSosEosId;  // eos-terminated
        for (int k = 0; k < order; ++k) {
          if (static_cast<int>(hist.size()) < k) break;
          auto& ctx = lm.tables_[static_cast<size_t>(k)][key_of(hist, k)];
          ++ctx.total;
          ++ctx.cnt[w];
        }
        hist.push_back(w);
      }
    }
    return lm;
  }

  int order() const { return order_; }
  int vocab_size() const { return vocab_size_; }

  State init_state() const { return {kSosEosId}; }

  double score_only(const State& st, int token) const {
    const int kmax = std::min<int>(static_cast<int>(st.size()), order_ - 1);
    for (int k = kmax; k >= 0; --k) {
      auto it = tables_[static_cast<size_t>(k)].find(key_of(st, k));
      if (it == tables_[static_cast<size_t>(k)].end() || it->second.total == 0) continue;
      const auto& ctx = it->second;
      auto c = ctx.cnt.find(token);
      const double num = 1.0 + (c == ctx.cnt.end() ? 0.0 : static_cast<double>(c->second));
      return std::log(num / (static_cast<double>(ctx.total) + static_cast<double>(vocab_size_)));
    }
    return -std::log(static_cast<double>(vocab_size_));  // not reachable after fit
  }

  std::pair<double, State> score(const State& st, int token) const {
    const double lp = score_only(st, token);
    State ns = st;
    ns.push_back(token);
    const size_t keep = static_cast<size_t>(order_ > 0 ? order_ - 1 : 0);
    if (ns.size() > keep) ns.erase(ns.begin(), ns.end() - static_cast<long>(keep));
    return {lp, ns};
  }

 private:
  struct Ctx {
    int64_t total = 0;
    std::unordered_map<int, int64_t> cnt;
  };

  // Fixed-width byte encoding of the last k tokens.
  static std::string key_of(const std::vector<int>& hist, int k) {
    std::string s;
    s.reserve(static_cast<size_t>(k) * 4);
    for (size_t i = hist.size() - static_cast<size_t>(k); i < hist.size(); ++i) {
      uint32_t u = static_cast<uint32_t>(hist[i]);
      for (int b = 0; b < 4; ++b) s.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
    }
    return s;
  }

  int order_ = 1;
  int vocab_size_ = 1;
  std::vector<std::unordered_map<std::string, Ctx>> tables_;
};

enum class DecodeMode { Slow, FastParallel, FastMasked };

inline const char* decode_mode_name(DecodeMode m) {
  switch (m) {
    case DecodeMode::Slow: return "slow";
    case DecodeMode::FastParallel: return "fast_parallel";
    case DecodeMode::FastMasked: return "fast_masked";
  }
  return "?";
}

inline DecodeMode parse_decode_mode(const std::string& s) {
  if (s == "slow") return DecodeMode::Slow;
  if (s == "fast_parallel") return DecodeMode::FastParallel;
  if (s == "fast_masked") return DecodeMode::FastMasked;
  throw ValueError("unknown decode mode '" + s + "' (expected slow, fast_parallel or fast_masked)");
}

struct DecodeConfig {
  DecodeMode mode = DecodeMode::Slow;
  int b_asr = 16;
  int b_st = 4;
  int k_mask = 1;
  double p_thres = 0.9;
  double ctc_weight = 0.3;  // fusion weight on CTC prefix scores
  double lm_weight = 0.0;   // fusion weight on LM scores
  double max_len_ratio = 1.0;

  void validate() const {
    if (b_asr < 1 || b_st < 1) throw ConfigError("beam widths must be >= 1");
    if (k_mask < 1) throw ConfigError("k_mask must be >= 1");
    if (p_thres < 0.0 || p_thres > 1.0) throw ConfigError("p_thres must lie in [0, 1]");
    if (ctc_weight < 0.0 || ctc_weight > 1.0) throw ConfigError("ctc_weight must lie in [0, 1]");
    if (lm_weight < 0.0) throw ConfigError("lm_weight must be >= 0");
    if (max_len_ratio <= 0.0) throw ConfigError("max_len_ratio must be > 0");
  }
};

struct DecodeTimings {
  double encode_s = 0.0;
  double asr_stage_s = 0.0;
  double st_stage_s = 0.0;
  double total_s = 0.0;
};

struct DecodeResult {
  std::vector<int> transcript;
  std::vector<int> translation;
  HiddenIntermediates hi;
  DecodeCounters counters;
  DecodeTimings timings;
};

struct Hypothesis {
  std::vector<int> tokens;  // trailing eos when finished
  double log_score = 0.0;
  AsrSession cache;
  CtcPrefixScorer::State ctc_state;
  NgramLm::State lm_state;
  bool finished = false;
};

// Blank never leaves the CTC layer and mask belongs to the CMLM input side;
// neither is a legal beam or greedy expansion.
inline bool asr_candidate_allowed(int tok) { return tok != kBlankId && tok != kMaskId; }

inline std::vector<int> strip_trailing_eos(std::vector<int> tokens) {
  if (!tokens.empty() && tokens.back() == kSosEosId) tokens.pop_back();
  return tokens;
}

inline int64_t decode_max_len(double ratio, int64_t t_prime) {
  return std::max<int64_t>(1, static_cast<int64_t>(std::llround(ratio * static_cast<double>(t_prime))));
}

namespace detail {

struct Cand {
  int parent;
  int tok;
  double total;
};

inline void sort_candidates(std::vector<Cand>& cands) {
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.total != b.total) return a.total > b.total;
    if (a.parent != b.parent) return a.parent < b.parent;
    return a.tok < b.tok;
  });
}

}  // namespace detail

struct AsrBeamResult {
  Hypothesis best;
  HiddenIntermediates hi;
};

// Length-synchronous ASR beam search with per-step fused score
//   (1 - g_ctc) * attention + g_ctc * ctc-prefix increment + g_lm * lm.
// Each step evaluates all live hypotheses in one batched decoder call. The
// hidden intermediates of the 1-best transcript are rebuilt with a single
// teacher-forced pass.
inline AsrBeamResult asr_beam_search(const MDModel& model, const Tensor& h_asr, const Posteriors& post,
                                     const DecodeConfig& config, const NgramLm* lm = nullptr,
                                     DecodeCounters* ctr = nullptr) {
  config.validate();
  const int64_t v = model.cfg.asr_vocab_size;
  const int64_t max_len = decode_max_len(config.max_len_ratio, h_asr.rows());
  const double g_ctc = config.ctc_weight;
  const double g_lm = (lm != nullptr) ? config.lm_weight : 0.0;
  const bool use_ctc = g_ctc > 0.0;
  const bool use_lm = g_lm > 0.0;

  std::optional<CtcPrefixScorer> scorer;
  if (use_ctc) scorer.emplace(post, kSosEosId);

  struct Item {
    std::vector<int> tokens;
    double score = 0.0;
    AsrSession sess;
    CtcPrefixScorer::State cs;
    NgramLm::State ls;
    std::vector<double> pending;  // attention log-probs for the next position
  };

  std::vector<Item> active(1);
  active[0].sess = model.make_asr_session(h_asr, max_len + 2);
  if (use_ctc) active[0].cs = scorer->init();
  if (use_lm) active[0].ls = lm->init_state();
  {
    std::vector<AsrSession*> sess{&active[0].sess};
    StepOut so = model.asr_step_batch(sess, {kSosEosId}, ctr);
    active[0].pending.assign(so.log_probs.row(0), so.log_probs.row(0) + v);
  }

  struct Finished {
    std::vector<int> tokens;
    double score;
    AsrSession sess;
    CtcPrefixScorer::State cs;
    NgramLm::State ls;
  };
  std::vector<Finished> finished;

  for (int64_t step = 0; step < max_len && !active.empty(); ++step) {
    std::vector<detail::Cand> cands;
    cands.reserve(active.size() * static_cast<size_t>(v));
    for (size_t p = 0; p < active.size(); ++p) {
      const Item& it = active[p];
      for (int tok = 0; tok < v; ++tok) {
        if (!asr_candidate_allowed(tok)) continue;
        double inc = (1.0 - g_ctc) * it.pending[static_cast<size_t>(tok)];
        if (use_ctc) inc += g_ctc * (scorer->extend_score(it.cs, tok) - it.cs.score);
        if (use_lm) inc += g_lm * lm->score_only(it.ls, tok);
        cands.push_back({static_cast<int>(p), tok, it.score + inc});
      }
    }
    detail::sort_candidates(cands);
    const size_t keep = std::min<size_t>(static_cast<size_t>(config.b_asr), cands.size());

    std::vector<int> child_count(active.size(), 0);
    for (size_t c = 0; c < keep; ++c) {
      if (cands[c].tok != kSosEosId) ++child_count[static_cast<size_t>(cands[c].parent)];
    }

    std::vector<Item> next;
    std::vector<int> next_tokens;
    for (size_t c = 0; c < keep; ++c) {
      const auto& cand = cands[c];
      Item& parent = active[static_cast<size_t>(cand.parent)];
      if (cand.tok == kSosEosId) {
        Finished f;
        f.tokens = parent.tokens;
        f.tokens.push_back(kSosEosId);
        f.score = cand.total;
        f.sess = parent.sess;
        f.cs = parent.cs;
        f.ls = parent.ls;
        finished.push_back(std::move(f));
        continue;
      }
      Item child;
      child.tokens = parent.tokens;
      child.tokens.push_back(cand.tok);
      child.score = cand.total;
      if (--child_count[static_cast<size_t>(cand.parent)] == 0) {
        child.sess = std::move(parent.sess);
      } else {
        child.sess = parent.sess;
      }
      if (use_ctc) child.cs = scorer->extend(parent.cs, cand.tok).second;
      if (use_lm) child.ls = lm->score(parent.ls, cand.tok).second;
      next.push_back(std::move(child));
      next_tokens.push_back(cand.tok);
    }
    active = std::move(next);
    if (active.empty()) break;

    std::vector<AsrSession*> sess;
    sess.reserve(active.size());
    for (auto& it : active) sess.push_back(&it.sess);
    StepOut so = model.asr_step_batch(sess, next_tokens, ctr);
    for (size_t i = 0; i < active.size(); ++i) {
      active[i].pending.assign(so.log_probs.row(static_cast<int64_t>(i)),
                               so.log_probs.row(static_cast<int64_t>(i)) + v);
    }
  }

  Hypothesis best;
  if (!finished.empty()) {
    size_t bi = 0;
    for (size_t i = 1; i < finished.size(); ++i)
      if (finished[i].score > finished[bi].score) bi = i;
    best.tokens = std::move(finished[bi].tokens);
    best.log_score = finished[bi].score;
    best.cache = std::move(finished[bi].sess);
    best.ctc_state = std::move(finished[bi].cs);
    best.lm_state = std::move(finished[bi].ls);
    best.finished = true;
  } else {
    size_t bi = 0;
    for (size_t i = 1; i < active.size(); ++i)
      if (active[i].score > active[bi].score) bi = i;
    best.tokens = std::move(active[bi].tokens);
    best.log_score = active[bi].score;
    best.cache = std::move(active[bi].sess);
    best.ctc_state = std::move(active[bi].cs);
    best.lm_state = std::move(active[bi].ls);
    best.finished = false;
  }

  AsrBeamResult res;
  res.hi = model.decode_asr_teacher_forced(h_asr, strip_trailing_eos(best.tokens), ctr);
  res.hi.source = HiSource::Beam;
  res.best = std::move(best);
  return res;
}

// Greedy AR decoding by repeated single steps; the reference the beam search
// must match at width 1 without fusion.
inline std::vector<int> greedy_asr_decode(const MDModel& model, const Tensor& h_asr, int64_t max_len,
                                          DecodeCounters* ctr = nullptr) {
  AsrSession sess = model.make_asr_session(h_asr, max_len + 2);
  StepOut so = model.asr_step(sess, kSosEosId, ctr);
  std::vector<int> out;
  const int64_t v = model.cfg.asr_vocab_size;
  while (static_cast<int64_t>(out.size()) < max_len) {
    const double* lp = so.log_probs.row(0);
    int best = -1;
    for (int tok = 0; tok < v; ++tok) {
      if (!asr_candidate_allowed(tok)) continue;
      if (best < 0 || lp[tok] > lp[best]) best = tok;
    }
    if (best == kSosEosId) break;
    out.push_back(best);
    so = model.asr_step(sess, best, ctr);
  }
  return out;
}

struct ParallelHiResult {
  HiddenIntermediates hi;
  std::vector<int> transcript;
};

// Fast-MD parallel HI: greedy CTC output, one teacher-forced decoder pass.
// Mask ids that a weak CTC head might emit are conditioned as unk since the
// AR decoder rejects them; the reported transcript stays verbatim.
inline ParallelHiResult fastmd_parallel_hi(const MDModel& model, const Tensor& h_asr, const Posteriors& post,
                                           DecodeCounters* ctr = nullptr) {
  CollapsedOutput c = ctc_greedy(post);
  std::vector<int> cond = c.tokens;
  for (int& t : cond)
    if (t == kMaskId) t = kUnkId;
  ParallelHiResult res;
  res.hi = model.decode_asr_teacher_forced(h_asr, cond, ctr);
  res.transcript = std::move(c.tokens);
  return res;
}

struct MaskedHiTrace {
  std::vector<int64_t> fills_per_iteration;
  std::vector<size_t> initial_masked_positions;
};

struct MaskedHiResult {
  HiddenIntermediates hi;
  std::vector<int> transcript;
};

// Fast-MD masked HI: confidence-mask the greedy CTC output, then k_mask CMLM
// refinement passes, each filling ceil(remaining / iterations-left) of the
// most confident predictions. HI come from the final pass, whose input may
// still contain mask ids.
inline MaskedHiResult fastmd_masked_hi(const MDModel& model, const Tensor& h_asr, const Posteriors& post,
                                       int k_mask, double p_thres, DecodeCounters* ctr = nullptr,
                                       MaskedHiTrace* trace = nullptr) {
  if (model.cfg.decoder_kind != DecoderKind::Cmlm) {
    throw ConfigError("fast_masked decoding requires a cmlm decoder");
  }
  if (k_mask < 1) throw ConfigError("k_mask must be >= 1");
  CollapsedOutput c = ctc_greedy(post);
  std::vector<int> ids = c.tokens;
  if (ids.empty()) {
    ids.push_back(kMaskId);  // no CTC output: condition on a single mask
  } else {
    for (size_t i = 0; i < ids.size(); ++i) {
      if (c.confidences[i] < p_thres) ids[i] = kMaskId;
    }
  }
  if (trace) {
    for (size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == kMaskId) trace->initial_masked_positions.push_back(i);
  }

  const int64_t v = model.cfg.asr_vocab_size;
  MaskedHiResult res;
  for (int it = 1; it <= k_mask; ++it) {
    auto [hi, lp] = model.cmlm_forward(h_asr, ids, ctr);
    res.hi = std::move(hi);

    std::vector<size_t> masked;
    for (size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == kMaskId) masked.push_back(i);
    const int64_t iters_left = k_mask - it + 1;
    const int64_t n_fill =
        masked.empty() ? 0 : (static_cast<int64_t>(masked.size()) + iters_left - 1) / iters_left;

    // Most confident CMLM predictions first. Prediction per position is the
    // argmax over real tokens (blank and mask are not emittable).
    std::vector<std::pair<double, size_t>> ranked;
    std::vector<int> pred(ids.size(), kUnkId);
    for (size_t pos : masked) {
      const double* row = lp.row(static_cast<int64_t>(pos));
      int best = -1;
      for (int tok = 0; tok < v; ++tok) {
        if (tok == kBlankId || tok == kMaskId) continue;
        if (best < 0 || row[tok] > row[best]) best = tok;
      }
      pred[pos] = best;
      ranked.emplace_back(row[best], pos);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    const int64_t actually = std::min<int64_t>(n_fill, static_cast<int64_t>(ranked.size()));
    for (int64_t i = 0; i < actually; ++i) ids[ranked[static_cast<size_t>(i)].second] = pred[ranked[static_cast<size_t>(i)].second];
    if (trace) trace->fills_per_iteration.push_back(actually);
  }

  res.transcript.reserve(ids.size());
  for (int t : ids)
    if (t != kMaskId) res.transcript.push_back(t);  // residual masks dropped (cannot occur with the ceiling schedule)
  return res;
}

// Length-synchronous beam search over the dual-attention ST decoder.
// Selection during search uses raw scores; the returned hypothesis is the
// best finished one under length normalization (best unfinished if nothing
// reached eos).
inline std::vector<int> st_beam_search(const MDModel& model, const Tensor& h_asr, const Tensor& h_st,
                                       int b_st, double max_len_ratio, DecodeCounters* ctr = nullptr) {
  if (b_st < 1) throw ConfigError("b_st must be >= 1");
  const int64_t v = model.cfg.st_vocab_size;
  const int64_t max_len = decode_max_len(max_len_ratio, h_asr.rows());

  struct Item {
    std::vector<int> tokens;
    double score = 0.0;
    StSession sess;
    std::vector<double> pending;
  };
  std::vector<Item> active(1);
  active[0].sess = model.make_st_session(h_asr, h_st, max_len + 2);
  {
    std::vector<StSession*> sess{&active[0].sess};
    StepOut so = model.st_step_batch(sess, {kSosEosId}, ctr);
    active[0].pending.assign(so.log_probs.row(0), so.log_probs.row(0) + v);
  }

  struct Finished {
    std::vector<int> tokens;
    double score;
  };
  std::vector<Finished> finished;

  for (int64_t step = 0; step < max_len && !active.empty(); ++step) {
    std::vector<detail::Cand> cands;
    cands.reserve(active.size() * static_cast<size_t>(v));
    for (size_t p = 0; p < active.size(); ++p) {
      const Item& it = active[p];
      for (int tok = 0; tok < v; ++tok) {
        if (!asr_candidate_allowed(tok)) continue;
        cands.push_back({static_cast<int>(p), tok, it.score + it.pending[static_cast<size_t>(tok)]});
      }
    }
    detail::sort_candidates(cands);
    const size_t keep = std::min<size_t>(static_cast<size_t>(b_st), cands.size());

    std::vector<int> child_count(active.size(), 0);
    for (size_t c = 0; c < keep; ++c) {
      if (cands[c].tok != kSosEosId) ++child_count[static_cast<size_t>(cands[c].parent)];
    }

    std::vector<Item> next;
    std::vector<int> next_tokens;
    for (size_t c = 0; c < keep; ++c) {
      const auto& cand = cands[c];
      Item& parent = active[static_cast<size_t>(cand.parent)];
      if (cand.tok == kSosEosId) {
        Finished f;
        f.tokens = parent.tokens;
        f.tokens.push_back(kSosEosId);
        f.score = cand.total;
        finished.push_back(std::move(f));
        continue;
      }
      Item child;
      child.tokens = parent.tokens;
      child.tokens.push_back(cand.tok);
      child.score = cand.total;
      if (--child_count[static_cast<size_t>(cand.parent)] == 0) {
        child.sess = std::move(parent.sess);
      } else {
        child.sess = parent.sess;
      }
      next.push_back(std::move(child));
      next_tokens.push_back(cand.tok);
    }
    active = std::move(next);
    if (active.empty()) break;

    std::vector<StSession*> sess;
    sess.reserve(active.size());
    for (auto& it : active) sess.push_back(&it.sess);
    StepOut so = model.st_step_batch(sess, next_tokens, ctr);
    for (size_t i = 0; i < active.size(); ++i) {
      active[i].pending.assign(so.log_probs.row(static_cast<int64_t>(i)),
                               so.log_probs.row(static_cast<int64_t>(i)) + v);
    }
  }

  auto norm = [](double score, const std::vector<int>& tokens) {
    return score / std::max<double>(1.0, static_cast<double>(tokens.size()));
  };
  if (!finished.empty()) {
    size_t bi = 0;
    for (size_t i = 1; i < finished.size(); ++i)
      if (norm(finished[i].score, finished[i].tokens) > norm(finished[bi].score, finished[bi].tokens)) bi = i;
    return strip_trailing_eos(std::move(finished[bi].tokens));
  }
  if (active.empty()) return {};
  size_t bi = 0;
  for (size_t i = 1; i < active.size(); ++i)
    if (norm(active[i].score, active[i].tokens) > norm(active[bi].score, active[bi].tokens)) bi = i;
  return active[bi].tokens;
}

// Full two-pass decode: encode, one of the three HI branches, then ST beam
// search over (h_asr, h_st).
inline DecodeResult decode(const MDModel& model, const Tensor& x, const DecodeConfig& config,
                           const NgramLm* lm = nullptr) {
  config.validate();
  if (config.mode == DecodeMode::FastMasked && model.cfg.decoder_kind != DecoderKind::Cmlm) {
    throw ConfigError("fast_masked decoding requires a cmlm-configured model");
  }
  if (config.mode != DecodeMode::FastMasked && model.cfg.decoder_kind != DecoderKind::Autoregressive) {
    throw ConfigError(std::string(decode_mode_name(config.mode)) + " decoding requires an autoregressive decoder");
  }

  DecodeResult res;
  StopWatch total;
  StopWatch sw;
  EncoderOutputs enc = model.encode_asr(x, &res.counters);
  Posteriors post = model.ctc_head(enc.h_asr);
  res.timings.encode_s = sw.elapsed_s();

  sw.reset();
  switch (config.mode) {
    case DecodeMode::Slow: {
      AsrBeamResult br = asr_beam_search(model, enc.h_asr, post, config, lm, &res.counters);
      res.transcript = strip_trailing_eos(br.best.tokens);
      res.hi = std::move(br.hi);
      break;
    }
    case DecodeMode::FastParallel: {
      ParallelHiResult pr = fastmd_parallel_hi(model, enc.h_asr, post, &res.counters);
      res.transcript = std::move(pr.transcript);
      res.hi = std::move(pr.hi);
      break;
    }
    case DecodeMode::FastMasked: {
      MaskedHiResult mr = fastmd_masked_hi(model, enc.h_asr, post, config.k_mask, config.p_thres, &res.counters);
      res.transcript = std::move(mr.transcript);
      res.hi = std::move(mr.hi);
      break;
    }
  }
  res.timings.asr_stage_s = sw.elapsed_s();

  sw.reset();
  Tensor h_st = model.encode_st(res.hi, &res.counters);
  res.translation = st_beam_search(model, enc.h_asr, h_st, config.b_st, config.max_len_ratio, &res.counters);
  res.timings.st_stage_s = sw.elapsed_s();
  res.timings.total_s = total.elapsed_s();
  return res;
}

}  // namespace fastmd
