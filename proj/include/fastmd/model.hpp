#pragma once

#include <map>
#include <memory>

#include "fastmd/ctc.hpp"
#include "fastmd/nnet.hpp"

namespace fastmd {

enum class EncoderKind { Transformer, Conformer };
enum class DecoderKind { Autoregressive, Cmlm };

struct MDModelConfig {
  int asr_encoder_layers = 12;
  int asr_decoder_layers = 6;
  int st_encoder_layers = 2;
  int st_decoder_layers = 6;
  int d_model = 256;
  int d_ff = 2048;
  int heads = 4;
  EncoderKind encoder_kind = EncoderKind::Transformer;
  int conv_kernel = 15;
  std::vector<int> interctc_layers = {6};  // 1-based tap positions, strictly below the top layer
  int asr_vocab_size = 0;
  int st_vocab_size = 0;
  DecoderKind decoder_kind = DecoderKind::Autoregressive;
  int feat_dim = 80;

  void validate() const {
    if (asr_encoder_layers < 1 || asr_decoder_layers < 1 || st_encoder_layers < 1 || st_decoder_layers < 1) {
      throw ConfigError("all layer counts must be >= 1");
    }
    if (d_model < 1 || d_ff < 1) throw ConfigError("d_model and d_ff must be >= 1");
    if (heads < 1 || d_model % heads != 0) {
      throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by heads " + std::to_string(heads));
    }
    if (conv_kernel < 1 || conv_kernel % 2 == 0) throw ConfigError("conv_kernel must be odd and >= 1");
    if (asr_vocab_size < kNumReserved + 1 || st_vocab_size < kNumReserved + 1) {
      throw ConfigError("vocab sizes must be >= " + std::to_string(kNumReserved + 1));
    }
    if (feat_dim < 7) throw ConfigError("feat_dim must be >= 7 for two-fold conv subsampling");
    for (int l : interctc_layers) {
      if (l < 1 || l >= asr_encoder_layers) {
        throw ConfigError("interctc layer " + std::to_string(l) + " outside [1, " +
                          std::to_string(asr_encoder_layers) + ")");
      }
    }
  }
};

struct LossWeights {
  double lambda_asr = 0.5;
  double lambda_ctc = 0.3;
  double lambda_inter = 0.3;

  void validate() const {
    if (lambda_asr < 0 || lambda_asr > 1 || lambda_ctc < 0 || lambda_ctc > 1 || lambda_inter < 0 ||
        lambda_inter > 1) {
      throw ConfigError("loss weights must lie in [0, 1]");
    }
  }
};

struct EncoderOutputs {
  Tensor h_asr;               // [T' x d]
  std::map<int, Tensor> taps; // intermediate encoder outputs per configured tap layer
  int64_t valid_length = 0;
};

enum class HiSource { Beam, TeacherForced, Cmlm };

struct HiddenIntermediates {
  Tensor states;                        // [L x d] decoder states, pre output projection
  std::vector<int> conditioning_tokens; // tokens the decoder was conditioned on (may contain mask ids)
  HiSource source = HiSource::TeacherForced;
};

struct LossBreakdown {
  double l_st = 0.0;
  double l_asr_trf = 0.0;
  double l_asr_ctc = 0.0;
  double l_inter_mean = 0.0;
  double l_total = 0.0;
};

// Interpolates the InterCTC term: (1-w) * top + w * mean-over-taps.
inline double combine_interctc(double top_ctc, double inter_mean, double lambda_inter) {
  return (1.0 - lambda_inter) * top_ctc + lambda_inter * inter_mean;
}

// Total loss: (1-a) * st + a * ((1-c) * trf + c * ctc_term).
inline double combine_total_loss(double l_st, double l_asr_trf, double ctc_term, const LossWeights& lw) {
  return (1.0 - lw.lambda_asr) * l_st +
         lw.lambda_asr * ((1.0 - lw.lambda_ctc) * l_asr_trf + lw.lambda_ctc * ctc_term);
}

struct DecodeCounters {
  int64_t asr_decoder_passes = 0;
  int64_t st_decoder_passes = 0;
  int64_t encoder_passes = 0;
};

struct Conditioning {
  enum class Kind { GroundTruth, Provided };
  Kind kind = Kind::GroundTruth;
  std::vector<int> tokens;

  static Conditioning ground_truth() { return {}; }
  static Conditioning provided(std::vector<int> t) {
    Conditioning c;
    c.kind = Kind::Provided;
    c.tokens = std::move(t);
    return c;
  }
};

// Mean per-token cross entropy of logits [L x V] against targets[L].
inline double mean_ce(const Tensor& logits, const std::vector<int>& targets) {
  if (logits.rows() != static_cast<int64_t>(targets.size())) {
    throw ShapeError("mean_ce: logits rows != targets length");
  }
  const Tensor lp = log_softmax(logits);
  double s = 0.0;
  for (size_t i = 0; i < targets.size(); ++i) {
    const int t = targets[i];
    if (t < 0 || t >= lp.cols()) throw TokenError("mean_ce: target id out of range");
    s -= lp.at(static_cast<int64_t>(i), t);
  }
  return s / static_cast<double>(targets.size());
}

// Growable K/V cache for one self-attention layer, preallocated to the
// session's maximum length.
struct KvCache {
  Tensor k, v;
  int64_t len = 0;

  void init(int64_t max_len, int64_t d) {
    k = Tensor({max_len, d});
    v = Tensor({max_len, d});
    len = 0;
  }
  void append(const double* kr, const double* vr) {
    if (len >= k.rows()) throw ConfigError("decode session exceeded its maximum length");
    std::memcpy(k.row(len), kr, sizeof(double) * static_cast<size_t>(k.cols()));
    std::memcpy(v.row(len), vr, sizeof(double) * static_cast<size_t>(v.cols()));
    ++len;
  }
};

struct CrossCache {
  Tensor k, v;
  int64_t len = 0;
};

class MDModel;

// Incremental decoding state for one hypothesis of the AR ASR decoder.
// Cross-attention K/V over h_asr are shared between clones; self-attention
// caches are copied so beam branches stay independent.
class AsrSession {
 public:
  int64_t length() const { return len_; }

 private:
  friend class MDModel;
  const MDModel* model_ = nullptr;
  std::vector<KvCache> self_;
  std::shared_ptr<const std::vector<CrossCache>> cross_;
  int64_t len_ = 0;
};

class StSession {
 public:
  int64_t length() const { return len_; }

 private:
  friend class MDModel;
  const MDModel* model_ = nullptr;
  std::vector<KvCache> self_;
  std::shared_ptr<const std::vector<CrossCache>> speech_;
  std::shared_ptr<const std::vector<CrossCache>> text_;
  int64_t len_ = 0;
};

struct StepOut {
  Tensor states;     // [B x d] decoder state rows for this step
  Tensor log_probs;  // [B x V]
};

class MDModel {
 public:
  MDModelConfig cfg;

  SubsampleW subsample;
  std::vector<TransformerEncBlockW> asr_enc_t;
  std::vector<ConformerBlockW> asr_enc_c;
  LayerNormW asr_enc_norm;
  Linear ctc_top;
  std::map<int, Linear> ctc_inter;
  Tensor asr_emb;  // [V_asr x d]
  std::vector<DecBlockW> asr_dec;
  LayerNormW asr_dec_norm;
  Linear asr_out;
  std::vector<TransformerEncBlockW> st_enc;
  LayerNormW st_enc_norm;
  Tensor st_emb;  // [V_st x d]
  std::vector<StDecBlockW> st_dec;
  LayerNormW st_dec_norm;
  Linear st_out;

  static MDModel random_init(const MDModelConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    return make(cfg, &rng);
  }
  static MDModel zeros(const MDModelConfig& cfg) { return make(cfg, nullptr); }

  // --- encoder ---------------------------------------------------------

  EncoderOutputs encode_asr(const Tensor& x, DecodeCounters* ctr = nullptr) const {
    if (x.rank() != 2 || x.rows() < 1) throw ShapeError("encode_asr expects non-empty [T x F] features");
    if (x.cols() != cfg.feat_dim) {
      throw ShapeError("encode_asr: feature width " + std::to_string(x.cols()) + " != configured " +
                       std::to_string(cfg.feat_dim));
    }
    Tensor h = conv_subsample(x, subsample);
    EncoderOutputs out;
    const AttentionMask mask = AttentionMask::none();
    const int n = cfg.asr_encoder_layers;
    for (int l = 1; l <= n; ++l) {
      if (cfg.encoder_kind == EncoderKind::Transformer) {
        h = transformer_encoder_block(h, asr_enc_t[static_cast<size_t>(l - 1)], cfg.heads, mask);
      } else {
        h = conformer_block(h, asr_enc_c[static_cast<size_t>(l - 1)], cfg.heads, mask);
      }
      if (std::find(cfg.interctc_layers.begin(), cfg.interctc_layers.end(), l) != cfg.interctc_layers.end()) {
        out.taps[l] = ln(h, asr_enc_norm);
      }
    }
    out.h_asr = ln(h, asr_enc_norm);
    out.valid_length = out.h_asr.rows();
    if (ctr) ++ctr->encoder_passes;
    return out;
  }

  // Row-wise log-softmax of the CTC projection. tap_layer 0 selects the top
  // head; a tap index selects its independent InterCTC head.
  Posteriors ctc_head(const Tensor& h, int tap_layer = 0) const {
    const Linear* head = &ctc_top;
    if (tap_layer != 0) {
      auto it = ctc_inter.find(tap_layer);
      if (it == ctc_inter.end()) throw ConfigError("no interctc head at layer " + std::to_string(tap_layer));
      head = &it->second;
    }
    return log_softmax(linear(h, *head));
  }

  // --- AR ASR decoder ---------------------------------------------------

  // One parallel pass over [sos] + tokens; returns all |tokens|+1 state rows.
  HiddenIntermediates decode_asr_teacher_forced(const Tensor& h_asr, const std::vector<int>& tokens,
                                                DecodeCounters* ctr = nullptr,
                                                Tensor* logits_out = nullptr) const {
    require_ar("decode_asr_teacher_forced");
    for (int t : tokens) {
      if (t == kMaskId) throw TokenError("teacher forcing rejects the mask id");
    }
    std::vector<int> ids;
    ids.reserve(tokens.size() + 1);
    ids.push_back(kSosEosId);
    ids.insert(ids.end(), tokens.begin(), tokens.end());
    Tensor y = embed_tokens(asr_emb, ids);
    for (const auto& blk : asr_dec) {
      y = transformer_decoder_block(y, h_asr, blk, cfg.heads, AttentionMask::causal());
    }
    Tensor states = ln(y, asr_dec_norm);
    if (logits_out) *logits_out = linear(states, asr_out);
    if (ctr) ++ctr->asr_decoder_passes;
    HiddenIntermediates hi;
    hi.states = std::move(states);
    hi.conditioning_tokens = tokens;
    hi.source = HiSource::TeacherForced;
    return hi;
  }

  // Bidirectional (no self-attention mask) decoder pass over tokens that may
  // contain mask ids. Returns states and per-position token log probs.
  std::pair<HiddenIntermediates, Tensor> cmlm_forward(const Tensor& h_asr, const std::vector<int>& tokens,
                                                      DecodeCounters* ctr = nullptr) const {
    if (cfg.decoder_kind != DecoderKind::Cmlm) {
      throw ConfigError("cmlm_forward requires a cmlm-configured decoder");
    }
    if (tokens.empty()) throw ValueError("cmlm_forward needs at least one token");
    Tensor y = embed_tokens(asr_emb, tokens);
    for (const auto& blk : asr_dec) {
      y = transformer_decoder_block(y, h_asr, blk, cfg.heads, AttentionMask::none());
    }
    Tensor states = ln(y, asr_dec_norm);
    Tensor log_probs = log_softmax(linear(states, asr_out));
    if (ctr) ++ctr->asr_decoder_passes;
    HiddenIntermediates hi;
    hi.states = std::move(states);
    hi.conditioning_tokens = tokens;
    hi.source = HiSource::Cmlm;
    return {std::move(hi), std::move(log_probs)};
  }

  AsrSession make_asr_session(const Tensor& h_asr, int64_t max_len) const {
    require_ar("make_asr_session");
    AsrSession s;
    s.model_ = this;
    s.self_.resize(asr_dec.size());
    for (size_t l = 0; l < asr_dec.size(); ++l) s.self_[l].init(max_len, cfg.d_model);
    auto cross = std::make_shared<std::vector<CrossCache>>();
    for (const auto& blk : asr_dec) cross->push_back(make_cross(h_asr, blk.src_att));
    s.cross_ = std::move(cross);
    return s;
  }

  // Advances every session by one token in a single batched evaluation.
  StepOut asr_step_batch(const std::vector<AsrSession*>& sessions, const std::vector<int>& tokens,
                         DecodeCounters* ctr = nullptr) const {
    const int64_t b = static_cast<int64_t>(sessions.size());
    if (b < 1 || tokens.size() != sessions.size()) throw ValueError("asr_step_batch: empty batch or size mismatch");
    for (auto* s : sessions) check_session(s->model_, "asr decode cache");
    Tensor x({b, cfg.d_model});
    for (int64_t i = 0; i < b; ++i) {
      embed_token_row(asr_emb, tokens[static_cast<size_t>(i)], sessions[static_cast<size_t>(i)]->len_, x.row(i));
    }
    for (size_t l = 0; l < asr_dec.size(); ++l) {
      const DecBlockW& w = asr_dec[l];
      x = self_attend_step(x, w.ln_self, w.self_att, [&](int64_t i) -> KvCache& {
        return sessions[static_cast<size_t>(i)]->self_[l];
      });
      x = cross_attend_step(x, w.ln_src, w.src_att, [&](int64_t i) -> const CrossCache& {
        return (*sessions[static_cast<size_t>(i)]->cross_)[l];
      });
      x = add(x, ffn(ln(x, w.ln_ff), w.ff, Act::Relu));
    }
    StepOut out;
    out.states = ln(x, asr_dec_norm);
    out.log_probs = log_softmax(linear(out.states, asr_out));
    for (auto* s : sessions) ++s->len_;
    if (ctr) ++ctr->asr_decoder_passes;
    return out;
  }

  // Single-hypothesis step; the first call should feed the start symbol.
  StepOut asr_step(AsrSession& session, int token, DecodeCounters* ctr = nullptr) const {
    std::vector<AsrSession*> one{&session};
    return asr_step_batch(one, {token}, ctr);
  }

  // --- ST sub-net -------------------------------------------------------

  Tensor encode_st(const HiddenIntermediates& hi, DecodeCounters* ctr = nullptr) const {
    if (hi.states.empty()) throw ValueError("encode_st: empty hidden intermediates");
    Tensor h = hi.states;
    for (const auto& blk : st_enc) {
      h = transformer_encoder_block(h, blk, cfg.heads, AttentionMask::none());
    }
    if (ctr) ++ctr->encoder_passes;
    return ln(h, st_enc_norm);
  }

  StSession make_st_session(const Tensor& h_asr, const Tensor& h_st, int64_t max_len) const {
    if (h_asr.empty() || h_st.empty()) throw ValueError("make_st_session: empty memory");
    StSession s;
    s.model_ = this;
    s.self_.resize(st_dec.size());
    for (size_t l = 0; l < st_dec.size(); ++l) s.self_[l].init(max_len, cfg.d_model);
    auto speech = std::make_shared<std::vector<CrossCache>>();
    auto text = std::make_shared<std::vector<CrossCache>>();
    for (const auto& blk : st_dec) {
      speech->push_back(make_cross(h_asr, blk.speech_att));
      text->push_back(make_cross(h_st, blk.text_att));
    }
    s.speech_ = std::move(speech);
    s.text_ = std::move(text);
    return s;
  }

  StepOut st_step_batch(const std::vector<StSession*>& sessions, const std::vector<int>& tokens,
                        DecodeCounters* ctr = nullptr) const {
    const int64_t b = static_cast<int64_t>(sessions.size());
    if (b < 1 || tokens.size() != sessions.size()) throw ValueError("st_step_batch: empty batch or size mismatch");
    for (auto* s : sessions) check_session(s->model_, "st decode cache");
    Tensor x({b, cfg.d_model});
    for (int64_t i = 0; i < b; ++i) {
      embed_token_row(st_emb, tokens[static_cast<size_t>(i)], sessions[static_cast<size_t>(i)]->len_, x.row(i));
    }
    for (size_t l = 0; l < st_dec.size(); ++l) {
      const StDecBlockW& w = st_dec[l];
      x = self_attend_step(x, w.ln_self, w.self_att, [&](int64_t i) -> KvCache& {
        return sessions[static_cast<size_t>(i)]->self_[l];
      });
      x = cross_attend_step(x, w.ln_speech, w.speech_att, [&](int64_t i) -> const CrossCache& {
        return (*sessions[static_cast<size_t>(i)]->speech_)[l];
      });
      x = cross_attend_step(x, w.ln_text, w.text_att, [&](int64_t i) -> const CrossCache& {
        return (*sessions[static_cast<size_t>(i)]->text_)[l];
      });
      x = add(x, ffn(ln(x, w.ln_ff), w.ff, Act::Relu));
    }
    StepOut out;
    out.states = ln(x, st_dec_norm);
    out.log_probs = log_softmax(linear(out.states, st_out));
    for (auto* s : sessions) ++s->len_;
    if (ctr) ++ctr->st_decoder_passes;
    return out;
  }

  StepOut st_step(StSession& session, int token, DecodeCounters* ctr = nullptr) const {
    std::vector<StSession*> one{&session};
    return st_step_batch(one, {token}, ctr);
  }

  // Full teacher-forced ST decoder pass over [sos] + y, returning logits for
  // every position.
  Tensor st_teacher_forced_logits(const Tensor& h_asr, const Tensor& h_st, const std::vector<int>& y,
                                  DecodeCounters* ctr = nullptr) const {
    std::vector<int> ids;
    ids.reserve(y.size() + 1);
    ids.push_back(kSosEosId);
    ids.insert(ids.end(), y.begin(), y.end());
    Tensor t = embed_tokens(st_emb, ids);
    for (const auto& blk : st_dec) t = st_decoder_block(t, h_asr, h_st, blk, cfg.heads);
    if (ctr) ++ctr->st_decoder_passes;
    return linear(ln(t, st_dec_norm), st_out);
  }

  // --- losses -----------------------------------------------------------

  LossBreakdown compute_losses(const Tensor& x, const std::vector<int>& y_src, const std::vector<int>& y_tgt,
                               const LossWeights& lw, const Conditioning& cond,
                               DecodeCounters* ctr = nullptr) const {
    lw.validate();
    if (y_src.empty() || y_tgt.empty()) throw ValueError("compute_losses: empty reference sequence");
    EncoderOutputs enc = encode_asr(x, ctr);

    LossBreakdown lb;
    lb.l_asr_ctc = ctc_loss(ctc_head(enc.h_asr), y_src);
    if (!enc.taps.empty()) {
      double s = 0.0;
      for (const auto& [layer, tap] : enc.taps) s += ctc_loss(ctc_head(tap, layer), y_src);
      lb.l_inter_mean = s / static_cast<double>(enc.taps.size());
    }

    std::vector<int> targets = y_src;
    targets.push_back(kSosEosId);
    if (cfg.decoder_kind == DecoderKind::Autoregressive) {
      Tensor logits;
      decode_asr_teacher_forced(enc.h_asr, y_src, ctr, &logits);
      lb.l_asr_trf = mean_ce(logits, targets);
    } else {
      // CMLM: classify every position of y_src from a fully masked input.
      std::vector<int> masked(y_src.size(), kMaskId);
      auto [hi, lp] = cmlm_forward(enc.h_asr, masked, ctr);
      (void)hi;
      double s = 0.0;
      for (size_t i = 0; i < y_src.size(); ++i) s -= lp.at(static_cast<int64_t>(i), y_src[i]);
      lb.l_asr_trf = s / static_cast<double>(y_src.size());
    }

    std::vector<int> cond_tokens = (cond.kind == Conditioning::Kind::GroundTruth) ? y_src : cond.tokens;
    HiddenIntermediates hi = conditioning_states(enc.h_asr, cond_tokens, ctr);
    Tensor h_st = encode_st(hi, ctr);

    Tensor st_logits = st_teacher_forced_logits(enc.h_asr, h_st, y_tgt, ctr);
    std::vector<int> st_targets = y_tgt;
    st_targets.push_back(kSosEosId);
    lb.l_st = mean_ce(st_logits, st_targets);

    const bool inter = !enc.taps.empty();
    const double ctc_term = inter ? combine_interctc(lb.l_asr_ctc, lb.l_inter_mean, lw.lambda_inter) : lb.l_asr_ctc;
    lb.l_total = combine_total_loss(lb.l_st, lb.l_asr_trf, ctc_term, lw);
    return lb;
  }

  // Decoder states for an arbitrary conditioning token sequence, by teacher
  // forcing (AR) or a CMLM pass. Mask ids are replaced by unk for the AR
  // decoder, which rejects them; an empty sequence maps to [sos]-only states
  // for AR and a single mask token for CMLM.
  HiddenIntermediates conditioning_states(const Tensor& h_asr, std::vector<int> tokens,
                                          DecodeCounters* ctr = nullptr) const {
    if (cfg.decoder_kind == DecoderKind::Autoregressive) {
      for (int& t : tokens)
        if (t == kMaskId) t = kUnkId;
      return decode_asr_teacher_forced(h_asr, tokens, ctr);
    }
    if (tokens.empty()) tokens.push_back(kMaskId);
    return cmlm_forward(h_asr, tokens, ctr).first;
  }

  // --- construction / parameter traversal --------------------------------

  template <typename F>
  void visit_params(F&& f) {
    visit_linear(f, "sub.conv1", subsample.conv1_w, subsample.conv1_b);
    visit_linear(f, "sub.conv2", subsample.conv2_w, subsample.conv2_b);
    visit_linear(f, "sub.proj", subsample.proj.w, subsample.proj.b);
    for (size_t i = 0; i < asr_enc_t.size(); ++i) visit_enc_block(f, "asr_enc." + std::to_string(i), asr_enc_t[i]);
    for (size_t i = 0; i < asr_enc_c.size(); ++i) visit_conf_block(f, "asr_enc." + std::to_string(i), asr_enc_c[i]);
    visit_ln(f, "asr_enc.norm", asr_enc_norm);
    visit_linear(f, "asr_ctc", ctc_top.w, ctc_top.b);
    for (auto& [layer, head] : ctc_inter) visit_linear(f, "asr_inter." + std::to_string(layer), head.w, head.b);
    f("asr_dec.emb", asr_emb);
    for (size_t i = 0; i < asr_dec.size(); ++i) visit_dec_block(f, "asr_dec." + std::to_string(i), asr_dec[i]);
    visit_ln(f, "asr_dec.norm", asr_dec_norm);
    visit_linear(f, "asr_dec.out", asr_out.w, asr_out.b);
    for (size_t i = 0; i < st_enc.size(); ++i) visit_enc_block(f, "st_enc." + std::to_string(i), st_enc[i]);
    visit_ln(f, "st_enc.norm", st_enc_norm);
    f("st_dec.emb", st_emb);
    for (size_t i = 0; i < st_dec.size(); ++i) visit_st_block(f, "st_dec." + std::to_string(i), st_dec[i]);
    visit_ln(f, "st_dec.norm", st_dec_norm);
    visit_linear(f, "st_dec.out", st_out.w, st_out.b);
  }

  template <typename F>
  void visit_params(F&& f) const {
    const_cast<MDModel*>(this)->visit_params([&](const std::string& name, Tensor& t) {
      f(name, static_cast<const Tensor&>(t));
    });
  }

 private:
  void require_ar(const char* what) const {
    if (cfg.decoder_kind != DecoderKind::Autoregressive) {
      throw ConfigError(std::string(what) + " requires an autoregressive decoder");
    }
  }

  void check_session(const MDModel* owner, const char* what) const {
    if (owner != this) {
      throw ConfigError(std::string(what) + (owner ? " belongs to a different model" : " is uninitialized"));
    }
  }

  CrossCache make_cross(const Tensor& memory, const AttnW& att) const {
    CrossCache c;
    c.k = linear(memory, att.k);
    c.v = linear(memory, att.v);
    c.len = memory.rows();
    return c;
  }

  template <typename GetCache>
  Tensor self_attend_step(const Tensor& x, const LayerNormW& lnw, const AttnW& att, GetCache get) const {
    const int64_t b = x.rows(), d = x.cols();
    Tensor h = ln(x, lnw);
    Tensor q = linear(h, att.q);
    Tensor k = linear(h, att.k);
    Tensor v = linear(h, att.v);
    Tensor ctx({b, d});
    for (int64_t i = 0; i < b; ++i) {
      KvCache& cache = get(i);
      cache.append(k.row(i), v.row(i));
      attend_row(q.row(i), cache.k, cache.v, cache.len, cfg.heads, ctx.row(i));
    }
    return add(x, linear(ctx, att.o));
  }

  template <typename GetCross>
  Tensor cross_attend_step(const Tensor& x, const LayerNormW& lnw, const AttnW& att, GetCross get) const {
    const int64_t b = x.rows(), d = x.cols();
    Tensor q = linear(ln(x, lnw), att.q);
    Tensor ctx({b, d});
    for (int64_t i = 0; i < b; ++i) {
      const CrossCache& cc = get(i);
      attend_row(q.row(i), cc.k, cc.v, cc.len, cfg.heads, ctx.row(i));
    }
    return add(x, linear(ctx, att.o));
  }

  // -- builders ----------------------------------------------------------

  static Tensor init_tensor(std::vector<int64_t> dims, int64_t fan_in, int64_t fan_out, Rng* rng) {
    Tensor t(std::move(dims));
    if (rng) {
      const double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (double& v : t.raw()) v = rng->uniform(-r, r);
    }
    return t;
  }

  static Linear make_lin(int64_t din, int64_t dout, Rng* rng) {
    Linear l;
    l.w = init_tensor({din, dout}, din, dout, rng);
    l.b = Tensor({dout});
    return l;
  }

  static LayerNormW make_ln_w(int64_t d) {
    LayerNormW w;
    w.gain = Tensor({d}, 1.0);
    w.bias = Tensor({d});
    return w;
  }

  static AttnW make_attn(int64_t d, Rng* rng) {
    return {make_lin(d, d, rng), make_lin(d, d, rng), make_lin(d, d, rng), make_lin(d, d, rng)};
  }

  static FfnW make_ffn(int64_t d, int64_t dff, Rng* rng) {
    return {make_lin(d, dff, rng), make_lin(dff, d, rng)};
  }

  static Tensor make_emb(int64_t v, int64_t d, Rng* rng) {
    // Variance 1/d so the sqrt(d)-scaled rows are O(1).
    Tensor t({v, d});
    if (rng) {
      const double r = std::sqrt(3.0 / static_cast<double>(d));
      for (double& x : t.raw()) x = rng->uniform(-r, r);
    }
    return t;
  }

  static MDModel make(const MDModelConfig& cfg, Rng* rng) {
    cfg.validate();
    MDModel m;
    m.cfg = cfg;
    const int64_t d = cfg.d_model, dff = cfg.d_ff;

    m.subsample.conv1_w = init_tensor({d, 1, 3, 3}, 9, d * 9, rng);
    m.subsample.conv1_b = Tensor({d});
    m.subsample.conv2_w = init_tensor({d, d, 3, 3}, d * 9, d * 9, rng);
    m.subsample.conv2_b = Tensor({d});
    const int64_t f2 = conv_subsample_len(cfg.feat_dim);
    m.subsample.proj = make_lin(d * f2, d, rng);

    for (int i = 0; i < cfg.asr_encoder_layers; ++i) {
      if (cfg.encoder_kind == EncoderKind::Transformer) {
        m.asr_enc_t.push_back(make_enc_block(d, dff, rng));
      } else {
        m.asr_enc_c.push_back(make_conf_block(d, dff, cfg.conv_kernel, rng));
      }
    }
    m.asr_enc_norm = make_ln_w(d);
    m.ctc_top = make_lin(d, cfg.asr_vocab_size, rng);
    for (int l : cfg.interctc_layers) m.ctc_inter[l] = make_lin(d, cfg.asr_vocab_size, rng);

    m.asr_emb = make_emb(cfg.asr_vocab_size, d, rng);
    for (int i = 0; i < cfg.asr_decoder_layers; ++i) {
      m.asr_dec.push_back({make_ln_w(d), make_attn(d, rng), make_ln_w(d), make_attn(d, rng), make_ln_w(d),
                           make_ffn(d, dff, rng)});
    }
    m.asr_dec_norm = make_ln_w(d);
    m.asr_out = make_lin(d, cfg.asr_vocab_size, rng);

    for (int i = 0; i < cfg.st_encoder_layers; ++i) m.st_enc.push_back(make_enc_block(d, dff, rng));
    m.st_enc_norm = make_ln_w(d);
    m.st_emb = make_emb(cfg.st_vocab_size, d, rng);
    for (int i = 0; i < cfg.st_decoder_layers; ++i) {
      m.st_dec.push_back({make_ln_w(d), make_attn(d, rng), make_ln_w(d), make_attn(d, rng), make_ln_w(d),
                          make_attn(d, rng), make_ln_w(d), make_ffn(d, dff, rng)});
    }
    m.st_dec_norm = make_ln_w(d);
    m.st_out = make_lin(d, cfg.st_vocab_size, rng);
    return m;
  }

  static TransformerEncBlockW make_enc_block(int64_t d, int64_t dff, Rng* rng) {
    return {make_ln_w(d), make_attn(d, rng), make_ln_w(d), make_ffn(d, dff, rng)};
  }

  static ConformerBlockW make_conf_block(int64_t d, int64_t dff, int kernel, Rng* rng) {
    ConformerBlockW b;
    b.ln_ff1 = make_ln_w(d);
    b.ff1 = make_ffn(d, dff, rng);
    b.ln_att = make_ln_w(d);
    b.att = make_attn(d, rng);
    b.ln_conv = make_ln_w(d);
    b.conv_pw1 = make_lin(d, 2 * d, rng);
    b.conv_dw_w = init_tensor({d, kernel}, kernel, kernel, rng);
    b.conv_dw_b = Tensor({d});
    b.conv_ln = make_ln_w(d);
    b.conv_pw2 = make_lin(d, d, rng);
    b.ln_ff2 = make_ln_w(d);
    b.ff2 = make_ffn(d, dff, rng);
    b.ln_final = make_ln_w(d);
    return b;
  }

  // -- visitor helpers ----------------------------------------------------

  template <typename F>
  static void visit_linear(F& f, const std::string& p, Tensor& w, Tensor& b) {
    f(p + ".w", w);
    f(p + ".b", b);
  }
  template <typename F>
  static void visit_ln(F& f, const std::string& p, LayerNormW& w) {
    f(p + ".g", w.gain);
    f(p + ".b", w.bias);
  }
  template <typename F>
  static void visit_attn(F& f, const std::string& p, AttnW& w) {
    visit_linear(f, p + ".q", w.q.w, w.q.b);
    visit_linear(f, p + ".k", w.k.w, w.k.b);
    visit_linear(f, p + ".v", w.v.w, w.v.b);
    visit_linear(f, p + ".o", w.o.w, w.o.b);
  }
  template <typename F>
  static void visit_ffn(F& f, const std::string& p, FfnW& w) {
    visit_linear(f, p + ".lin1", w.lin1.w, w.lin1.b);
    visit_linear(f, p + ".lin2", w.lin2.w, w.lin2.b);
  }
  template <typename F>
  static void visit_enc_block(F& f, const std::string& p, TransformerEncBlockW& b) {
    visit_ln(f, p + ".ln_att", b.ln_att);
    visit_attn(f, p + ".att", b.att);
    visit_ln(f, p + ".ln_ff", b.ln_ff);
    visit_ffn(f, p + ".ff", b.ff);
  }
  template <typename F>
  static void visit_conf_block(F& f, const std::string& p, ConformerBlockW& b) {
    visit_ln(f, p + ".ln_ff1", b.ln_ff1);
    visit_ffn(f, p + ".ff1", b.ff1);
    visit_ln(f, p + ".ln_att", b.ln_att);
    visit_attn(f, p + ".att", b.att);
    visit_ln(f, p + ".ln_conv", b.ln_conv);
    visit_linear(f, p + ".conv_pw1", b.conv_pw1.w, b.conv_pw1.b);
    f(p + ".conv_dw.w", b.conv_dw_w);
    f(p + ".conv_dw.b", b.conv_dw_b);
    visit_ln(f, p + ".conv_ln", b.conv_ln);
    visit_linear(f, p + ".conv_pw2", b.conv_pw2.w, b.conv_pw2.b);
    visit_ln(f, p + ".ln_ff2", b.ln_ff2);
    visit_ffn(f, p + ".ff2", b.ff2);
    visit_ln(f, p + ".ln_final", b.ln_final);
  }
  template <typename F>
  static void visit_dec_block(F& f, const std::string& p, DecBlockW& b) {
    visit_ln(f, p + ".ln_self", b.ln_self);
    visit_attn(f, p + ".self", b.self_att);
    visit_ln(f, p + ".ln_src", b.ln_src);
    visit_attn(f, p + ".src", b.src_att);
    visit_ln(f, p + ".ln_ff", b.ln_ff);
    visit_ffn(f, p + ".ff", b.ff);
  }
  template <typename F>
  static void visit_st_block(F& f, const std::string& p, StDecBlockW& b) {
    visit_ln(f, p + ".ln_self", b.ln_self);
    visit_attn(f, p + ".self", b.self_att);
    visit_ln(f, p + ".ln_speech", b.ln_speech);
    visit_attn(f, p + ".speech", b.speech_att);
    visit_ln(f, p + ".ln_text", b.ln_text);
    visit_attn(f, p + ".text", b.text_att);
    visit_ln(f, p + ".ln_ff", b.ln_ff);
    visit_ffn(f, p + ".ff", b.ff);
  }
};

}  // namespace fastmd
