#pragma once

#include <limits>

#include "fastmd/tensor.hpp"

namespace fastmd {

inline constexpr double kLayerNormEps = 1e-5;

struct AttentionMask {
  enum class Kind { None, Causal, Padding };
  Kind kind = Kind::None;
  int64_t valid_len = 0;

  static AttentionMask none() { return {}; }
  static AttentionMask causal() { return {Kind::Causal, 0}; }
  static AttentionMask padding(int64_t valid) { return {Kind::Padding, valid}; }
};

// Sinusoidal absolute position encoding, values in [-1, 1].
inline double pe_value(int64_t pos, int64_t j, int64_t d) {
  const double exponent = static_cast<double>(2 * (j / 2)) / static_cast<double>(d);
  const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
  return (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
}

inline Tensor sinusoidal_pe(int64_t len, int64_t d) {
  Tensor pe({len, d});
  for (int64_t p = 0; p < len; ++p) {
    double* row = pe.row(p);
    for (int64_t j = 0; j < d; ++j) row[j] = pe_value(p, j, d);
  }
  return pe;
}

struct LayerNormW {
  Tensor gain, bias;
};

struct Linear {
  Tensor w, b;  // [din x dout], [dout]
};

inline Tensor linear(const Tensor& x, const Linear& l) { return add_row(matmul(x, l.w), l.b); }

struct AttnW {
  Linear q, k, v, o;
};

enum class Act { Relu, Swish };

struct FfnW {
  Linear lin1, lin2;
};

inline Tensor ffn(const Tensor& x, const FfnW& w, Act act) {
  Tensor h = linear(x, w.lin1);
  h = (act == Act::Relu) ? relu(h) : swish(h);
  return linear(h, w.lin2);
}

inline Tensor ln(const Tensor& x, const LayerNormW& w) {
  return layer_norm(x, w.gain, w.bias, kLayerNormEps);
}

// Scaled dot-product attention for one already-projected query row over the
// first n_keys rows of K/V. Key loop is ascending for every output element,
// so full-pass and incremental decoding agree bit for bit.
// probe, when given, receives one weight vector per head.
inline void attend_row(const double* q, const Tensor& k, const Tensor& v, int64_t n_keys, int heads,
                       double* out, std::vector<std::vector<double>>* probe = nullptr) {
  const int64_t d = k.cols();
  const int64_t dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> scores(static_cast<size_t>(n_keys));
  for (int h = 0; h < heads; ++h) {
    const int64_t base = h * dh;
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < n_keys; ++j) {
      const double* kr = k.row(j) + base;
      double s = 0.0;
      for (int64_t c = 0; c < dh; ++c) s += q[base + c] * kr[c];
      s *= inv_scale;
      scores[static_cast<size_t>(j)] = s;
      mx = std::max(mx, s);
    }
    double denom = 0.0;
    for (int64_t j = 0; j < n_keys; ++j) {
      double e = std::exp(scores[static_cast<size_t>(j)] - mx);
      scores[static_cast<size_t>(j)] = e;
      denom += e;
    }
    for (int64_t c = 0; c < dh; ++c) out[base + c] = 0.0;
    for (int64_t j = 0; j < n_keys; ++j) {
      const double wgt = scores[static_cast<size_t>(j)] / denom;
      scores[static_cast<size_t>(j)] = wgt;
      const double* vr = v.row(j) + base;
      for (int64_t c = 0; c < dh; ++c) out[base + c] += wgt * vr[c];
    }
    if (probe) probe->emplace_back(scores.begin(), scores.begin() + n_keys);
  }
}

// Multi-head attention over projected q/k/v with output projection. q_in and
// kv_in are [Lq x d] / [Lkv x d]; the mask restricts which keys each query
// may attend to.
inline Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in, const AttnW& w, int heads,
                                   const AttentionMask& mask,
                                   std::vector<std::vector<double>>* probe = nullptr) {
  const int64_t d = q_in.cols();
  if (heads < 1 || d % heads != 0) {
    throw ConfigError("attention width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const int64_t lq = q_in.rows(), lkv = kv_in.rows();
  if (mask.kind == AttentionMask::Kind::Causal && lq != lkv) {
    throw ShapeError("causal attention requires matching query/key lengths");
  }
  Tensor q = linear(q_in, w.q);
  Tensor k = linear(kv_in, w.k);
  Tensor v = linear(kv_in, w.v);
  Tensor ctx({lq, d});
  for (int64_t i = 0; i < lq; ++i) {
    int64_t n_keys = lkv;
    if (mask.kind == AttentionMask::Kind::Causal) n_keys = i + 1;
    if (mask.kind == AttentionMask::Kind::Padding) n_keys = std::min<int64_t>(mask.valid_len, lkv);
    if (n_keys < 1) throw ShapeError("attention mask leaves no keys");
    attend_row(q.row(i), k, v, n_keys, heads, ctx.row(i), probe);
  }
  return linear(ctx, w.o);
}

struct TransformerEncBlockW {
  LayerNormW ln_att;
  AttnW att;
  LayerNormW ln_ff;
  FfnW ff;
};

// Pre-norm Transformer encoder block: x + att(ln(x)), then + ffn(ln(.)).
inline Tensor transformer_encoder_block(const Tensor& x, const TransformerEncBlockW& w, int heads,
                                        const AttentionMask& mask) {
  Tensor h = ln(x, w.ln_att);
  Tensor y = add(x, multi_head_attention(h, h, w.att, heads, mask));
  return add(y, ffn(ln(y, w.ln_ff), w.ff, Act::Relu));
}

struct ConformerBlockW {
  LayerNormW ln_ff1;
  FfnW ff1;
  LayerNormW ln_att;
  AttnW att;
  LayerNormW ln_conv;
  Linear conv_pw1;  // d -> 2d, gated
  Tensor conv_dw_w; // [d x kernel]
  Tensor conv_dw_b; // [d]
  LayerNormW conv_ln;
  Linear conv_pw2;  // d -> d
  LayerNormW ln_ff2;
  FfnW ff2;
  LayerNormW ln_final;
};

// [T x 2d] -> [T x d]: first half gated by sigmoid of second half.
inline Tensor glu(const Tensor& x) {
  const int64_t t = x.rows(), d2 = x.cols();
  if (d2 % 2 != 0) throw ShapeError("glu needs even width");
  const int64_t d = d2 / 2;
  Tensor out({t, d});
  for (int64_t i = 0; i < t; ++i) {
    const double* xr = x.row(i);
    double* o = out.row(i);
    for (int64_t j = 0; j < d; ++j) o[j] = xr[j] * sigmoid_scalar(xr[d + j]);
  }
  return out;
}

// Macaron Conformer block: half-step ffn, self-attention, gated depthwise
// conv module, half-step ffn, final norm. Swish activations throughout.
inline Tensor conformer_block(const Tensor& x, const ConformerBlockW& w, int heads,
                              const AttentionMask& mask) {
  Tensor y = add(x, scale(ffn(ln(x, w.ln_ff1), w.ff1, Act::Swish), 0.5));
  {
    Tensor h = ln(y, w.ln_att);
    y = add(y, multi_head_attention(h, h, w.att, heads, mask));
  }
  {
    Tensor c = linear(ln(y, w.ln_conv), w.conv_pw1);
    c = glu(c);
    // Zero padded frames so the depthwise conv sees the same zeros a
    // truncated input would.
    if (mask.kind == AttentionMask::Kind::Padding) {
      for (int64_t i = mask.valid_len; i < c.rows(); ++i) {
        double* r = c.row(i);
        for (int64_t j = 0; j < c.cols(); ++j) r[j] = 0.0;
      }
    }
    const int64_t kernel = w.conv_dw_w.cols();
    c = add_row(conv1d_depthwise(c, w.conv_dw_w, (kernel - 1) / 2), w.conv_dw_b);
    c = swish(ln(c, w.conv_ln));
    c = linear(c, w.conv_pw2);
    y = add(y, c);
  }
  y = add(y, scale(ffn(ln(y, w.ln_ff2), w.ff2, Act::Swish), 0.5));
  return ln(y, w.ln_final);
}

struct DecBlockW {
  LayerNormW ln_self;
  AttnW self_att;
  LayerNormW ln_src;
  AttnW src_att;
  LayerNormW ln_ff;
  FfnW ff;
};

// Pre-norm decoder block with one cross-attention over memory. self_mask is
// causal for AR decoding and none for the CMLM decoder.
inline Tensor transformer_decoder_block(const Tensor& y, const Tensor& memory, const DecBlockW& w,
                                        int heads,
                                        const AttentionMask& self_mask = AttentionMask::causal()) {
  if (memory.empty()) throw ValueError("decoder block: empty memory");
  Tensor h = ln(y, w.ln_self);
  Tensor z = add(y, multi_head_attention(h, h, w.self_att, heads, self_mask));
  z = add(z, multi_head_attention(ln(z, w.ln_src), memory, w.src_att, heads, AttentionMask::none()));
  return add(z, ffn(ln(z, w.ln_ff), w.ff, Act::Relu));
}

struct StDecBlockW {
  LayerNormW ln_self;
  AttnW self_att;
  LayerNormW ln_speech;
  AttnW speech_att;
  LayerNormW ln_text;
  AttnW text_att;
  LayerNormW ln_ff;
  FfnW ff;
};

// ST decoder block: causal self-attention, speech attention over acoustic
// memory, then cross-attention over textual memory, then feed-forward.
inline Tensor st_decoder_block(const Tensor& y, const Tensor& h_asr, const Tensor& h_st,
                               const StDecBlockW& w, int heads) {
  if (h_asr.empty() || h_st.empty()) throw ValueError("st decoder block: empty memory");
  Tensor h = ln(y, w.ln_self);
  Tensor z = add(y, multi_head_attention(h, h, w.self_att, heads, AttentionMask::causal()));
  z = add(z, multi_head_attention(ln(z, w.ln_speech), h_asr, w.speech_att, heads, AttentionMask::none()));
  z = add(z, multi_head_attention(ln(z, w.ln_text), h_st, w.text_att, heads, AttentionMask::none()));
  return add(z, ffn(ln(z, w.ln_ff), w.ff, Act::Relu));
}

struct SubsampleW {
  Tensor conv1_w;  // [d x 1 x 3 x 3]
  Tensor conv1_b;  // [d]
  Tensor conv2_w;  // [d x d x 3 x 3]
  Tensor conv2_b;  // [d]
  Linear proj;     // [d*F2 x d]
};

inline Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 3 || bias.numel() != x.dim(0)) throw ShapeError("add_channel_bias shape mismatch");
  Tensor out = x;
  const int64_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  double* p = out.data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < hw; ++i) p[ch * hw + i] += bias.data()[ch];
  return out;
}

inline int64_t conv_subsample_len(int64_t n) { return ((n - 1) / 2 - 1) / 2; }

// Two kernel-3 stride-2 conv layers over time and frequency (four-fold time
// down-sampling), flattened and projected to d_model, plus position encoding.
inline Tensor conv_subsample(const Tensor& x, const SubsampleW& w) {
  if (x.rank() != 2) throw ShapeError("conv_subsample expects [T x F] features");
  const int64_t t = x.rows(), f = x.cols();
  if (conv_subsample_len(t) < 1 || conv_subsample_len(f) < 1) {
    throw ShapeError("conv_subsample: input too short (need T >= 7 and F >= 7, got " + x.shape_str() + ")");
  }
  Tensor img = Tensor::from({1, t, f}, x.raw());
  Tensor c1 = relu(add_channel_bias(conv2d(img, w.conv1_w, 2), w.conv1_b));
  Tensor c2 = relu(add_channel_bias(conv2d(c1, w.conv2_w, 2), w.conv2_b));
  const int64_t ch = c2.dim(0), t2 = c2.dim(1), f2 = c2.dim(2);
  Tensor flat({t2, ch * f2});
  for (int64_t i = 0; i < t2; ++i) {
    double* row = flat.row(i);
    for (int64_t cc = 0; cc < ch; ++cc)
      for (int64_t j = 0; j < f2; ++j) row[cc * f2 + j] = c2.data()[(cc * t2 + i) * f2 + j];
  }
  Tensor y = linear(flat, w.proj);
  const int64_t d = y.cols();
  for (int64_t i = 0; i < t2; ++i) {
    double* row = y.row(i);
    for (int64_t j = 0; j < d; ++j) row[j] += pe_value(i, j, d);
  }
  return y;
}

// Token embedding row scaled by sqrt(d) plus position encoding.
inline void embed_token_row(const Tensor& table, int token, int64_t pos, double* out) {
  const int64_t v = table.rows(), d = table.cols();
  if (token < 0 || token >= v) {
    throw TokenError("token id " + std::to_string(token) + " outside vocabulary of size " + std::to_string(v));
  }
  const double s = std::sqrt(static_cast<double>(d));
  const double* r = table.row(token);
  for (int64_t j = 0; j < d; ++j) out[j] = r[j] * s + pe_value(pos, j, d);
}

inline Tensor embed_tokens(const Tensor& table, const std::vector<int>& tokens, int64_t pos0 = 0) {
  const int64_t d = table.cols();
  Tensor out({static_cast<int64_t>(tokens.size()), d});
  for (size_t i = 0; i < tokens.size(); ++i) {
    embed_token_row(table, tokens[i], pos0 + static_cast<int64_t>(i), out.row(static_cast<int64_t>(i)));
  }
  return out;
}

}  // namespace fastmd
