#pragma once

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "fastmd/io_vocab.hpp"
#include "fastmd/model.hpp"

namespace fastmd {

using WeightMap = std::map<std::string, Tensor>;

namespace detail {

inline void put_u32(std::string& buf, uint32_t v) {
  for (int b = 0; b < 4; ++b) buf.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

inline void put_f32(std::string& buf, float f) { put_u32(buf, std::bit_cast<uint32_t>(f)); }

struct ByteReader {
  std::string data;
  size_t pos = 0;
  std::string context = "header";

  void need(size_t n, const char* what) {
    if (pos + n > data.size()) {
      throw FormatError("checkpoint truncated while reading " + std::string(what) + " (entry: " + context + ")");
    }
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<uint32_t>(static_cast<unsigned char>(data[pos + static_cast<size_t>(b)])) << (8 * b);
    pos += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = data.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

// Container format "FMD1": magic, u32 LE version, u32 LE entry count, then
// per entry: u32 name length, UTF-8 name, u32 rank, u32 dims, f32 LE
// row-major payload. Doubles are narrowed to f32 on save and widened back on
// load.
inline constexpr uint32_t kCheckpointVersion = 1;

inline std::string serialize_checkpoint(const WeightMap& weights) {
  std::string buf;
  buf += "FMD1";
  detail::put_u32(buf, kCheckpointVersion);
  detail::put_u32(buf, static_cast<uint32_t>(weights.size()));
  for (const auto& [name, t] : weights) {
    detail::put_u32(buf, static_cast<uint32_t>(name.size()));
    buf += name;
    detail::put_u32(buf, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) detail::put_u32(buf, static_cast<uint32_t>(t.dim(i)));
    for (int64_t i = 0; i < t.numel(); ++i) detail::put_f32(buf, static_cast<float>(t.data()[i]));
  }
  return buf;
}

inline void save_checkpoint(const WeightMap& weights, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint " + path);
  const std::string buf = serialize_checkpoint(weights);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError("short write to checkpoint " + path);
}

inline WeightMap parse_checkpoint(std::string bytes, const std::string& origin) {
  detail::ByteReader r;
  r.data = std::move(bytes);
  if (r.bytes(4, "magic") != "FMD1") throw FormatError(origin + ": bad magic, not an FMD1 checkpoint");
  const uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError(origin + ": unsupported version " + std::to_string(version));
  }
  const uint32_t count = r.u32("entry count");
  WeightMap weights;
  for (uint32_t e = 0; e < count; ++e) {
    r.context = "#" + std::to_string(e);
    const uint32_t name_len = r.u32("name length");
    const std::string name = r.bytes(name_len, "name");
    r.context = name;
    const uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) throw FormatError(origin + ": entry " + name + " has invalid rank");
    std::vector<int64_t> dims;
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      const uint32_t d = r.u32("dims");
      if (d == 0) throw FormatError(origin + ": entry " + name + " has zero extent");
      dims.push_back(static_cast<int64_t>(d));
      numel *= static_cast<int64_t>(d);
    }
    std::vector<double> data(static_cast<size_t>(numel));
    for (int64_t i = 0; i < numel; ++i) data[static_cast<size_t>(i)] = static_cast<double>(r.f32("payload"));
    if (!weights.emplace(name, Tensor::from(std::move(dims), std::move(data))).second) {
      throw FormatError(origin + ": duplicate entry " + name);
    }
  }
  if (r.pos != r.data.size()) throw FormatError(origin + ": trailing bytes after last entry");
  return weights;
}

inline WeightMap load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(std::move(bytes), path);
}

// --- model persistence ----------------------------------------------------

namespace detail {

inline Tensor scalar_tensor(double v) { return Tensor::from({1}, {v}); }

inline int config_int(const WeightMap& w, const std::string& name) {
  auto it = w.find(name);
  if (it == w.end()) throw FormatError("checkpoint lacks config entry " + name);
  return static_cast<int>(std::llround(it->second.data()[0]));
}

}  // namespace detail

inline WeightMap model_to_weights(const MDModel& model) {
  WeightMap w;
  const MDModelConfig& c = model.cfg;
  w["config/asr_encoder_layers"] = detail::scalar_tensor(c.asr_encoder_layers);
  w["config/asr_decoder_layers"] = detail::scalar_tensor(c.asr_decoder_layers);
  w["config/st_encoder_layers"] = detail::scalar_tensor(c.st_encoder_layers);
  w["config/st_decoder_layers"] = detail::scalar_tensor(c.st_decoder_layers);
  w["config/d_model"] = detail::scalar_tensor(c.d_model);
  w["config/d_ff"] = detail::scalar_tensor(c.d_ff);
  w["config/heads"] = detail::scalar_tensor(c.heads);
  w["config/encoder_kind"] = detail::scalar_tensor(c.encoder_kind == EncoderKind::Conformer ? 1 : 0);
  w["config/conv_kernel"] = detail::scalar_tensor(c.conv_kernel);
  w["config/asr_vocab_size"] = detail::scalar_tensor(c.asr_vocab_size);
  w["config/st_vocab_size"] = detail::scalar_tensor(c.st_vocab_size);
  w["config/decoder_kind"] = detail::scalar_tensor(c.decoder_kind == DecoderKind::Cmlm ? 1 : 0);
  w["config/feat_dim"] = detail::scalar_tensor(c.feat_dim);
  if (!c.interctc_layers.empty()) {
    std::vector<double> taps;
    for (int l : c.interctc_layers) taps.push_back(static_cast<double>(l));
    w["config/interctc_layers"] = Tensor::from({static_cast<int64_t>(taps.size())}, taps);
  }
  model.visit_params([&](const std::string& name, const Tensor& t) { w[name] = t; });
  return w;
}

inline MDModel model_from_weights(const WeightMap& w, const std::string& origin = "checkpoint") {
  MDModelConfig c;
  c.asr_encoder_layers = detail::config_int(w, "config/asr_encoder_layers");
  c.asr_decoder_layers = detail::config_int(w, "config/asr_decoder_layers");
  c.st_encoder_layers = detail::config_int(w, "config/st_encoder_layers");
  c.st_decoder_layers = detail::config_int(w, "config/st_decoder_layers");
  c.d_model = detail::config_int(w, "config/d_model");
  c.d_ff = detail::config_int(w, "config/d_ff");
  c.heads = detail::config_int(w, "config/heads");
  c.encoder_kind = detail::config_int(w, "config/encoder_kind") ? EncoderKind::Conformer : EncoderKind::Transformer;
  c.conv_kernel = detail::config_int(w, "config/conv_kernel");
  c.asr_vocab_size = detail::config_int(w, "config/asr_vocab_size");
  c.st_vocab_size = detail::config_int(w, "config/st_vocab_size");
  c.decoder_kind = detail::config_int(w, "config/decoder_kind") ? DecoderKind::Cmlm : DecoderKind::Autoregressive;
  c.feat_dim = detail::config_int(w, "config/feat_dim");
  c.interctc_layers.clear();
  if (auto it = w.find("config/interctc_layers"); it != w.end()) {
    for (int64_t i = 0; i < it->second.numel(); ++i) {
      c.interctc_layers.push_back(static_cast<int>(std::llround(it->second.data()[i])));
    }
  }

  MDModel model = MDModel::zeros(c);
  size_t used = 0;
  model.visit_params([&](const std::string& name, Tensor& t) {
    auto it = w.find(name);
    if (it == w.end()) throw FormatError(origin + ": missing weight entry " + name);
    if (it->second.dims() != t.dims()) {
      throw FormatError(origin + ": weight entry " + name + " has shape " + it->second.shape_str() +
                        ", expected " + t.shape_str());
    }
    t = it->second;
    ++used;
  });
  size_t config_entries = 0;
  for (const auto& [name, t] : w) {
    if (name.rfind("config/", 0) == 0) ++config_entries;
  }
  if (used + config_entries != w.size()) {
    for (const auto& [name, t] : w) {
      // report the first entry the model did not consume
      if (name.rfind("config/", 0) == 0) continue;
      bool known = false;
      model.visit_params([&](const std::string& n, const Tensor&) { known |= (n == name); });
      if (!known) throw FormatError(origin + ": unexpected weight entry " + name);
    }
  }
  return model;
}

inline void save_model(const MDModel& model, const std::string& path) {
  save_checkpoint(model_to_weights(model), path);
}

inline MDModel load_model(const std::string& path) { return model_from_weights(load_checkpoint(path), path); }

// --- manifest ---------------------------------------------------------------

struct ManifestRecord {
  std::string id;
  std::string feat_key;
  int64_t n_frames = 0;
  std::string src_text;
  std::string tgt_text;
};

inline void save_manifest(const std::vector<ManifestRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write manifest " + path);
  for (const auto& r : records) {
    out << "id=" << r.id << "\tfeat=" << r.feat_key << "\tframes=" << r.n_frames << "\tsrc=" << r.src_text
        << "\ttgt=" << r.tgt_text << "\n";
  }
}

inline std::vector<ManifestRecord> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path);
  std::vector<ManifestRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ManifestRecord rec;
    bool have_id = false, have_feat = false, have_frames = false, have_src = false, have_tgt = false;
    size_t pos = 0;
    while (pos <= line.size()) {
      size_t tab = line.find('\t', pos);
      const std::string field = line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos);
      pos = (tab == std::string::npos) ? line.size() + 1 : tab + 1;
      const size_t eq = field.find('=');
      if (eq == std::string::npos) {
        throw FormatError(path + ":" + std::to_string(line_no) + ": field without '=': " + field);
      }
      const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
      if (key == "id") rec.id = value, have_id = true;
      else if (key == "feat") rec.feat_key = value, have_feat = true;
      else if (key == "frames") rec.n_frames = std::stoll(value), have_frames = true;
      else if (key == "src") rec.src_text = value, have_src = true;
      else if (key == "tgt") rec.tgt_text = value, have_tgt = true;
      else throw FormatError(path + ":" + std::to_string(line_no) + ": unknown field '" + key + "'");
    }
    if (!(have_id && have_feat && have_frames && have_src && have_tgt)) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": incomplete record");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

// --- synthetic corpus -------------------------------------------------------

struct SyntheticSpec {
  uint64_t seed = 1;
  int n_utts = 10;
  int src_vocab_size = 10;  // non-reserved token count
  int len_min = 3;
  int len_max = 8;
  int feat_dim = 16;
};

struct Utterance {
  std::string id;
  std::vector<int> src, tgt;
  Tensor feats;
};

struct Corpus {
  Vocabulary src_vocab, tgt_vocab;
  std::vector<Utterance> utts;
};

namespace detail {

inline std::string base26(int i, int width) {
  std::string s(static_cast<size_t>(width), 'a');
  for (int p = width - 1; p >= 0 && i > 0; --p) {
    s[static_cast<size_t>(p)] = static_cast<char>('a' + i % 26);
    i /= 26;
  }
  return s;
}

}  // namespace detail

// Deterministic synthetic task: per-token embeddings repeated 6..10 frames
// plus noise; the target is the source mapped through a fixed vocabulary
// permutation and reversed, so translation is a checkable function of the
// transcript.
inline Corpus gen_synthetic(const SyntheticSpec& spec) {
  if (spec.src_vocab_size < 2) throw ValueError("gen_synthetic: need at least 2 non-reserved tokens");
  if (spec.n_utts < 1) throw ValueError("gen_synthetic: need at least 1 utterance");
  if (spec.len_min < 1 || spec.len_max < spec.len_min) throw ValueError("gen_synthetic: bad length range");
  if (spec.feat_dim < 1) throw ValueError("gen_synthetic: bad feature dim");

  Rng rng(spec.seed);
  const int n = spec.src_vocab_size;
  int width = 2;
  while (std::pow(26.0, width) < n) ++width;

  std::vector<std::string> src_tokens, tgt_tokens;
  for (int i = 0; i < n; ++i) src_tokens.push_back(detail::base26(i, width));
  for (int i = 0; i < n; ++i) tgt_tokens.push_back("t" + detail::base26(i, width));

  Corpus corpus;
  corpus.src_vocab = Vocabulary::from_tokens(src_tokens);
  corpus.tgt_vocab = Vocabulary::from_tokens(tgt_tokens);

  // fixed per-token embedding table
  Tensor table({n, spec.feat_dim});
  for (double& v : table.raw()) v = rng.normal();

  // fixed vocabulary permutation
  std::vector<int> perm(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i) {
    const int64_t j = rng.below(i + 1);
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
  }

  for (int u = 0; u < spec.n_utts; ++u) {
    Utterance utt;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "u%04d", u);
    utt.id = buf;
    const int len = spec.len_min + static_cast<int>(rng.below(spec.len_max - spec.len_min + 1));
    std::vector<int> repeats;
    int64_t frames = 0;
    for (int i = 0; i < len; ++i) {
      utt.src.push_back(kNumReserved + static_cast<int>(rng.below(n)));
      repeats.push_back(6 + static_cast<int>(rng.below(5)));
      frames += repeats.back();
    }
    for (int i = len - 1; i >= 0; --i) {
      utt.tgt.push_back(kNumReserved + perm[static_cast<size_t>(utt.src[static_cast<size_t>(i)] - kNumReserved)]);
    }
    utt.feats = Tensor({frames, spec.feat_dim});
    int64_t row = 0;
    for (int i = 0; i < len; ++i) {
      const double* emb = table.row(utt.src[static_cast<size_t>(i)] - kNumReserved);
      for (int r = 0; r < repeats[static_cast<size_t>(i)]; ++r, ++row) {
        double* dst = utt.feats.row(row);
        for (int jf = 0; jf < spec.feat_dim; ++jf) dst[jf] = emb[jf] + 0.1 * rng.normal();
      }
    }
    corpus.utts.push_back(std::move(utt));
  }
  return corpus;
}

inline std::string join_tokens(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string s;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) s.push_back(' ');
    s += vocab.str(ids[i]);
  }
  return s;
}

inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream is(text);
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

inline void save_corpus(const Corpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  corpus.src_vocab.save(dir + "/vocab.src.txt");
  corpus.tgt_vocab.save(dir + "/vocab.tgt.txt");
  std::vector<ManifestRecord> records;
  WeightMap feats;
  for (const auto& u : corpus.utts) {
    ManifestRecord r;
    r.id = u.id;
    r.feat_key = u.id;
    r.n_frames = u.feats.rows();
    r.src_text = join_tokens(u.src, corpus.src_vocab);
    r.tgt_text = join_tokens(u.tgt, corpus.tgt_vocab);
    records.push_back(std::move(r));
    feats[u.id] = u.feats;
  }
  save_manifest(records, dir + "/manifest.tsv");
  save_checkpoint(feats, dir + "/feats.fmd");
}

inline Corpus load_corpus(const std::string& dir) {
  Corpus corpus;
  corpus.src_vocab = Vocabulary::load(dir + "/vocab.src.txt");
  corpus.tgt_vocab = Vocabulary::load(dir + "/vocab.tgt.txt");
  const auto records = load_manifest(dir + "/manifest.tsv");
  WeightMap feats = load_checkpoint(dir + "/feats.fmd");
  for (const auto& r : records) {
    auto it = feats.find(r.feat_key);
    if (it == feats.end()) {
      throw FormatError(dir + "/manifest.tsv: feature key " + r.feat_key + " not in feats.fmd");
    }
    Utterance u;
    u.id = r.id;
    u.src = corpus.src_vocab.ids(split_words(r.src_text));
    u.tgt = corpus.tgt_vocab.ids(split_words(r.tgt_text));
    u.feats = std::move(it->second);
    if (u.feats.rank() != 2 || u.feats.rows() != r.n_frames) {
      throw FormatError(dir + "/manifest.tsv: frame count for " + r.id + " does not match stored tensor");
    }
    corpus.utts.push_back(std::move(u));
  }
  return corpus;
}

}  // namespace fastmd
