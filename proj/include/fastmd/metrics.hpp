#pragma once

#include <iomanip>
#include <sstream>

#include "fastmd/decode.hpp"
#include "fastmd/sampling.hpp"

namespace fastmd {

// Word error rate: edit distance over word-like symbols, normalized by the
// reference length. May exceed 1 when the hypothesis over-generates.
template <typename Seq>
double wer(const Seq& hyp, const Seq& ref) {
  if (ref.empty()) throw ValueError("wer: reference is empty");
  return static_cast<double>(levenshtein(hyp, ref)) / static_cast<double>(ref.size());
}

struct BleuResult {
  double score = 0.0;           // [0, 100]
  double precisions[4] = {0, 0, 0, 0};
  double brevity_penalty = 1.0;
  int64_t hyp_length = 0;
  int64_t ref_length = 0;
};

namespace detail {

inline std::string ngram_key(const std::vector<std::string>& words, size_t start, size_t n) {
  std::string key;
  for (size_t i = 0; i < n; ++i) {
    if (i) key.push_back('\x1f');
    key += words[start + i];
  }
  return key;
}

inline std::unordered_map<std::string, int64_t> ngram_counts(const std::vector<std::string>& words, size_t n) {
  std::unordered_map<std::string, int64_t> counts;
  if (words.size() >= n) {
    for (size_t i = 0; i + n <= words.size(); ++i) ++counts[ngram_key(words, i, n)];
  }
  return counts;
}

}  // namespace detail

// Corpus-level BLEU with multi-reference clipping and the closest-length
// brevity penalty. Plain geometric mean: any zero precision zeroes the score.
inline BleuResult corpus_bleu(const std::vector<std::vector<std::string>>& hyps,
                              const std::vector<std::vector<std::vector<std::string>>>& refs,
                              int max_order = 4) {
  if (hyps.empty()) throw ValueError("corpus_bleu: empty corpus");
  if (hyps.size() != refs.size()) throw ValueError("corpus_bleu: hypothesis/reference count mismatch");
  if (max_order < 1 || max_order > 4) throw ValueError("corpus_bleu: max_order must lie in [1, 4]");

  std::vector<int64_t> matched(static_cast<size_t>(max_order), 0);
  std::vector<int64_t> total(static_cast<size_t>(max_order), 0);
  int64_t hyp_len = 0, ref_len = 0;

  for (size_t u = 0; u < hyps.size(); ++u) {
    const auto& hyp = hyps[u];
    const auto& uref = refs[u];
    if (uref.empty()) throw ValueError("corpus_bleu: utterance " + std::to_string(u) + " has no references");
    hyp_len += static_cast<int64_t>(hyp.size());
    // closest reference length; ties go to the shorter reference
    int64_t best_ref = static_cast<int64_t>(uref[0].size());
    for (const auto& r : uref) {
      const int64_t len = static_cast<int64_t>(r.size());
      const int64_t cur = std::llabs(len - static_cast<int64_t>(hyp.size()));
      const int64_t best = std::llabs(best_ref - static_cast<int64_t>(hyp.size()));
      if (cur < best || (cur == best && len < best_ref)) best_ref = len;
    }
    ref_len += best_ref;

    for (int n = 1; n <= max_order; ++n) {
      auto hyp_counts = detail::ngram_counts(hyp, static_cast<size_t>(n));
      std::unordered_map<std::string, int64_t> max_ref;
      for (const auto& r : uref) {
        for (const auto& [key, c] : detail::ngram_counts(r, static_cast<size_t>(n))) {
          auto& m = max_ref[key];
          m = std::max(m, c);
        }
      }
      for (const auto& [key, c] : hyp_counts) {
        auto it = max_ref.find(key);
        matched[static_cast<size_t>(n - 1)] += std::min(c, it == max_ref.end() ? 0 : it->second);
        total[static_cast<size_t>(n - 1)] += c;
      }
    }
  }

  BleuResult res;
  res.hyp_length = hyp_len;
  res.ref_length = ref_len;
  double log_prec = 0.0;
  bool zero = false;
  for (int n = 0; n < max_order; ++n) {
    const double p = total[static_cast<size_t>(n)] > 0
                         ? static_cast<double>(matched[static_cast<size_t>(n)]) /
                               static_cast<double>(total[static_cast<size_t>(n)])
                         : 0.0;
    res.precisions[n] = p;
    if (p <= 0.0) zero = true;
    else log_prec += std::log(p);
  }
  res.brevity_penalty =
      (hyp_len >= ref_len || hyp_len == 0) ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  res.score = zero ? 0.0 : 100.0 * res.brevity_penalty * std::exp(log_prec / static_cast<double>(max_order));
  return res;
}

// Real-time factor: wall-clock seconds over audio seconds derived from the
// frame count at the given shift.
inline double rtf(double wall_s, int64_t n_frames, double frame_shift_ms = 10.0) {
  if (n_frames < 1) throw ValueError("rtf: n_frames must be >= 1");
  return wall_s / (static_cast<double>(n_frames) * frame_shift_ms / 1000.0);
}

struct BenchUtterance {
  std::string id;
  Tensor feats;
};

struct BenchModeStats {
  std::string name;
  DecodeConfig config;
  double wall_median_s = 0.0;
  double wall_mean_s = 0.0;
  double encode_median_s = 0.0;
  double asr_stage_median_s = 0.0;
  double st_stage_median_s = 0.0;
  double rtf = 0.0;
  double speedup = 0.0;  // baseline wall / this wall
  DecodeCounters counters;  // totals over all utterances, single run
};

struct BenchReport {
  int runs = 0;
  int64_t n_utterances = 0;
  double audio_s = 0.0;
  std::string baseline;
  std::vector<BenchModeStats> modes;

  std::string to_text() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "runs: " << runs << "\n";
    os << "utterances: " << n_utterances << "\n";
    os << "audio_s: " << audio_s << "\n";
    os << "baseline: " << baseline << "\n";
    for (const auto& m : modes) {
      os << m.name << ".wall_median_s: " << m.wall_median_s << "\n";
      os << m.name << ".wall_mean_s: " << m.wall_mean_s << "\n";
      os << m.name << ".encode_median_s: " << m.encode_median_s << "\n";
      os << m.name << ".asr_stage_median_s: " << m.asr_stage_median_s << "\n";
      os << m.name << ".st_stage_median_s: " << m.st_stage_median_s << "\n";
      os << m.name << ".rtf: " << m.rtf << "\n";
      os << m.name << ".speedup: " << std::setprecision(2) << m.speedup << std::setprecision(4) << "\n";
      os << m.name << ".asr_decoder_passes: " << m.counters.asr_decoder_passes << "\n";
      os << m.name << ".st_decoder_passes: " << m.counters.st_decoder_passes << "\n";
      os << m.name << ".encoder_passes: " << m.counters.encoder_passes << "\n";
    }
    return os.str();
  }

  // Delimiter-separated table, one row per mode, for plotting.
  std::string to_tsv() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6);
    os << "mode\twall_median_s\twall_mean_s\tencode_median_s\tasr_stage_median_s\tst_stage_median_s\trtf\tspeedup\n";
    for (const auto& m : modes) {
      os << m.name << "\t" << m.wall_median_s << "\t" << m.wall_mean_s << "\t" << m.encode_median_s << "\t"
         << m.asr_stage_median_s << "\t" << m.st_stage_median_s << "\t" << m.rtf << "\t" << m.speedup << "\n";
    }
    return os.str();
  }
};

// Decodes every utterance in every mode `runs` times, single stream, and
// reports median wall time, RTF and speedup against the slow mode (or the
// first mode when no slow mode is present). Timing covers decode() only.
inline BenchReport bench(const MDModel& model, const std::vector<BenchUtterance>& corpus,
                         const std::vector<std::pair<std::string, DecodeConfig>>& modes, int runs,
                         const NgramLm* lm = nullptr, double frame_shift_ms = 10.0) {
  if (runs < 1) throw ValueError("bench: runs must be >= 1");
  if (corpus.empty()) throw ValueError("bench: empty corpus");
  if (modes.empty()) throw ValueError("bench: no modes given");

  BenchReport report;
  report.runs = runs;
  report.n_utterances = static_cast<int64_t>(corpus.size());
  int64_t frames = 0;
  for (const auto& u : corpus) frames += u.feats.rows();
  report.audio_s = static_cast<double>(frames) * frame_shift_ms / 1000.0;

  size_t base_idx = 0;
  for (size_t i = 0; i < modes.size(); ++i) {
    if (modes[i].second.mode == DecodeMode::Slow) {
      base_idx = i;
      break;
    }
  }
  report.baseline = modes[base_idx].first;

  for (const auto& [name, config] : modes) {
    BenchModeStats stats;
    stats.name = name;
    stats.config = config;
    std::vector<double> walls, encodes, asr_stages, st_stages;
    for (int r = 0; r < runs; ++r) {
      double wall = 0.0, enc = 0.0, asr = 0.0, st = 0.0;
      DecodeCounters totals;
      for (const auto& u : corpus) {
        DecodeResult res = decode(model, u.feats, config, lm);
        wall += res.timings.total_s;
        enc += res.timings.encode_s;
        asr += res.timings.asr_stage_s;
        st += res.timings.st_stage_s;
        totals.asr_decoder_passes += res.counters.asr_decoder_passes;
        totals.st_decoder_passes += res.counters.st_decoder_passes;
        totals.encoder_passes += res.counters.encoder_passes;
      }
      walls.push_back(wall);
      encodes.push_back(enc);
      asr_stages.push_back(asr);
      st_stages.push_back(st);
      stats.counters = totals;  // identical across runs; keep the last
    }
    stats.wall_median_s = median(walls);
    stats.wall_mean_s = mean(walls);
    stats.encode_median_s = median(encodes);
    stats.asr_stage_median_s = median(asr_stages);
    stats.st_stage_median_s = median(st_stages);
    stats.rtf = stats.wall_median_s / report.audio_s;
    report.modes.push_back(std::move(stats));
  }
  const double base_wall = report.modes[base_idx].wall_median_s;
  for (auto& m : report.modes) m.speedup = (m.wall_median_s > 0.0) ? base_wall / m.wall_median_s : 0.0;
  return report;
}

}  // namespace fastmd
