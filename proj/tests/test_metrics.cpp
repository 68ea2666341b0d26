#include "helpers.hpp"

using namespace fastmd;
using testing::random_features;
using testing::tiny_config;

namespace {

std::vector<std::string> words(const std::string& text) { return split_words(text); }

}  // namespace

TEST_CASE("wer hand cases") {
  REQUIRE(wer(words("a b c"), words("a x c")) == Catch::Approx(1.0 / 3.0));
  REQUIRE(wer(words("a b c"), words("a b c")) == 0.0);
  REQUIRE(wer(words("a a a a"), words("a")) == 3.0);  // insertions push WER past 1
  REQUIRE_THROWS_AS(wer(words("a"), words("")), ValueError);
}

TEST_CASE("bleu perfect match is 100") {
  std::vector<std::vector<std::string>> hyps{words("the cat sat on the mat"), words("a b c d e")};
  std::vector<std::vector<std::vector<std::string>>> refs{{hyps[0]}, {hyps[1]}};
  REQUIRE(corpus_bleu(hyps, refs).score == Catch::Approx(100.0).margin(1e-9));
}

TEST_CASE("bleu clipped unigram precision on the over-generation example") {
  std::vector<std::vector<std::string>> hyps{words("the the the the the the the")};
  std::vector<std::vector<std::vector<std::string>>> refs{{words("the cat is on the mat")}};
  BleuResult r = corpus_bleu(hyps, refs);
  REQUIRE(r.precisions[0] == Catch::Approx(2.0 / 7.0).margin(1e-12));
  REQUIRE(r.score == 0.0);  // no higher-order matches, plain geometric mean
}

TEST_CASE("bleu zero 4-gram matches zero the corpus score") {
  std::vector<std::vector<std::string>> hyps{words("a b c x")};
  std::vector<std::vector<std::vector<std::string>>> refs{{words("a b c d")}};
  REQUIRE(corpus_bleu(hyps, refs).score == 0.0);
}

TEST_CASE("bleu is invariant to utterance order") {
  std::vector<std::vector<std::string>> hyps{words("a b c d"), words("e f g h i"), words("a a b b c")};
  std::vector<std::vector<std::vector<std::string>>> refs{
      {words("a b c d e")}, {words("e f g h i")}, {words("a a b b c d")}};
  const double s1 = corpus_bleu(hyps, refs).score;
  std::vector<std::vector<std::string>> hyps2{hyps[2], hyps[0], hyps[1]};
  std::vector<std::vector<std::vector<std::string>>> refs2{refs[2], refs[0], refs[1]};
  REQUIRE(corpus_bleu(hyps2, refs2).score == Catch::Approx(s1).margin(1e-12));
}

TEST_CASE("bleu multi-reference clipping takes the per-ngram maximum") {
  std::vector<std::vector<std::string>> hyps{words("a a b")};
  std::vector<std::vector<std::vector<std::string>>> one_ref{{words("a b b")}};
  std::vector<std::vector<std::vector<std::string>>> two_refs{{words("a b b"), words("a a c")}};
  REQUIRE(corpus_bleu(hyps, one_ref, 1).precisions[0] == Catch::Approx(2.0 / 3.0));
  REQUIRE(corpus_bleu(hyps, two_refs, 1).precisions[0] == Catch::Approx(1.0));
}

TEST_CASE("bleu brevity penalty uses the closest reference length") {
  std::vector<std::vector<std::string>> hyps{words("a b c")};
  std::vector<std::vector<std::vector<std::string>>> refs{{words("a b c"), words("a b c d e f")}};
  BleuResult r = corpus_bleu(hyps, refs);
  REQUIRE(r.ref_length == 3);  // closest, not longest
  REQUIRE(r.brevity_penalty == 1.0);

  std::vector<std::vector<std::vector<std::string>>> far{{words("a b c d e f")}};
  BleuResult r2 = corpus_bleu(hyps, far);
  REQUIRE(r2.brevity_penalty == Catch::Approx(std::exp(1.0 - 6.0 / 3.0)));
}

TEST_CASE("bleu rejects an empty corpus and mismatched counts") {
  REQUIRE_THROWS_AS(corpus_bleu({}, {}), ValueError);
  std::vector<std::vector<std::string>> hyps{words("a b c d")};
  REQUIRE_THROWS_AS(corpus_bleu(hyps, {}), ValueError);
}

TEST_CASE("only an exact reference match scores 100") {
  std::vector<std::vector<std::string>> hyps{words("a b c d e")};
  std::vector<std::vector<std::vector<std::string>>> refs{{words("a b c d x")}};
  REQUIRE(corpus_bleu(hyps, refs).score < 100.0);
}

TEST_CASE("rtf arithmetic") {
  REQUIRE(rtf(2.0, 1000) == Catch::Approx(0.2).margin(1e-15));
  REQUIRE(rtf(0.0, 500) == 0.0);
  REQUIRE(rtf(1.0, 100, 20.0) == Catch::Approx(0.5));
  REQUIRE_THROWS_AS(rtf(1.0, 0), ValueError);
}

TEST_CASE("bench: self speedup, pass totals and counter exactness") {
  SyntheticSpec spec;
  spec.seed = 21;
  spec.n_utts = 3;
  spec.src_vocab_size = 6;
  spec.len_min = 3;
  spec.len_max = 5;
  spec.feat_dim = 8;
  Corpus corpus = gen_synthetic(spec);
  MDModel m = MDModel::random_init(tiny_config(corpus.src_vocab.size(), corpus.tgt_vocab.size()), 61);

  std::vector<BenchUtterance> utts;
  for (const auto& u : corpus.utts) utts.push_back({u.id, u.feats});

  DecodeConfig slow;
  slow.mode = DecodeMode::Slow;
  slow.b_asr = 4;
  DecodeConfig fast;
  fast.mode = DecodeMode::FastParallel;
  BenchReport report = bench(m, utts, {{"slow", slow}, {"fast_parallel", fast}}, 2);

  REQUIRE(report.baseline == "slow");
  REQUIRE(report.modes[0].speedup == Catch::Approx(1.0));
  REQUIRE(report.modes[1].counters.asr_decoder_passes == static_cast<int64_t>(utts.size()));
  REQUIRE(report.modes[0].counters.asr_decoder_passes > report.modes[1].counters.asr_decoder_passes);
  REQUIRE(report.audio_s == Catch::Approx(0.01 * [&] {
    int64_t f = 0;
    for (const auto& u : utts) f += u.feats.rows();
    return static_cast<double>(f);
  }()));
  REQUIRE(report.modes[0].rtf == Catch::Approx(report.modes[0].wall_median_s / report.audio_s));

  // counters must match a manual instrumented decode
  DecodeCounters manual;
  for (const auto& u : utts) {
    DecodeResult r = decode(m, u.feats, fast);
    manual.asr_decoder_passes += r.counters.asr_decoder_passes;
    manual.st_decoder_passes += r.counters.st_decoder_passes;
    manual.encoder_passes += r.counters.encoder_passes;
  }
  REQUIRE(report.modes[1].counters.asr_decoder_passes == manual.asr_decoder_passes);
  REQUIRE(report.modes[1].counters.st_decoder_passes == manual.st_decoder_passes);
  REQUIRE(report.modes[1].counters.encoder_passes == manual.encoder_passes);

  const std::string text = report.to_text();
  REQUIRE(text.find("slow.speedup: 1.00") != std::string::npos);
  REQUIRE(text.find("fast_parallel.wall_median_s:") != std::string::npos);
  const std::string tsv = report.to_tsv();
  REQUIRE(tsv.find("mode\twall_median_s") != std::string::npos);
}
