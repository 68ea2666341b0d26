#pragma once

#include <iostream>

#include <CLI11.hpp>

#include "fastmd/fastmd.hpp"

namespace fastmd {

namespace cli_detail {

inline std::vector<std::pair<std::string, DecodeConfig>> build_modes(const std::string& modes_csv,
                                                                     const DecodeConfig& base) {
  std::vector<std::pair<std::string, DecodeConfig>> modes;
  std::istringstream is(modes_csv);
  std::string name;
  while (std::getline(is, name, ',')) {
    if (name.empty()) continue;
    DecodeConfig c = base;
    c.mode = parse_decode_mode(name);
    modes.emplace_back(name, c);
  }
  if (modes.empty()) throw ValueError("no decode modes given");
  return modes;
}

inline std::optional<NgramLm> maybe_fit_lm(const Corpus& corpus, double lm_weight, int lm_order) {
  if (lm_weight <= 0.0) return std::nullopt;
  std::vector<std::vector<int>> text;
  for (const auto& u : corpus.utts) text.push_back(u.src);
  return NgramLm::fit(text, lm_order, corpus.src_vocab.size());
}

inline void print_result(const std::string& id, const DecodeResult& res, const Corpus& corpus) {
  std::cout << "id=" << id << "\ttranscript=" << join_tokens(res.transcript, corpus.src_vocab)
            << "\ttranslation=" << join_tokens(res.translation, corpus.tgt_vocab) << "\n";
}

}  // namespace cli_detail

// Command-line entry point; args exclude the program name. Exit codes:
// 0 success, 1 usage or runtime error, 2 format error, 3 verification
// failure.
inline int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Multi-decoder speech translation decoding engine"};
  app.require_subcommand(1);

  // --- gen ---
  SyntheticSpec gen_spec;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic corpus");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_spec.seed, "RNG seed");
  gen->add_option("--n-utts", gen_spec.n_utts, "Number of utterances");
  gen->add_option("--vocab-size", gen_spec.src_vocab_size, "Non-reserved token count");
  gen->add_option("--len-min", gen_spec.len_min, "Minimum transcript length");
  gen->add_option("--len-max", gen_spec.len_max, "Maximum transcript length");
  gen->add_option("--feat-dim", gen_spec.feat_dim, "Feature dimension");
  gen->callback([&] {
    Corpus corpus = gen_synthetic(gen_spec);
    save_corpus(corpus, gen_out);
    int64_t frames = 0;
    for (const auto& u : corpus.utts) frames += u.feats.rows();
    std::cout << "wrote " << corpus.utts.size() << " utterances, " << frames << " frames, vocab "
              << corpus.src_vocab.size() << "/" << corpus.tgt_vocab.size() << " to " << gen_out << "\n";
  });

  // --- init-model ---
  std::string im_data, im_out, im_encoder = "transformer", im_decoder = "ar", im_interctc = "6";
  uint64_t im_seed = 1;
  MDModelConfig im_cfg;
  auto* im = app.add_subcommand("init-model", "Write a seeded random checkpoint for a configuration");
  im->add_option("--data", im_data, "Corpus directory (provides vocab sizes and feature dim)")->required();
  im->add_option("--out", im_out, "Checkpoint path")->required();
  im->add_option("--seed", im_seed, "RNG seed");
  im->add_option("--encoder", im_encoder, "transformer | conformer");
  im->add_option("--decoder", im_decoder, "ar | cmlm");
  im->add_option("--asr-enc-layers", im_cfg.asr_encoder_layers);
  im->add_option("--asr-dec-layers", im_cfg.asr_decoder_layers);
  im->add_option("--st-enc-layers", im_cfg.st_encoder_layers);
  im->add_option("--st-dec-layers", im_cfg.st_decoder_layers);
  im->add_option("--d-model", im_cfg.d_model);
  im->add_option("--d-ff", im_cfg.d_ff);
  im->add_option("--heads", im_cfg.heads);
  im->add_option("--conv-kernel", im_cfg.conv_kernel);
  auto* im_inter_opt = im->add_option("--interctc", im_interctc, "Comma-separated tap layers, empty to disable");
  im->callback([&] {
    Corpus corpus = load_corpus(im_data);
    if (im_encoder == "transformer") im_cfg.encoder_kind = EncoderKind::Transformer;
    else if (im_encoder == "conformer") im_cfg.encoder_kind = EncoderKind::Conformer;
    else throw ValueError("unknown encoder kind '" + im_encoder + "'");
    if (im_decoder == "ar") im_cfg.decoder_kind = DecoderKind::Autoregressive;
    else if (im_decoder == "cmlm") im_cfg.decoder_kind = DecoderKind::Cmlm;
    else throw ValueError("unknown decoder kind '" + im_decoder + "'");
    im_cfg.asr_vocab_size = corpus.src_vocab.size();
    im_cfg.st_vocab_size = corpus.tgt_vocab.size();
    if (corpus.utts.empty()) throw ValueError("corpus has no utterances");
    im_cfg.feat_dim = static_cast<int>(corpus.utts[0].feats.cols());
    im_cfg.interctc_layers.clear();
    std::istringstream is(im_interctc);
    std::string part;
    while (std::getline(is, part, ',')) {
      if (!part.empty()) im_cfg.interctc_layers.push_back(std::stoi(part));
    }
    // the default tap only applies when the stack is deep enough
    if (im_inter_opt->count() == 0) {
      std::erase_if(im_cfg.interctc_layers, [&](int l) { return l >= im_cfg.asr_encoder_layers; });
    }
    MDModel model = MDModel::random_init(im_cfg, im_seed);
    save_model(model, im_out);
    std::cout << "wrote model (" << (im_encoder) << " encoder, " << im_decoder << " decoder, d_model "
              << im_cfg.d_model << ") to " << im_out << "\n";
  });

  // shared decode flags
  std::string dc_model, dc_data, dc_mode = "slow";
  DecodeConfig dc;
  int lm_order = 2;
  auto add_decode_flags = [&](CLI::App* sub) {
    sub->add_option("--model", dc_model, "Checkpoint path")->required();
    sub->add_option("--data", dc_data, "Corpus directory")->required();
    sub->add_option("--b-asr", dc.b_asr, "ASR beam width");
    sub->add_option("--b-st", dc.b_st, "ST beam width");
    sub->add_option("--k-mask", dc.k_mask, "Mask-CTC refinement iterations");
    sub->add_option("--p-thres", dc.p_thres, "CTC confidence threshold for masking");
    sub->add_option("--ctc-weight", dc.ctc_weight, "CTC prefix-score fusion weight");
    sub->add_option("--lm-weight", dc.lm_weight, "LM fusion weight (fits an n-gram on the corpus)");
    sub->add_option("--lm-order", lm_order, "n-gram order for the fused LM");
    sub->add_option("--max-len-ratio", dc.max_len_ratio, "Output length cap relative to T'");
  };

  // --- decode ---
  int decode_limit = 0;
  bool decode_score = false;
  auto* dec = app.add_subcommand("decode", "Decode a corpus in one mode");
  add_decode_flags(dec);
  dec->add_option("--mode", dc_mode, "slow | fast_parallel | fast_masked");
  dec->add_option("--limit", decode_limit, "Decode only the first N utterances");
  dec->add_flag("--score", decode_score, "Report WER/CER/BLEU against the manifest references");
  dec->callback([&] {
    MDModel model = load_model(dc_model);
    Corpus corpus = load_corpus(dc_data);
    dc.mode = parse_decode_mode(dc_mode);
    auto lm = cli_detail::maybe_fit_lm(corpus, dc.lm_weight, lm_order);
    DecodeCounters totals;
    DecodeTimings ttotals;
    size_t n = corpus.utts.size();
    if (decode_limit > 0) n = std::min(n, static_cast<size_t>(decode_limit));
    std::vector<std::vector<std::string>> hyps;
    std::vector<std::vector<std::vector<std::string>>> refs;
    double wer_sum = 0.0, cer_sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const auto& u = corpus.utts[i];
      DecodeResult res = decode(model, u.feats, dc, lm ? &*lm : nullptr);
      cli_detail::print_result(u.id, res, corpus);
      totals.asr_decoder_passes += res.counters.asr_decoder_passes;
      totals.st_decoder_passes += res.counters.st_decoder_passes;
      totals.encoder_passes += res.counters.encoder_passes;
      ttotals.encode_s += res.timings.encode_s;
      ttotals.asr_stage_s += res.timings.asr_stage_s;
      ttotals.st_stage_s += res.timings.st_stage_s;
      ttotals.total_s += res.timings.total_s;
      if (decode_score) {
        wer_sum += wer(res.transcript, u.src);
        cer_sum += cer(res.transcript, u.src, corpus.src_vocab);
        hyps.push_back(corpus.tgt_vocab.strs(res.translation));
        refs.push_back({corpus.tgt_vocab.strs(u.tgt)});
      }
    }
    std::cout << "counters: asr_decoder_passes=" << totals.asr_decoder_passes
              << " st_decoder_passes=" << totals.st_decoder_passes
              << " encoder_passes=" << totals.encoder_passes << "\n";
    std::cout << "timings_s: encode=" << ttotals.encode_s << " asr_stage=" << ttotals.asr_stage_s
              << " st_stage=" << ttotals.st_stage_s << " total=" << ttotals.total_s << "\n";
    if (decode_score && n > 0) {
      const BleuResult bleu = corpus_bleu(hyps, refs);
      std::cout << "score: wer=" << wer_sum / static_cast<double>(n) << " cer=" << cer_sum / static_cast<double>(n)
                << " bleu=" << bleu.score << "\n";
    }
  });

  // --- bench ---
  std::string bench_modes = "slow,fast_parallel", bench_tsv;
  int bench_runs = 5;
  auto* bn = app.add_subcommand("bench", "Compare decoding modes");
  add_decode_flags(bn);
  bn->add_option("--modes", bench_modes, "Comma-separated mode list");
  bn->add_option("--runs", bench_runs, "Runs per mode (median reported)");
  bn->add_option("--tsv", bench_tsv, "Also write a TSV table to this path");
  bn->callback([&] {
    MDModel model = load_model(dc_model);
    Corpus corpus = load_corpus(dc_data);
    auto lm = cli_detail::maybe_fit_lm(corpus, dc.lm_weight, lm_order);
    std::vector<BenchUtterance> utts;
    for (const auto& u : corpus.utts) utts.push_back({u.id, u.feats});
    BenchReport report = bench(model, utts, cli_detail::build_modes(bench_modes, dc), bench_runs,
                               lm ? &*lm : nullptr);
    std::cout << report.to_text();
    if (!bench_tsv.empty()) {
      std::ofstream out(bench_tsv);
      if (!out) throw FormatError("cannot write " + bench_tsv);
      out << report.to_tsv();
    }
  });

  // --- loss ---
  std::string loss_model, loss_data, loss_mask_mode = "none";
  LossWeights lw;
  bool sample_ctc = false;
  SamplingConfig sc;
  int loss_limit = 0;
  auto* ls = app.add_subcommand("loss", "Loss breakdown per utterance");
  ls->add_option("--model", loss_model, "Checkpoint path")->required();
  ls->add_option("--data", loss_data, "Corpus directory")->required();
  ls->add_option("--lambda-asr", lw.lambda_asr);
  ls->add_option("--lambda-ctc", lw.lambda_ctc);
  ls->add_option("--lambda-inter", lw.lambda_inter);
  ls->add_flag("--sample-ctc", sample_ctc, "Condition the ST path on sampled CTC outputs");
  ls->add_option("--theta-cer", sc.theta_cer, "CER threshold (inf disables)");
  ls->add_option("--mask-mode", loss_mask_mode, "none | random");
  ls->add_option("--seed", sc.rng_seed, "Sampling RNG seed");
  ls->add_option("--limit", loss_limit, "Only the first N utterances");
  ls->callback([&] {
    MDModel model = load_model(loss_model);
    Corpus corpus = load_corpus(loss_data);
    if (loss_mask_mode == "none") sc.mask_mode = MaskMode::None;
    else if (loss_mask_mode == "random") sc.mask_mode = MaskMode::Random;
    else throw ValueError("unknown mask mode '" + loss_mask_mode + "'");
    Rng rng(sc.rng_seed);
    size_t n = corpus.utts.size();
    if (loss_limit > 0) n = std::min(n, static_cast<size_t>(loss_limit));
    LossBreakdown sum;
    for (size_t i = 0; i < n; ++i) {
      const auto& u = corpus.utts[i];
      Conditioning cond = Conditioning::ground_truth();
      if (sample_ctc) {
        cond = Conditioning::provided(ctc_sample(model, u.feats, u.src, corpus.src_vocab, sc, rng));
      }
      LossBreakdown lb = model.compute_losses(u.feats, u.src, u.tgt, lw, cond);
      std::cout << "id=" << u.id << "\tl_st=" << lb.l_st << "\tl_asr_trf=" << lb.l_asr_trf
                << "\tl_asr_ctc=" << lb.l_asr_ctc << "\tl_inter_mean=" << lb.l_inter_mean
                << "\tl_total=" << lb.l_total << "\n";
      sum.l_st += lb.l_st;
      sum.l_asr_trf += lb.l_asr_trf;
      sum.l_asr_ctc += lb.l_asr_ctc;
      sum.l_inter_mean += lb.l_inter_mean;
      sum.l_total += lb.l_total;
    }
    if (n > 0) {
      const double dn = static_cast<double>(n);
      std::cout << "mean: l_st=" << sum.l_st / dn << " l_asr_trf=" << sum.l_asr_trf / dn
                << " l_asr_ctc=" << sum.l_asr_ctc / dn << " l_inter_mean=" << sum.l_inter_mean / dn
                << " l_total=" << sum.l_total / dn << "\n";
    }
  });

  // --- verify ---
  std::string verify_suite = "all";
  uint64_t verify_seed = 0;
  bool verify_failed = false;
  auto* vf = app.add_subcommand("verify", "Run the oracle/gradient/beam verification suites");
  vf->add_option("--suite", verify_suite, "all | ctc | grad | beam");
  vf->add_option("--seed", verify_seed, "Base seed offset");
  vf->callback([&] {
    std::vector<CheckResult> checks;
    if (verify_suite == "all") checks = verify_all(verify_seed);
    else if (verify_suite == "ctc") checks = verify_ctc_suite(7 + verify_seed);
    else if (verify_suite == "grad") checks = verify_grad_suite(11 + verify_seed);
    else if (verify_suite == "beam") checks = verify_beam_suite(13 + verify_seed);
    else throw ValueError("unknown suite '" + verify_suite + "'");
    for (const auto& c : checks) {
      std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name << ": " << c.detail << "\n";
      verify_failed |= !c.pass;
    }
  });

  std::vector<const char*> argv;
  argv.push_back("fastmd");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return verify_failed ? 3 : 0;
}

}  // namespace fastmd
