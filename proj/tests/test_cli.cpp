#include <unistd.h>

#include <filesystem>

#include "fastmd/cli.hpp"
#include "helpers.hpp"

using namespace fastmd;

namespace {

std::string temp_dir() {
  static int counter = 0;
  const std::string dir =
      (std::filesystem::temp_directory_path() / ("fastmd_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++)))
          .string();
  std::filesystem::create_directories(dir);
  return dir;
}

struct CaptureOut {
  std::ostringstream captured;
  std::streambuf* old;
  CaptureOut() : old(std::cout.rdbuf(captured.rdbuf())) {}
  ~CaptureOut() { std::cout.rdbuf(old); }
  std::string str() const { return captured.str(); }
};

int run(const std::vector<std::string>& args, std::string* out = nullptr) {
  CaptureOut cap;
  const int code = run_cli(args);
  if (out) *out = cap.str();
  return code;
}

// Extracts "key=value" fields per line for loss-output comparisons.
std::map<std::string, std::string> parse_fields(const std::string& line) {
  std::map<std::string, std::string> fields;
  std::istringstream is(line);
  std::string part;
  while (std::getline(is, part, '\t')) {
    const size_t eq = part.find('=');
    if (eq != std::string::npos) fields[part.substr(0, eq)] = part.substr(eq + 1);
  }
  return fields;
}

}  // namespace

TEST_CASE("cli end to end: gen, init-model, decode, bench, loss, verify") {
  const std::string dir = temp_dir();
  REQUIRE(run({"gen", "--out", dir, "--seed", "9", "--n-utts", "3", "--vocab-size", "6", "--len-min", "2",
               "--len-max", "4", "--feat-dim", "8"}) == 0);
  REQUIRE(std::filesystem::exists(dir + "/manifest.tsv"));
  REQUIRE(std::filesystem::exists(dir + "/feats.fmd"));
  REQUIRE(std::filesystem::exists(dir + "/vocab.src.txt"));

  const std::string model = dir + "/model.fmd";
  REQUIRE(run({"init-model", "--data", dir, "--out", model, "--seed", "4", "--asr-enc-layers", "1",
               "--asr-dec-layers", "1", "--st-enc-layers", "1", "--st-dec-layers", "1", "--d-model", "16",
               "--d-ff", "32", "--heads", "2"}) == 0);

  std::string out;
  REQUIRE(run({"decode", "--model", model, "--data", dir, "--mode", "fast_parallel", "--b-st", "2", "--score"},
              &out) == 0);
  REQUIRE(out.find("id=u0000") != std::string::npos);
  REQUIRE(out.find("transcript=") != std::string::npos);
  REQUIRE(out.find("translation=") != std::string::npos);
  REQUIRE(out.find("counters: asr_decoder_passes=3") != std::string::npos);  // one pass per utterance
  REQUIRE(out.find("score: wer=") != std::string::npos);

  // deterministic output given the same inputs
  std::string out2;
  REQUIRE(run({"decode", "--model", model, "--data", dir, "--mode", "fast_parallel", "--b-st", "2", "--score"},
              &out2) == 0);
  auto strip_timings = [](const std::string& s) {
    std::string r;
    std::istringstream is(s);
    std::string line;
    while (std::getline(is, line))
      if (line.rfind("timings_s:", 0) != 0) r += line + "\n";
    return r;
  };
  REQUIRE(strip_timings(out) == strip_timings(out2));

  std::string bench_out;
  REQUIRE(run({"bench", "--model", model, "--data", dir, "--modes", "slow,fast_parallel", "--runs", "2",
               "--b-asr", "2"},
              &bench_out) == 0);
  REQUIRE(bench_out.find("slow.speedup: 1.00") != std::string::npos);
  REQUIRE(bench_out.find("fast_parallel.speedup:") != std::string::npos);

  std::string loss_out;
  REQUIRE(run({"loss", "--model", model, "--data", dir, "--limit", "2"}, &loss_out) == 0);
  REQUIRE(loss_out.find("l_total=") != std::string::npos);

  std::string verify_out;
  REQUIRE(run({"verify", "--suite", "grad"}, &verify_out) == 0);
  REQUIRE(verify_out.find("[PASS]") != std::string::npos);
}

TEST_CASE("cli cmlm and conformer paths") {
  const std::string dir = temp_dir();
  REQUIRE(run({"gen", "--out", dir, "--seed", "17", "--n-utts", "2", "--vocab-size", "6", "--len-min", "2",
               "--len-max", "4", "--feat-dim", "8"}) == 0);

  const std::string cmlm = dir + "/cmlm.fmd";
  REQUIRE(run({"init-model", "--data", dir, "--out", cmlm, "--seed", "4", "--decoder", "cmlm",
               "--asr-enc-layers", "1", "--asr-dec-layers", "1", "--st-enc-layers", "1", "--st-dec-layers",
               "1", "--d-model", "16", "--d-ff", "32", "--heads", "2"}) == 0);
  std::string out;
  REQUIRE(run({"decode", "--model", cmlm, "--data", dir, "--mode", "fast_masked", "--k-mask", "2"}, &out) == 0);
  REQUIRE(out.find("counters: asr_decoder_passes=4") != std::string::npos);  // k_mask per utterance
  REQUIRE(run({"decode", "--model", cmlm, "--data", dir, "--mode", "slow"}) == 1);  // config error

  const std::string conf = dir + "/conformer.fmd";
  REQUIRE(run({"init-model", "--data", dir, "--out", conf, "--seed", "4", "--encoder", "conformer",
               "--conv-kernel", "5", "--asr-enc-layers", "1", "--asr-dec-layers", "1", "--st-enc-layers", "1",
               "--st-dec-layers", "1", "--d-model", "16", "--d-ff", "32", "--heads", "2"}) == 0);
  REQUIRE(run({"decode", "--model", conf, "--data", dir, "--mode", "fast_parallel"}) == 0);
}

TEST_CASE("cli theta-cer changes only the conditioning path") {
  const std::string dir = temp_dir();
  REQUIRE(run({"gen", "--out", dir, "--seed", "29", "--n-utts", "2", "--vocab-size", "6", "--len-min", "3",
               "--len-max", "4", "--feat-dim", "8"}) == 0);
  const std::string model = dir + "/m.fmd";
  REQUIRE(run({"init-model", "--data", dir, "--out", model, "--seed", "4", "--asr-enc-layers", "1",
               "--asr-dec-layers", "1", "--st-enc-layers", "1", "--st-dec-layers", "1", "--d-model", "16",
               "--d-ff", "32", "--heads", "2"}) == 0);

  std::string inf_out, zero_out;
  REQUIRE(run({"loss", "--model", model, "--data", dir, "--sample-ctc", "--theta-cer", "inf"}, &inf_out) == 0);
  REQUIRE(run({"loss", "--model", model, "--data", dir, "--sample-ctc", "--theta-cer", "0"}, &zero_out) == 0);

  std::istringstream a(inf_out), b(zero_out);
  std::string la, lb;
  int compared = 0;
  while (std::getline(a, la) && std::getline(b, lb)) {
    if (la.rfind("id=", 0) != 0) continue;
    auto fa = parse_fields(la), fb = parse_fields(lb);
    REQUIRE(fa["l_asr_trf"] == fb["l_asr_trf"]);
    REQUIRE(fa["l_asr_ctc"] == fb["l_asr_ctc"]);
    ++compared;
  }
  REQUIRE(compared == 2);
}

TEST_CASE("cli error handling and exit codes") {
  REQUIRE(run({"frobnicate"}) == 1);                       // unknown subcommand
  REQUIRE(run({"gen", "--bogus-flag", "1"}) == 1);         // unknown flag
  REQUIRE(run({"decode"}) == 1);                           // missing required options

  const std::string dir = temp_dir();
  std::ofstream(dir + "/junk.fmd") << "this is not a checkpoint";
  REQUIRE(run({"gen", "--out", dir, "--seed", "1", "--n-utts", "1", "--vocab-size", "4", "--len-min", "2",
               "--len-max", "3", "--feat-dim", "8"}) == 0);
  REQUIRE(run({"decode", "--model", dir + "/junk.fmd", "--data", dir}) == 2);  // format error
  REQUIRE(run({"decode", "--model", dir + "/missing.fmd", "--data", dir}) == 2);

  std::string help_out;
  REQUIRE(run({"--help"}, &help_out) == 0);
}
