#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fastmd {

// Error taxonomy. Everything user-facing derives from Error so the CLI can
// map exceptions to exit codes in one place.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct TokenError : Error {
  using Error::Error;
};
struct InfeasibleError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct ValueError : Error {
  using Error::Error;
};
struct OracleLimitError : Error {
  using Error::Error;
};

// Reserved vocabulary ids, fixed across every model and file format.
inline constexpr int kBlankId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kSosEosId = 2;
inline constexpr int kMaskId = 3;
inline constexpr int kNumReserved = 4;

// Log-space zero sentinel. Large negative finite value instead of -inf so
// fused scores stay finite and log_add never produces NaN.
inline constexpr double kLogZero = -1.0e30;

inline double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b <= kLogZero * 0.5) return a;
  return a + std::log1p(std::exp(b - a));
}

// splitmix64 generator. Used for weight init, synthetic data and masking so
// results are reproducible independent of the standard library's
// distribution implementations.
struct Rng {
  uint64_t state;
  bool has_spare = false;
  double spare = 0.0;

  explicit Rng(uint64_t seed) : state(seed) {}

  uint64_t next_u64() {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int64_t below(int64_t n) { return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }

  double normal() {
    if (has_spare) {
      has_spare = false;
      return spare;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare = r * std::sin(theta);
    has_spare = true;
    return r * std::cos(theta);
  }
};

struct StopWatch {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  void reset() { t0 = std::chrono::steady_clock::now(); }
  double elapsed_s() const {
    auto dt = std::chrono::steady_clock::now() - t0;
    return std::chrono::duration<double>(dt).count();
  }
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace fastmd
