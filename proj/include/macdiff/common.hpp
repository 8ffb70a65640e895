#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace macdiff {

// Error taxonomy. Every failure surfaces as one of these so callers (and the
// CLI) can distinguish bad files from bad configs from numeric blowups.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct IoError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ValueError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};

// Deterministic RNG. Wraps mt19937_64 (bit-exact stream per the standard) and
// implements its own distributions so draws do not depend on libstdc++
// internals. No hidden state between calls, which keeps serialization to the
// raw engine state sufficient for exact training resumption.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw ValueError("Rng::uniform_int: n must be positive");
    // rejection sampling to avoid modulo bias
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // standard normal via Marsaglia polar, second value discarded (stateless)
  double normal() {
    for (;;) {
      const double u = 2.0 * uniform() - 1.0;
      const double v = 2.0 * uniform() - 1.0;
      const double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_int(i)]);
    }
  }

  // first k of a uniformly shuffled [0, n) index range (partial Fisher-Yates)
  std::vector<int> sample_without_replacement(int n, int k) {
    if (k < 0 || k > n) throw ValueError("sample_without_replacement: k out of range");
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < k; ++i) {
      const int j = i + static_cast<int>(uniform_int(static_cast<std::uint64_t>(n - i)));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

  std::string serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void deserialize(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    if (is.fail()) throw FormatError("Rng::deserialize: malformed engine state");
  }

 private:
  std::mt19937_64 engine_;
};

inline void check_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite value");
}

template <typename Seq>
inline bool all_finite(const Seq& v) {
  for (const auto x : v) {
    if (!std::isfinite(static_cast<double>(x))) return false;
  }
  return true;
}

// FNV-1a, used for config fingerprints
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t h);

// Worker cap shared by the few parallel loops in the project. Reads
// MACDIFF_THREADS once; defaults to hardware concurrency.
int worker_threads();

// Runs fn(i) for i in [0, n) on up to worker_threads() threads. Each index
// must write only its own outputs; results are then deterministic.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace macdiff
