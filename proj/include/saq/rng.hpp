#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace saq {

// Seeded random stream with explicit, serializable state.
//
// All randomness in the library flows through RandomStream instances created
// from explicit seeds. Normal deviates use a cache-free Box-Muller transform
// so the stream state is exactly the underlying engine state, which makes
// checkpointed state a plain text string.
class RandomStream {
 public:
  RandomStream() : engine_(0) {}
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1).
  double uniform() {
    // 53 random mantissa bits, same construction everywhere.
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; both uniforms consumed, no cached spare.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Integer in [0, n).
  std::uint64_t next_index(std::uint64_t n) {
    // Rejection-free modulo is fine here: n is tiny relative to 2^64.
    return engine_() % n;
  }

  // Categorical draw from nonnegative weights summing to ~1.
  std::size_t categorical(const std::vector<double>& probs) {
    double u = uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return probs.size() - 1;
  }

  // Fisher-Yates shuffle of an index vector.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derive an independent child stream (e.g. one per epoch).
  RandomStream derive(std::uint64_t salt) {
    RandomStream child;
    child.engine_.seed(engine_() ^ (0x9e3779b97f4a7c15ULL * (salt + 1)));
    return child;
  }

  std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void restore(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace saq
