#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include <Eigen/Core>

namespace spf {

/// Purpose tags used to derive independent child streams. Adding a new
/// consumer means adding a new tag, never reusing one.
enum class Purpose : std::uint64_t {
  Init = 1,
  Process = 2,
  Resample = 3,
  Truth = 4,
  Sensor = 5,
  Scenario = 6,
  Test = 7,
};

/// Seeded random stream with a portable draw sequence.
///
/// The engine is std::mt19937_64 (fully specified by the standard). The
/// uniform and normal transforms are done here rather than through
/// <random> distributions, whose algorithms are implementation-defined.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  /// Stream derived from (seed, step, purpose). Does not depend on, or
  /// advance, this stream's position.
  RngStream child(std::uint64_t step, Purpose purpose) const {
    return child(step, static_cast<std::uint64_t>(purpose));
  }

  RngStream child(std::uint64_t step, std::uint64_t tag) const {
    std::seed_seq seq{lo(seed_), hi(seed_), lo(step), hi(step), lo(tag), hi(tag)};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    const std::uint64_t derived = (static_cast<std::uint64_t>(words[1]) << 32) | words[0];
    RngStream out(derived);
    std::seed_seq seq2{lo(seed_), hi(seed_), lo(step), hi(step), lo(tag), hi(tag)};
    out.engine_.seed(seq2);
    return out;
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % n;
  }

  /// Standard normal draw (Box-Muller, second value cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

 private:
  static std::uint32_t lo(std::uint64_t v) { return static_cast<std::uint32_t>(v); }
  static std::uint32_t hi(std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace spf
