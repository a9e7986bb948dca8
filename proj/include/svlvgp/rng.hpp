#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace svlvgp {

// Deterministic random source. mt19937_64 has a fully specified output
// sequence, and the uniform/normal transforms below avoid std::
// distributions on purpose: their algorithms are implementation-defined,
// ours are pinned, so a seed reproduces the same stream on any platform.
class SeededRng {
 public:
  static constexpr std::string_view algorithm = "mt19937_64/u53/box-muller";

  explicit SeededRng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n), n > 0, by rejection.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller; the paired draw is cached.
  double normal();

  // Independent stream for a sub-task (restart, fold, worker). Derived
  // from the parent seed only, so forks commute with draw order.
  SeededRng fork(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64 finalizer; used for seed derivation.
std::uint64_t mix64(std::uint64_t x);

}  // namespace svlvgp
