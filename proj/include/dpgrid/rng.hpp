#pragma once

#include <cstdint>
#include <random>

namespace dpgrid {

/// Deterministic random stream with cheap derivation of independent substreams.
///
/// The engine is a std::mt19937_64 (bit-exact across platforms); uniform and
/// normal variates are generated from raw engine output rather than through
/// std distributions, so sequences are reproducible for a given seed anywhere.
/// substream(id) derives a statistically independent stream from (seed, id),
/// which lets parallel and serial executions of per-item draws agree exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Derives an independent stream; substream(i) == substream(i) always.
  Rng substream(std::uint64_t stream_id) const;

  std::uint64_t seed() const { return seed_; }

  /// Uniform on [0, 1).
  double uniform();

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi);

  /// Standard normal via Box-Muller (pairs cached).
  double normal();

  /// Uniform integer in [0, bound).
  std::uint64_t integer(std::uint64_t bound);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

/// splitmix64 finalizer; used for seed mixing.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream_id);

}  // namespace dpgrid
