#pragma once

#include <cstdint>
#include <random>

namespace scrl {

using Rng = std::mt19937_64;

// Independent stream for (seed, stream): per-step, per-worker, per-rollout.
inline Rng make_rng(uint64_t seed, uint64_t stream = 0) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(stream), static_cast<uint32_t>(stream >> 32)};
  return Rng(seq);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace scrl
