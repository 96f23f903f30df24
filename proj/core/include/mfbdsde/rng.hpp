#pragma once

#include <cstdint>

namespace mfbdsde {

// Counter-based streams: every variate is a pure function of its key, so
// generation order (and hence the worker count) cannot change the output.
namespace rng {

// Driver tags used when keying increments.
inline constexpr std::uint64_t kTagW = 0x57;  // 'W'
inline constexpr std::uint64_t kTagB = 0x42;  // 'B'

std::uint64_t mix(std::uint64_t x);

// Stateless hash of a 5-part key into a 64-bit word.
std::uint64_t keyed(std::uint64_t seed, std::uint64_t particle, std::uint64_t step,
                    std::uint64_t tag, std::uint64_t coord);

// Uniform on (0, 1), endpoints excluded.
double uniform01(std::uint64_t word);

// Standard normal variate for the given key (Box-Muller on two sub-streams).
double normal(std::uint64_t seed, std::uint64_t particle, std::uint64_t step,
              std::uint64_t tag, std::uint64_t coord);

// ±1 with equal weight.
int sign(std::uint64_t seed, std::uint64_t particle, std::uint64_t step,
         std::uint64_t tag, std::uint64_t coord);

}  // namespace rng
}  // namespace mfbdsde
