#include "mfbdsde/rng.hpp"

#include <cmath>
#include <numbers>

namespace mfbdsde {
namespace rng {

std::uint64_t mix(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t keyed(std::uint64_t seed, std::uint64_t particle, std::uint64_t step,
                    std::uint64_t tag, std::uint64_t coord) {
  std::uint64_t h = mix(seed);
  h = mix(h ^ particle);
  h = mix(h ^ step);
  h = mix(h ^ tag);
  h = mix(h ^ coord);
  return h;
}

double uniform01(std::uint64_t word) {
  // 53-bit mantissa, shifted off zero
  return (static_cast<double>(word >> 11) + 0.5) * 0x1.0p-53;
}

double normal(std::uint64_t seed, std::uint64_t particle, std::uint64_t step,
              std::uint64_t tag, std::uint64_t coord) {
  std::uint64_t k = keyed(seed, particle, step, tag, coord);
  double u1 = uniform01(mix(k ^ 0x1ULL));
  double u2 = uniform01(mix(k ^ 0x2ULL));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

int sign(std::uint64_t seed, std::uint64_t particle, std::uint64_t step,
         std::uint64_t tag, std::uint64_t coord) {
  return (keyed(seed, particle, step, tag, coord) & 1ULL) ? 1 : -1;
}

}  // namespace rng
}  // namespace mfbdsde
