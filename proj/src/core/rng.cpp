#include "hypevents/core/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "hypevents/core/error.hpp"

namespace hypevents {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kSeedSalt = 0x6A09E667F3BCC909ULL;
constexpr std::uint64_t kSplitSalt = 0xBB67AE8584CAA73BULL;
}  // namespace

std::uint64_t mix64(std::uint64_t x) noexcept {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t hash_name(std::string_view name) noexcept {
  // FNV-1a, then mixed so short names still spread over all bits.
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return mix64(h);
}

RngStream::RngStream(std::uint64_t seed) : key_(mix64(seed ^ kSeedSalt)) {}

RngStream RngStream::split(std::uint64_t tag) const {
  return RngStream(FromKey{}, mix64(key_ ^ mix64(tag + kSplitSalt)) + kGolden);
}

RngStream RngStream::split(std::string_view name) const {
  return split(hash_name(name));
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t z = key_ ^ (counter_ * kGolden);
  ++counter_;
  return mix64(mix64(z) + key_);
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t RngStream::below(std::size_t n) {
  if (n == 0) throw Error(ErrorCode::contract, "RngStream::below: n must be positive");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return static_cast<std::size_t>(x % bound);
}

}  // namespace hypevents
