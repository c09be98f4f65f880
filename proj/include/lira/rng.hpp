#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace lira {

// SplitMix64 output function (Steele, Lea & Flood). Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a over the tag bytes; used to key child streams by purpose.
constexpr std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives a child key from (parent key, purpose tag, index). Children with
// different tags or indices are statistically independent.
constexpr std::uint64_t derive_key(std::uint64_t parent, std::string_view tag,
                                   std::uint64_t index = 0) {
  return mix64(mix64(parent ^ hash_tag(tag)) + 0x9e3779b97f4a7c15ULL * (index + 1));
}

/*!
 * Counter-based random stream.
 *
 * Output n is mix64(key + (n+1) * golden), so the stream is a pure function
 * of (key, counter). Streams are split by deriving new keys rather than by
 * advancing shared state, which makes every consumer reproducible regardless
 * of iteration order or thread scheduling.
 *
 * Satisfies UniformRandomBitGenerator, so it plugs into <random>
 * distributions and std::shuffle.
 */
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit Stream(std::uint64_t key) : key_(key) {}
  Stream(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0)
      : key_(derive_key(seed, tag, index)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    ++counter_;
    return mix64(key_ + 0x9e3779b97f4a7c15ULL * counter_);
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  // Child stream; does not disturb this stream's counter.
  Stream split(std::string_view tag, std::uint64_t index = 0) const {
    return Stream(derive_key(key_, tag, index));
  }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace lira
