#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace aera {

// std::shuffle and std::uniform_int_distribution are implementation-defined,
// so splits and samples would differ between standard libraries. These helpers
// only rely on the fully specified mt19937_64 output sequence.

inline std::uint64_t uniform_below(std::mt19937_64& gen, std::uint64_t bound) {
  // Rejection sampling over the top of the 64-bit range.
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
  std::uint64_t x;
  do {
    x = gen();
  } while (x >= limit);
  return x % bound;
}

template <class T>
void seeded_shuffle(std::span<T> items, std::mt19937_64& gen) {
  for (std::size_t i = items.size(); i > 1; --i) {
    auto j = static_cast<std::size_t>(uniform_below(gen, i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

/// FNV-1a; mixes a label into a seed so each subset draws an independent stream.
inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view label) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace aera
