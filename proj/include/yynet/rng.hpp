#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "yynet/nn/functional.hpp"

namespace yynet {

/// Generator seeded from a tuple of integers, e.g. (seed, epoch, batch).
/// Equal tuples give equal streams; the stream does not depend on call history.
inline Rng derive_rng(std::initializer_list<std::uint64_t> key) {
  std::vector<std::uint32_t> words;
  words.reserve(key.size() * 2);
  for (auto k : key) {
    words.push_back(static_cast<std::uint32_t>(k));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

}  // namespace yynet
