// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace meg {

/// Explicit, serializable random stream. Every stochastic operation takes one
/// of these by reference; there is no global generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Derives an independent child stream. Advances this stream by one draw,
  /// so repeated splits yield distinct children.
  Rng split();

  /// Child stream that depends only on (seed, stream_id).
  static Rng stream(std::uint64_t seed, std::uint64_t stream_id);

  double uniform();  // [0, 1)
  double normal();
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n);

  /// Fisher-Yates permutation of [0, n).
  std::vector<std::size_t> permutation(std::size_t n);

  std::mt19937_64& engine() { return engine_; }

  std::string serialize() const;
  static Rng deserialize(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace meg
