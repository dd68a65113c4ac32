#pragma once

#include <cstddef>
#include <cstdint>

#include "mmfusion/matrix.hpp"

namespace mmfusion {

std::uint64_t splitmix64(std::uint64_t& state);

// Mixes a base seed with a stream index (epoch, video id, ...) into a new seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// PCG32 (XSH-RR) with state and increment expanded from the user seed by
// SplitMix64. All draws are built from 32-bit outputs with explicit
// arithmetic so sequences are identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  std::uint32_t next_u32();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n). n must be positive.
  std::uint32_t below(std::uint32_t n);
  double normal();

 private:
  std::uint64_t seed_;
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Glorot-uniform initialization in +-sqrt(6 / (rows + cols)).
Matrix xavier_init(std::size_t rows, std::size_t cols, Rng& rng);

// Inverted-dropout mask: 0 with probability rate, else 1 / (1 - rate).
Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng);

Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

}  // namespace mmfusion
