#pragma once

#include "mealrec/autograd.hpp"

#include <cstdint>
#include <random>
#include <string_view>

namespace mealrec {

using Rng = std::mt19937_64;

/// Derives an independent seed for a named sub-stream of a master seed
/// (init, shuffle, diffusion, dropout, synth, eval ...).
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index = 0);

inline Rng make_stream(std::uint64_t master, std::string_view stream, std::uint64_t index = 0) {
  return Rng(derive_seed(master, stream, index));
}

/// rows x cols matrix of independent standard normal draws.
Mat gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng);

}  // namespace mealrec
