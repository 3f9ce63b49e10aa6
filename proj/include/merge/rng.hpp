// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace merge {

/// Deterministic per-tensor seed: FNV-1a over the tensor name and model
/// index, mixed with the run seed. Stable across platforms and independent
/// of thread scheduling.
std::uint64_t tensor_seed(std::uint64_t run_seed, std::string_view tensor_name,
                          std::uint64_t model_index);

/// Uniform double in [0, 1) from the top 53 bits of the generator output.
/// Used instead of std::uniform_real_distribution / bernoulli_distribution,
/// whose mappings are implementation-defined.
inline double next_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace merge
