// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "merge/rng.hpp"

namespace merge {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv1a_bytes(std::uint64_t hash, const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= kFnvPrime;
  }
  return hash;
}

}  // namespace

std::uint64_t tensor_seed(std::uint64_t run_seed, std::string_view tensor_name,
                          std::uint64_t model_index) {
  std::uint64_t hash = fnv1a_bytes(kFnvOffset, &run_seed, sizeof(run_seed));
  hash = fnv1a_bytes(hash, tensor_name.data(), tensor_name.size());
  hash = fnv1a_bytes(hash, &model_index, sizeof(model_index));
  return hash;
}

}  // namespace merge
