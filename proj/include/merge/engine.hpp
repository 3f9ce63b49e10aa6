// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "merge/recipe.hpp"
#include "merge/safetensors.hpp"

namespace merge {

/// Summary of one completed merge run.
struct MergeReport {
  std::string method;
  std::string output;
  std::size_t tensors_total = 0;
  std::size_t tensors_2d = 0;
  std::size_t tensors_1d = 0;
  std::vector<std::string> tensors_copied;   // backbone copies under copy_backbone
  std::vector<std::string> tensors_ignored;  // model-only tensors skipped under copy_backbone
  std::uint64_t total_params = 0;
  unsigned threads = 1;
  double wall_ms = 0.0;
  std::uint64_t peak_resident_bytes = 0;  // working-set estimate across in-flight tensors

  nlohmann::json to_json() const;
};

/// Applies one method to a single tensor group. Exposed for tests that
/// compare the engine output against a serial per-tensor loop.
std::vector<float> merge_tensor(const MergeRecipe& recipe, const TensorData& backbone,
                                const std::vector<TensorData>& models);

/// Runs a full merge: validates the inputs, merges every tensor with the
/// recipe's method (in parallel across tensors), and streams the results
/// into the output checkpoint. Nothing is written until validation passes;
/// a failed run leaves no output file behind.
MergeReport run_merge(const MergeRecipe& recipe);

}  // namespace merge
