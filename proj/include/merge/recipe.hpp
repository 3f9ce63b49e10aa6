// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "merge/safetensors.hpp"
#include "merge/widen.hpp"

namespace merge {

enum class Method {
  kWiden,
  kAverage,
  kTaskArithmetic,
  kSlerp,
  kModelStock,
  kTies,
  kBreadcrumbs,
  kDareTaskArithmetic,
  kMagnitudePruneTaskArithmetic,
};

std::string_view to_string(Method method);
Method method_from_string(std::string_view name);

enum class MissingTensorPolicy {
  kError,         // any name-set difference aborts the merge
  kCopyBackbone,  // tensors absent from some model are copied from the backbone
};

std::string_view to_string(MissingTensorPolicy policy);
MissingTensorPolicy missing_tensor_policy_from_string(std::string_view name);

/// Method hyperparameters. Field names match the recipe JSON keys; defaults
/// are the midpoints of the documented search grids.
struct MethodParams {
  double t = 1.0;           // crucial-threshold multiple (widen)
  double s = 1.0;           // calibration score (widen)
  double lambda = 0.5;      // task-arithmetic scaling term
  double phi = 0.5;         // spherical interpolation factor (slerp)
  double keep_ratio = 0.9;  // fraction of delta entries retained (ties, breadcrumbs)
  double mask_top = 0.01;   // fraction of largest-magnitude entries masked (breadcrumbs)
  double drop_rate = 0.9;   // random or magnitude drop fraction (dare, pruning)
  std::uint64_t seed = 0;   // run seed for randomized methods
  WidenVariant variant = WidenVariant::kFull;
};

/// Declarative description of one merge run. A recipe file fully determines
/// the output bytes: same recipe, same result.
struct MergeRecipe {
  std::filesystem::path backbone;
  std::vector<std::filesystem::path> models;
  Method method = Method::kWiden;
  MethodParams params;
  MissingTensorPolicy missing_tensor_policy = MissingTensorPolicy::kError;
  DtypePolicy dtype_policy = DtypePolicy::kPreserveInput;
  std::filesystem::path output;
  unsigned threads = 0;  // 0 = auto
};

/// Parses a recipe document. Unknown keys anywhere are rejected; scalar
/// fields only (see grid_search_expand for list-valued parameters).
MergeRecipe parse_recipe(const nlohmann::json& doc);
MergeRecipe load_recipe(const std::filesystem::path& path);
nlohmann::json recipe_to_json(const MergeRecipe& recipe);

/// Range and arity checks shared by the CLI and the engine.
void validate_recipe(const MergeRecipe& recipe);

/// Expands a recipe whose numeric params may be lists into the Cartesian
/// product of concrete recipes. Each gets the output path suffixed with the
/// listed parameter values (e.g. `out_t1_s0.5.safetensors`).
std::vector<MergeRecipe> grid_search_expand(const nlohmann::json& doc);

}  // namespace merge
