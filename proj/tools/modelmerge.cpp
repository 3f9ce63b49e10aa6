// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: merge, validate, analyze, and grid subcommands
// over checkpoint files. Machine-readable reports go to stdout, progress
// and diagnostics to stderr.
//
// Exit codes: 0 success, 1 failed validation/unexpected error,
// 2 configuration error, 3 checkpoint error, 4 numeric error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "merge/analysis.hpp"
#include "merge/engine.hpp"
#include "merge/errors.hpp"
#include "merge/recipe.hpp"
#include "merge/safetensors.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitCheckpoint = 3;
constexpr int kExitNumeric = 4;

struct Overrides {
  std::optional<std::string> method;
  std::optional<double> t, s, lambda, phi, keep_ratio, mask_top, drop_rate;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<unsigned> threads;
  std::optional<std::string> dtype_policy;
  std::optional<std::string> output;
};

void add_override_flags(CLI::App& cmd, Overrides& o) {
  cmd.add_option("--method", o.method, "Merge method (overrides the recipe)");
  cmd.add_option("--t", o.t, "Crucial-threshold multiple");
  cmd.add_option("--s", o.s, "Calibration score value");
  cmd.add_option("--lambda", o.lambda, "Task-arithmetic scaling term");
  cmd.add_option("--phi", o.phi, "Spherical interpolation factor");
  cmd.add_option("--keep-ratio", o.keep_ratio, "Fraction of delta entries to retain");
  cmd.add_option("--mask-top", o.mask_top, "Fraction of largest-magnitude entries to mask");
  cmd.add_option("--drop-rate", o.drop_rate, "Drop fraction for dare/pruning");
  cmd.add_option("--seed", o.seed, "Run seed for randomized methods");
  cmd.add_option("--variant", o.variant, "Pipeline variant: full, no_wd, no_rank, no_sc");
  cmd.add_option("--threads", o.threads, "Worker thread count");
  cmd.add_option("--dtype-policy", o.dtype_policy,
                 "Output dtype policy: preserve-input, force-fp32, force-bf16");
  cmd.add_option("--output", o.output, "Output checkpoint path");
}

// Flags are sugar over the recipe file; applying them here is equivalent to
// editing the recipe.
void apply_overrides(merge::MergeRecipe& recipe, const Overrides& o) {
  if (o.method) recipe.method = merge::method_from_string(*o.method);
  if (o.t) recipe.params.t = *o.t;
  if (o.s) recipe.params.s = *o.s;
  if (o.lambda) recipe.params.lambda = *o.lambda;
  if (o.phi) recipe.params.phi = *o.phi;
  if (o.keep_ratio) recipe.params.keep_ratio = *o.keep_ratio;
  if (o.mask_top) recipe.params.mask_top = *o.mask_top;
  if (o.drop_rate) recipe.params.drop_rate = *o.drop_rate;
  if (o.seed) recipe.params.seed = *o.seed;
  if (o.variant) recipe.params.variant = merge::widen_variant_from_string(*o.variant);
  if (o.threads) recipe.threads = *o.threads;
  if (o.dtype_policy) recipe.dtype_policy = merge::dtype_policy_from_string(*o.dtype_policy);
  if (o.output) recipe.output = *o.output;
  merge::validate_recipe(recipe);
}

unsigned env_default_threads() {
  if (const char* env = std::getenv("MODELMERGE_THREADS")) {
    const long value = std::atol(env);
    if (value > 0) {
      return static_cast<unsigned>(value);
    }
  }
  return 0;  // auto
}

int run_merge_command(const std::string& recipe_path, const Overrides& overrides) {
  merge::MergeRecipe recipe = merge::load_recipe(recipe_path);
  if (recipe.threads == 0) {
    recipe.threads = env_default_threads();
  }
  apply_overrides(recipe, overrides);
  std::cerr << fmt::format("merging {} model(s) with method '{}' -> {}\n", recipe.models.size(),
                           merge::to_string(recipe.method), recipe.output.string());
  const merge::MergeReport report = merge::run_merge(recipe);
  std::cerr << fmt::format("done: {} tensors in {:.1f} ms\n", report.tensors_total,
                           report.wall_ms);
  std::cout << report.to_json().dump(2) << "\n";
  return kExitOk;
}

int run_validate_command(const std::vector<std::string>& paths) {
  std::vector<std::unique_ptr<merge::CheckpointReader>> readers;
  for (const std::string& path : paths) {
    readers.push_back(std::make_unique<merge::CheckpointReader>(path));
  }
  std::vector<const merge::CheckpointReader*> handles;
  for (const auto& r : readers) {
    handles.push_back(r.get());
  }
  const merge::HomologyReport report = merge::validate_homologous(handles);
  std::cout << report.to_json().dump(2) << "\n";
  if (!report.homologous) {
    std::cerr << fmt::format("not homologous: {} issue(s)\n", report.issues.size());
    return kExitFailure;
  }
  std::cerr << "homologous\n";
  return kExitOk;
}

int run_analyze_command(const std::string& recipe_path, const std::string& out_dir, int bins,
                        const std::string& variant_a, const std::string& variant_b,
                        bool per_tensor) {
  const merge::MergeRecipe recipe = merge::load_recipe(recipe_path);
  merge::AnalysisOptions options;
  options.bins = bins;
  options.per_tensor_tiers = per_tensor;
  options.variant_a.crucial_threshold = recipe.params.t;
  options.variant_a.calibration_value = recipe.params.s;
  options.variant_a.variant = merge::widen_variant_from_string(variant_a);
  options.variant_b = options.variant_a;
  options.variant_b.variant = merge::widen_variant_from_string(variant_b);

  const merge::AnalysisResult result =
      merge::analyze_checkpoints(recipe.backbone, recipe.models, options);
  result.write_files(out_dir);
  json summary = {{"out_dir", out_dir},
                  {"histograms", "importance_histograms.json"},
                  {"transitions", "tier_transitions.json"},
                  {"deciles", "delta_deciles.json"}};
  std::cout << summary.dump(2) << "\n";
  return kExitOk;
}

int run_grid_command(const std::string& recipe_path, const std::string& manifest_path) {
  std::ifstream file(recipe_path);
  if (!file) {
    throw merge::ConfigError(fmt::format("cannot open recipe '{}'", recipe_path));
  }
  json doc;
  try {
    doc = json::parse(file);
  } catch (const json::exception& e) {
    throw merge::ConfigError(fmt::format("recipe '{}' is not valid JSON: {}", recipe_path,
                                         e.what()));
  }
  std::vector<merge::MergeRecipe> recipes = merge::grid_search_expand(doc);

  // Guard against output collisions before any merge runs.
  std::set<std::string> outputs;
  for (const merge::MergeRecipe& recipe : recipes) {
    if (!outputs.insert(recipe.output.string()).second) {
      throw merge::ConfigError(fmt::format("grid expansion collides on output path '{}'",
                                           recipe.output.string()));
    }
  }

  json manifest = json::array();
  for (std::size_t i = 0; i < recipes.size(); ++i) {
    merge::MergeRecipe recipe = recipes[i];
    if (recipe.threads == 0) {
      recipe.threads = env_default_threads();
    }
    std::cerr << fmt::format("[{}/{}] {} -> {}\n", i + 1, recipes.size(),
                             merge::to_string(recipe.method), recipe.output.string());
    const merge::MergeReport report = merge::run_merge(recipe);
    manifest.push_back({{"recipe", merge::recipe_to_json(recipe)},
                        {"report", report.to_json()}});
  }
  const json result = {{"runs", manifest}};
  if (manifest_path.empty()) {
    std::cout << result.dump(2) << "\n";
  } else {
    std::ofstream out(manifest_path);
    if (!out) {
      throw merge::Error(fmt::format("cannot write manifest '{}'", manifest_path));
    }
    out << result.dump(2) << "\n";
    std::cout << json({{"manifest", manifest_path}, {"runs", manifest.size()}}).dump(2) << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Checkpoint merging tool: fuses homologous model checkpoints"};
  app.require_subcommand(1);

  std::string recipe_path;
  Overrides overrides;
  CLI::App* merge_cmd = app.add_subcommand("merge", "Run one merge from a recipe file");
  merge_cmd->add_option("--recipe", recipe_path, "Recipe JSON path")->required();
  add_override_flags(*merge_cmd, overrides);

  std::vector<std::string> validate_paths;
  CLI::App* validate_cmd =
      app.add_subcommand("validate", "Check that checkpoints are homologous");
  validate_cmd->add_option("paths", validate_paths, "Checkpoint paths")->expected(2, -1);

  std::string analyze_recipe, analyze_out = "analysis";
  std::string variant_a = "full", variant_b = "no_sc";
  int bins = 10;
  bool per_tensor = false;
  CLI::App* analyze_cmd =
      app.add_subcommand("analyze", "Importance and delta diagnostics for a recipe's models");
  analyze_cmd->add_option("--recipe", analyze_recipe, "Recipe JSON path")->required();
  analyze_cmd->add_option("--out-dir", analyze_out, "Directory for JSON/CSV outputs");
  analyze_cmd->add_option("--bins", bins, "Histogram bin count");
  analyze_cmd->add_option("--variant-a", variant_a, "Source scoring variant");
  analyze_cmd->add_option("--variant-b", variant_b, "Target scoring variant");
  analyze_cmd->add_flag("--per-tensor", per_tensor, "Compute tiers per tensor instead of whole-model");

  std::string grid_recipe, manifest_path;
  CLI::App* grid_cmd =
      app.add_subcommand("grid", "Expand list-valued params and run every merge");
  grid_cmd->add_option("--recipe", grid_recipe, "Recipe JSON path with list-valued params")
      ->required();
  grid_cmd->add_option("--manifest", manifest_path, "Write the run manifest to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      return app.exit(e);  // --help
    }
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (merge_cmd->parsed()) {
      return run_merge_command(recipe_path, overrides);
    }
    if (validate_cmd->parsed()) {
      return run_validate_command(validate_paths);
    }
    if (analyze_cmd->parsed()) {
      return run_analyze_command(analyze_recipe, analyze_out, bins, variant_a, variant_b,
                                 per_tensor);
    }
    if (grid_cmd->parsed()) {
      return run_grid_command(grid_recipe, manifest_path);
    }
  } catch (const merge::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const merge::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const merge::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitConfig;
}
