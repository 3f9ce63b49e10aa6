// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "merge/types.hpp"
#include "merge/widen.hpp"

namespace merge {

// Diagnostics over importance scores and parameter deltas: tier transitions
// between pipeline variants, score histograms, and decile statistics of the
// changed ranges.

enum class Tier : std::uint8_t { kLow = 0, kMedium = 1, kHigh = 2 };

/// Labels each score by its ascending-sorted third: positions 1..floor(k/3)
/// are Low, the next floor(k/3) Medium, the remainder High. Ties resolve by
/// ascending index. Needs k >= 3.
std::vector<Tier> tier_classify(const RowVector& scores);

/// 3x3 fractions of positions moving from tier x (rows, under the first
/// scoring) to tier y (columns, under the second). Entries sum to 1.
struct TierTransition {
  std::array<std::array<double, 3>, 3> fraction{};

  nlohmann::json to_json() const;
};

TierTransition tier_transition(const RowVector& scores_a, const RowVector& scores_b);

/// Equal-width histogram over [0, upper].
struct Histogram {
  double upper = 1.0;
  std::vector<std::uint64_t> counts;

  std::uint64_t total() const;
  std::vector<double> edges() const;  // bins + 1 boundaries
  nlohmann::json to_json() const;
};

/// Bins scores into `bins` equal cells over [0, max(1, calibration_value)].
/// Out-of-range values clamp into the boundary cells, so counts always sum
/// to the number of entries.
Histogram importance_histogram(const std::vector<float>& scores, int bins,
                               double calibration_value);

/// Sorted-input values indexed at round(q * (len - 1)) for q = 0, 0.1, ..., 1.
std::array<float, 11> delta_deciles(std::vector<float> values);

/// Checkpoint-wide analysis driver used by the CLI `analyze` subcommand.
struct AnalysisOptions {
  WidenParams variant_a;       // scores reported and used as transition source
  WidenParams variant_b;       // transition target
  int bins = 10;
  bool per_tensor_tiers = false;  // default: tiers over whole-model concatenated scores
};

struct AnalysisResult {
  nlohmann::json histograms;
  nlohmann::json transitions;
  nlohmann::json deciles;

  /// Writes <name>.json and <name>.csv per section into out_dir.
  void write_files(const std::filesystem::path& out_dir) const;
};

AnalysisResult analyze_checkpoints(const std::filesystem::path& backbone,
                                   const std::vector<std::filesystem::path>& models,
                                   const AnalysisOptions& options);

}  // namespace merge
