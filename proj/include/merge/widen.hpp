// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "merge/types.hpp"

namespace merge {

/// Pipeline variants. The full pipeline disentangles weights, ranks the
/// divergences inside each model, and calibrates softmax scores for crucial
/// columns. Each variant swaps out exactly one of those stages:
///   kNoDisentangle  - one divergence per column from raw-weight cosines,
///                     shared by the magnitude and direction score tables
///   kNoRank         - min-max normalization instead of ascending ranks
///   kNoCalibration  - softmax scores used as-is
enum class WidenVariant {
  kFull,
  kNoDisentangle,
  kNoRank,
  kNoCalibration,
};

std::string_view to_string(WidenVariant variant);
WidenVariant widen_variant_from_string(std::string_view name);

struct WidenParams {
  /// Multiple of the mean rank score above which a column counts as crucial.
  /// Negative values make every column crucial, which reduces the merge to
  /// plain task arithmetic with scale `calibration_value`.
  double crucial_threshold = 1.0;
  /// Score assigned to crucial columns in place of their softmax score.
  double calibration_value = 1.0;
  /// Norm order used for the magnitude/direction split (1 or 2).
  int norm_order = 2;
  WidenVariant variant = WidenVariant::kFull;
};

/// |m - m_pre|, entrywise.
RowVector magnitude_divergence(const RowVector& m, const RowVector& m_pre);

/// 1 - cos(d[:,j], d_pre[:,j]) per column, in [0, 2].
RowVector direction_divergence(const Matrix& d, const Matrix& d_pre);

/// Indices whose rank score strictly exceeds `threshold/k * sum(ranked)`.
/// Returned ascending.
std::vector<std::size_t> crucial_set(const RowVector& ranked, double threshold);

/// Overwrites scores(n, j) with `value` for every j in crucial[n].
ScoreTable calibrate_scores(ScoreTable scores, const std::vector<std::vector<std::size_t>>& crucial,
                            double value);

/// Post-calibration importance tables for a 2-D weight. Under kNoDisentangle
/// the two tables are identical.
struct WidenScores {
  ScoreTable magnitude;
  ScoreTable direction;
};

WidenScores widen_scores_2d(const Matrix& backbone, const std::vector<Matrix>& models,
                            const WidenParams& params);

/// Magnitude-only score table for a 1-D parameter vector.
ScoreTable widen_scores_1d(const RowVector& backbone, const std::vector<RowVector>& models,
                           const WidenParams& params);

/// Merges N homologous 2-D weights into one: backbone plus the per-model
/// deltas weighted by the averaged magnitude/direction importance scores.
Matrix widen_merge_2d(const Matrix& backbone, const std::vector<Matrix>& models,
                      const WidenParams& params);

/// 1-D counterpart: deltas weighted by the magnitude score table alone.
RowVector widen_merge_1d(const RowVector& backbone, const std::vector<RowVector>& models,
                         const WidenParams& params);

}  // namespace merge
