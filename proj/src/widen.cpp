// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "merge/widen.hpp"

#include <cmath>
#include <cstddef>

#include <fmt/core.h>

#include "merge/errors.hpp"
#include "merge/linalg.hpp"

namespace merge {

std::string_view to_string(WidenVariant variant) {
  switch (variant) {
    case WidenVariant::kFull: return "full";
    case WidenVariant::kNoDisentangle: return "no_wd";
    case WidenVariant::kNoRank: return "no_rank";
    case WidenVariant::kNoCalibration: return "no_sc";
  }
  return "full";
}

WidenVariant widen_variant_from_string(std::string_view name) {
  if (name == "full") return WidenVariant::kFull;
  if (name == "no_wd") return WidenVariant::kNoDisentangle;
  if (name == "no_rank") return WidenVariant::kNoRank;
  if (name == "no_sc") return WidenVariant::kNoCalibration;
  throw ConfigError(fmt::format("unknown variant '{}' (expected full, no_wd, no_rank, no_sc)", name));
}

RowVector magnitude_divergence(const RowVector& m, const RowVector& m_pre) {
  if (m.size() != m_pre.size()) {
    throw ShapeMismatch(fmt::format("magnitude divergence needs equal lengths, got {} vs {}",
                                    m.size(), m_pre.size()));
  }
  RowVector out(m.size());
  for (std::size_t j = 0; j < m.size(); ++j) {
    out[j] = std::fabs(m[j] - m_pre[j]);
  }
  return out;
}

RowVector direction_divergence(const Matrix& d, const Matrix& d_pre) {
  RowVector cos = column_cosine_similarity(d, d_pre);
  for (float& c : cos) {
    c = 1.0f - c;
  }
  return cos;
}

std::vector<std::size_t> crucial_set(const RowVector& ranked, double threshold) {
  const std::size_t k = ranked.size();
  if (k == 0) {
    throw ConfigError("crucial set needs at least one entry");
  }
  double total = 0.0;
  for (float v : ranked) {
    total += v;
  }
  const double cutoff = threshold / static_cast<double>(k) * total;
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < k; ++j) {
    if (static_cast<double>(ranked[j]) > cutoff) {
      out.push_back(j);
    }
  }
  return out;
}

ScoreTable calibrate_scores(ScoreTable scores, const std::vector<std::vector<std::size_t>>& crucial,
                            double value) {
  if (crucial.size() != scores.models) {
    throw ShapeMismatch(fmt::format("calibration needs one crucial set per model, got {} for {}",
                                    crucial.size(), scores.models));
  }
  for (std::size_t n = 0; n < scores.models; ++n) {
    for (std::size_t j : crucial[n]) {
      scores(n, j) = static_cast<float>(value);
    }
  }
  return scores;
}

namespace {

// Rank or min-max normalize depending on the variant, then softmax across
// models and (unless disabled) calibrate crucial columns. The crucial sets
// come from the per-model normalized scores, not the softmax output.
ScoreTable score_pipeline(const std::vector<RowVector>& divergences, const WidenParams& params) {
  const std::size_t n_models = divergences.size();
  const std::size_t k = divergences.front().size();

  std::vector<RowVector> normalized(n_models);
  for (std::size_t n = 0; n < n_models; ++n) {
    normalized[n] = params.variant == WidenVariant::kNoRank
                        ? min_max_normalize(divergences[n])
                        : ascending_rank_normalize(divergences[n]);
  }

  ScoreTable stacked(n_models, k);
  for (std::size_t n = 0; n < n_models; ++n) {
    for (std::size_t j = 0; j < k; ++j) {
      stacked(n, j) = normalized[n][j];
    }
  }
  ScoreTable soft = softmax_over_models(stacked);

  if (params.variant == WidenVariant::kNoCalibration) {
    return soft;
  }
  std::vector<std::vector<std::size_t>> crucial(n_models);
  for (std::size_t n = 0; n < n_models; ++n) {
    crucial[n] = crucial_set(normalized[n], params.crucial_threshold);
  }
  return calibrate_scores(std::move(soft), crucial, params.calibration_value);
}

void check_model_shapes(const Matrix& backbone, const std::vector<Matrix>& models) {
  if (models.empty()) {
    throw EmptyModelList("merge needs at least one model");
  }
  for (std::size_t n = 0; n < models.size(); ++n) {
    if (!models[n].same_shape(backbone)) {
      throw ShapeMismatch(fmt::format("model {} shape {}x{} differs from backbone {}x{}", n,
                                      models[n].rows, models[n].cols, backbone.rows,
                                      backbone.cols));
    }
  }
}

}  // namespace

WidenScores widen_scores_2d(const Matrix& backbone, const std::vector<Matrix>& models,
                            const WidenParams& params) {
  check_model_shapes(backbone, models);
  const std::size_t n_models = models.size();

  if (params.variant == WidenVariant::kNoDisentangle) {
    // One divergence per column from raw-weight cosines; the resulting table
    // stands in for both components.
    std::vector<RowVector> divergence(n_models);
    for (std::size_t n = 0; n < n_models; ++n) {
      RowVector cos = column_cosine_similarity(models[n], backbone);
      divergence[n].resize(cos.size());
      for (std::size_t j = 0; j < cos.size(); ++j) {
        divergence[n][j] = 1.0f - cos[j];
      }
    }
    ScoreTable shared = score_pipeline(divergence, params);
    return {shared, shared};
  }

  Disentangled pre = normalize_columns(backbone, params.norm_order);
  std::vector<RowVector> mag_div(n_models);
  std::vector<RowVector> dir_div(n_models);
  for (std::size_t n = 0; n < n_models; ++n) {
    Disentangled cur = normalize_columns(models[n], params.norm_order);
    mag_div[n] = magnitude_divergence(cur.magnitudes, pre.magnitudes);
    dir_div[n] = direction_divergence(cur.directions, pre.directions);
  }
  return {score_pipeline(mag_div, params), score_pipeline(dir_div, params)};
}

ScoreTable widen_scores_1d(const RowVector& backbone, const std::vector<RowVector>& models,
                           const WidenParams& params) {
  if (models.empty()) {
    throw EmptyModelList("merge needs at least one model");
  }
  std::vector<RowVector> divergence(models.size());
  for (std::size_t n = 0; n < models.size(); ++n) {
    divergence[n] = magnitude_divergence(models[n], backbone);
  }
  return score_pipeline(divergence, params);
}

Matrix widen_merge_2d(const Matrix& backbone, const std::vector<Matrix>& models,
                      const WidenParams& params) {
  WidenScores scores = widen_scores_2d(backbone, models, params);
  const std::size_t n_models = models.size();

  // (magnitude + direction) / 2 per model and column
  ScoreTable combined(n_models, backbone.cols);
  for (std::size_t n = 0; n < n_models; ++n) {
    for (std::size_t j = 0; j < backbone.cols; ++j) {
      combined(n, j) = 0.5f * (scores.magnitude(n, j) + scores.direction(n, j));
    }
  }

  Matrix out(backbone.rows, backbone.cols);
  for (std::size_t i = 0; i < backbone.rows; ++i) {
    const float* pre = backbone.data.data() + i * backbone.cols;
    float* dst = out.data.data() + i * backbone.cols;
    for (std::size_t j = 0; j < backbone.cols; ++j) {
      float acc = 0.0f;
      for (std::size_t n = 0; n < n_models; ++n) {
        acc += combined(n, j) * (models[n](i, j) - pre[j]);
      }
      // acc == 0 keeps the backbone entry bit-identical (including -0)
      dst[j] = acc == 0.0f ? pre[j] : pre[j] + acc;
    }
  }
  return out;
}

RowVector widen_merge_1d(const RowVector& backbone, const std::vector<RowVector>& models,
                         const WidenParams& params) {
  ScoreTable scores = widen_scores_1d(backbone, models, params);
  RowVector out(backbone.size());
  for (std::size_t j = 0; j < backbone.size(); ++j) {
    float acc = 0.0f;
    for (std::size_t n = 0; n < models.size(); ++n) {
      acc += scores(n, j) * (models[n][j] - backbone[j]);
    }
    out[j] = acc == 0.0f ? backbone[j] : backbone[j] + acc;
  }
  return out;
}

}  // namespace merge
