// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "merge/widen.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <doctest.h>

#include "merge/baselines.hpp"
#include "merge/errors.hpp"
#include "merge/linalg.hpp"
#include "widen_oracle.hpp"

using namespace merge;

namespace {

Matrix random_matrix(std::mt19937& rng, std::size_t rows, std::size_t cols, float scale = 1.0f) {
  std::uniform_real_distribution<float> dist(-scale, scale);
  Matrix m(rows, cols);
  for (float& v : m.data) {
    v = dist(rng);
  }
  return m;
}

RowVector random_vector(std::mt19937& rng, std::size_t len, float scale = 1.0f) {
  std::uniform_real_distribution<float> dist(-scale, scale);
  RowVector v(len);
  for (float& x : v) {
    x = dist(rng);
  }
  return v;
}

oracle::Mat to_oracle(const Matrix& m) {
  return oracle::Mat{m.rows, m.cols, m.data};
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::fabs(static_cast<double>(a[i]) - b[i]));
  }
  return worst;
}

}  // namespace

TEST_CASE("magnitude_divergence") {
  const RowVector out = magnitude_divergence({1.0f, 2.0f}, {2.0f, 2.0f});
  CHECK(out[0] == 1.0f);
  CHECK(out[1] == 0.0f);

  const RowVector same = magnitude_divergence({0.5f, 0.25f}, {0.5f, 0.25f});
  CHECK(same[0] == 0.0f);
  CHECK(same[1] == 0.0f);

  std::mt19937 rng(23);
  const RowVector a = random_vector(rng, 16);
  const RowVector b = random_vector(rng, 16);
  const RowVector diff = magnitude_divergence(a, b);
  for (std::size_t j = 0; j < a.size(); ++j) {
    CHECK(diff[j] == std::fabs(a[j] - b[j]));
  }
  CHECK_THROWS_AS(magnitude_divergence({1.0f}, {1.0f, 2.0f}), ShapeMismatch);
}

TEST_CASE("direction_divergence endpoints") {
  std::mt19937 rng(29);
  const Matrix d = random_matrix(rng, 4, 3);
  for (float v : direction_divergence(d, d)) {
    CHECK(v == doctest::Approx(0.0));
  }
  Matrix flipped = d;
  for (float& v : flipped.data) {
    v = -v;
  }
  for (float v : direction_divergence(d, flipped)) {
    CHECK(v == doctest::Approx(2.0));
  }
  const Matrix ex(2, 1, {1, 0});
  const Matrix ey(2, 1, {0, 1});
  CHECK(direction_divergence(ex, ey)[0] == doctest::Approx(1.0));
}

TEST_CASE("crucial_set strict threshold") {
  // ranks of a 3-vector: mean 2/3, only 1.0 strictly above
  const std::vector<std::size_t> out = crucial_set({1.0f / 3.0f, 2.0f / 3.0f, 1.0f}, 1.0);
  REQUIRE(out.size() == 1);
  CHECK(out[0] == 2);

  // negative threshold marks everything crucial
  const std::vector<std::size_t> all = crucial_set({0.2f, 0.9f, 0.1f, 0.5f}, -1.0);
  CHECK(all.size() == 4);

  // equal entries never strictly exceed their own mean
  CHECK(crucial_set({0.5f, 0.5f, 0.5f}, 1.0).empty());
}

TEST_CASE("calibrate_scores cases") {
  ScoreTable raw(2, 2);
  raw(0, 0) = raw(0, 1) = raw(1, 0) = raw(1, 1) = 0.5f;

  const ScoreTable untouched = calibrate_scores(raw, {{}, {}}, 1.0);
  for (float v : untouched.data) {
    CHECK(v == 0.5f);
  }

  const ScoreTable all = calibrate_scores(raw, {{0, 1}, {0, 1}}, 1.0);
  for (float v : all.data) {
    CHECK(v == 1.0f);
  }

  const ScoreTable partial = calibrate_scores(raw, {{}, {1}}, 1.0);
  CHECK(partial(0, 0) == 0.5f);
  CHECK(partial(0, 1) == 0.5f);
  CHECK(partial(1, 0) == 0.5f);
  CHECK(partial(1, 1) == 1.0f);
}

TEST_CASE("widen_merge_2d matches the standalone pipeline") {
  std::mt19937 rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t rows = 1 + rng() % 8;
    const std::size_t cols = 1 + rng() % 8;
    const std::size_t n_models = 1 + rng() % 3;
    const Matrix pre = random_matrix(rng, rows, cols);
    std::vector<Matrix> models;
    for (std::size_t n = 0; n < n_models; ++n) {
      Matrix m = pre;
      const Matrix noise = random_matrix(rng, rows, cols, 0.1f);
      for (std::size_t i = 0; i < m.data.size(); ++i) {
        m.data[i] += noise.data[i];
      }
      models.push_back(std::move(m));
    }

    WidenParams params;
    params.crucial_threshold = 1.0;
    params.calibration_value = 1.0;
    const Matrix merged = widen_merge_2d(pre, models, params);

    std::vector<oracle::Mat> oracle_models;
    for (const Matrix& m : models) {
      oracle_models.push_back(to_oracle(m));
    }
    const oracle::Mat expected = oracle::widen_2d(to_oracle(pre), oracle_models, 1.0, 1.0);
    CHECK(max_abs_diff(merged.data, expected.v) <= 1e-6);
  }
}

TEST_CASE("widen_merge_1d matches the standalone pipeline") {
  std::mt19937 rng(37);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t len = 1 + rng() % 12;
    const std::size_t n_models = 1 + rng() % 3;
    const RowVector pre = random_vector(rng, len);
    std::vector<RowVector> models;
    for (std::size_t n = 0; n < n_models; ++n) {
      RowVector m = pre;
      const RowVector noise = random_vector(rng, len, 0.1f);
      for (std::size_t j = 0; j < len; ++j) {
        m[j] += noise[j];
      }
      models.push_back(std::move(m));
    }
    WidenParams params;
    const RowVector merged = widen_merge_1d(pre, models, params);
    const std::vector<float> expected = oracle::widen_1d(pre, models, 1.0, 1.0);
    CHECK(max_abs_diff(merged, expected) <= 1e-6);
  }
}

TEST_CASE("reduction identities: negative threshold turns widen into arithmetic") {
  std::mt19937 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 2 + rng() % 6;
    const std::size_t cols = 2 + rng() % 6;
    const std::size_t n_models = 1 + rng() % 3;
    const Matrix pre = random_matrix(rng, rows, cols);
    std::vector<Matrix> models;
    std::vector<std::vector<float>> flat_models;
    for (std::size_t n = 0; n < n_models; ++n) {
      Matrix m = random_matrix(rng, rows, cols);
      flat_models.push_back(m.data);
      models.push_back(std::move(m));
    }

    WidenParams params;
    params.crucial_threshold = -1.0;

    params.calibration_value = 1.0 / static_cast<double>(n_models);
    const Matrix as_average = widen_merge_2d(pre, models, params);
    const std::vector<float> average = average_merge(pre.data, flat_models);
    CHECK(max_abs_diff(as_average.data, average) <= 1e-6);

    for (double lambda : {0.5, 1.0}) {
      params.calibration_value = lambda;
      const Matrix as_ta = widen_merge_2d(pre, models, params);
      const std::vector<float> ta = task_arithmetic(pre.data, flat_models, lambda);
      CHECK(max_abs_diff(as_ta.data, ta) <= 1e-6);
    }

    // 1-D reduction
    const RowVector pre_vec = random_vector(rng, cols);
    std::vector<RowVector> vec_models;
    for (std::size_t n = 0; n < n_models; ++n) {
      vec_models.push_back(random_vector(rng, cols));
    }
    params.calibration_value = 1.0 / static_cast<double>(n_models);
    const RowVector merged_vec = widen_merge_1d(pre_vec, vec_models, params);
    std::vector<std::vector<float>> flat_vecs;
    for (const RowVector& v : vec_models) {
      flat_vecs.push_back(v);
    }
    CHECK(max_abs_diff(merged_vec, average_merge(pre_vec, flat_vecs)) <= 1e-6);
  }
}

TEST_CASE("widen idempotence on the backbone is bit-exact") {
  std::mt19937 rng(43);
  const Matrix pre = random_matrix(rng, 6, 5);
  const std::vector<Matrix> models = {pre, pre, pre};
  for (WidenVariant variant : {WidenVariant::kFull, WidenVariant::kNoDisentangle,
                               WidenVariant::kNoRank, WidenVariant::kNoCalibration}) {
    WidenParams params;
    params.variant = variant;
    const Matrix merged = widen_merge_2d(pre, models, params);
    for (std::size_t i = 0; i < pre.data.size(); ++i) {
      CHECK(merged.data[i] == pre.data[i]);
    }
  }
}

TEST_CASE("permutation of the model list changes nothing beyond fp tolerance") {
  std::mt19937 rng(47);
  const Matrix pre = random_matrix(rng, 5, 4);
  std::vector<Matrix> models = {random_matrix(rng, 5, 4), random_matrix(rng, 5, 4),
                                random_matrix(rng, 5, 4)};
  WidenParams params;
  const Matrix merged = widen_merge_2d(pre, models, params);

  // same order twice -> bitwise identical
  const Matrix again = widen_merge_2d(pre, models, params);
  CHECK(merged.data == again.data);

  std::vector<Matrix> reversed = {models[2], models[1], models[0]};
  const Matrix merged_reversed = widen_merge_2d(pre, reversed, params);
  CHECK(max_abs_diff(merged.data, merged_reversed.data) <= 1e-6);
}

TEST_CASE("score tables stay in (0,1) before calibration and gain s after") {
  std::mt19937 rng(53);
  const Matrix pre = random_matrix(rng, 6, 6);
  std::vector<Matrix> models = {random_matrix(rng, 6, 6), random_matrix(rng, 6, 6)};

  WidenParams no_sc;
  no_sc.variant = WidenVariant::kNoCalibration;
  const WidenScores raw = widen_scores_2d(pre, models, no_sc);
  for (const ScoreTable* table : {&raw.magnitude, &raw.direction}) {
    for (float v : table->data) {
      CHECK(v > 0.0f);
      CHECK(v < 1.0f);
    }
  }

  WidenParams with_sc;
  with_sc.calibration_value = 7.0;  // sentinel outside (0,1)
  with_sc.crucial_threshold = 1.0;
  const WidenScores calibrated = widen_scores_2d(pre, models, with_sc);
  for (const ScoreTable* table : {&calibrated.magnitude, &calibrated.direction}) {
    bool saw_sentinel = false;
    for (float v : table->data) {
      const bool in_unit = v > 0.0f && v < 1.0f;
      const bool is_sentinel = v == 7.0f;
      CHECK((in_unit || is_sentinel));
      saw_sentinel |= is_sentinel;
    }
    CHECK(saw_sentinel);  // ranks always strictly exceed t/k * sum for some column at t=1
  }
}

TEST_CASE("no_sc equals full when no column clears the threshold") {
  std::mt19937 rng(59);
  const Matrix pre = random_matrix(rng, 5, 5);
  std::vector<Matrix> models = {random_matrix(rng, 5, 5), random_matrix(rng, 5, 5)};

  // ranks are a permutation of {j/k}; max 1 never strictly exceeds
  // 2/k * sum = (k+1)/k, so t=2 leaves every crucial set empty.
  WidenParams full;
  full.crucial_threshold = 2.0;
  WidenParams no_sc = full;
  no_sc.variant = WidenVariant::kNoCalibration;

  const Matrix a = widen_merge_2d(pre, models, full);
  const Matrix b = widen_merge_2d(pre, models, no_sc);
  CHECK(a.data == b.data);
}

TEST_CASE("no_rank variant uses min-max normalization") {
  // Build a column layout where ranks and min-max disagree: with ranks, scores
  // depend only on order; with min-max they depend on spacing.
  const Matrix pre(1, 3, {0.0f, 0.0f, 0.0f});
  const Matrix model(1, 3, {0.1f, 0.2f, 1.0f});

  WidenParams no_rank;
  no_rank.variant = WidenVariant::kNoRank;
  no_rank.crucial_threshold = 1e9;  // keep calibration out of the picture
  const ScoreTable scores = widen_scores_1d(pre.data, {model.data}, no_rank);
  // N=1 softmax over a single model is all ones regardless of normalization,
  // so compare through a two-model setup instead.
  CHECK(scores(0, 0) == 1.0f);

  const Matrix second(1, 3, {1.0f, 0.2f, 0.1f});
  const ScoreTable pair =
      widen_scores_1d(pre.data, {model.data, second.data}, no_rank);
  // min-max of |deltas| for model 0 is [0, 1/9, 1]; for model 1 it is
  // [1, 1/9, 0]; softmax of those columns is asymmetric around the middle.
  CHECK(pair(0, 0) < pair(1, 0));
  CHECK(pair(0, 2) > pair(1, 2));
  CHECK(pair(0, 1) == doctest::Approx(pair(1, 1)));
}

TEST_CASE("no_wd variant shares one score table across components") {
  std::mt19937 rng(61);
  const Matrix pre = random_matrix(rng, 4, 4);
  std::vector<Matrix> models = {random_matrix(rng, 4, 4), random_matrix(rng, 4, 4)};
  WidenParams no_wd;
  no_wd.variant = WidenVariant::kNoDisentangle;
  const WidenScores scores = widen_scores_2d(pre, models, no_wd);
  CHECK(scores.magnitude.data == scores.direction.data);
}

TEST_CASE("widen rejects empty and mismatched model lists") {
  const Matrix pre(2, 2, {1, 2, 3, 4});
  CHECK_THROWS_AS(widen_merge_2d(pre, {}, WidenParams{}), EmptyModelList);
  CHECK_THROWS_AS(widen_merge_2d(pre, {Matrix(3, 2)}, WidenParams{}), ShapeMismatch);
  CHECK_THROWS_AS(widen_merge_1d({1.0f}, {{1.0f, 2.0f}}, WidenParams{}), ShapeMismatch);
}
