// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "merge/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>

#include <fmt/core.h>

#include "merge/errors.hpp"

namespace merge {

namespace {

void check_norm_order(int norm_order) {
  if (norm_order != 1 && norm_order != 2) {
    throw ConfigError(fmt::format("norm order must be 1 or 2, got {}", norm_order));
  }
}

}  // namespace

RowVector column_norms(const Matrix& w, int norm_order) {
  check_norm_order(norm_order);
  std::vector<double> acc(w.cols, 0.0);
  // Row-major data: iterate rows outer so each pass streams one cache line run.
  for (std::size_t i = 0; i < w.rows; ++i) {
    const float* row = w.data.data() + i * w.cols;
    if (norm_order == 2) {
      for (std::size_t j = 0; j < w.cols; ++j) {
        const double x = row[j];
        acc[j] += x * x;
      }
    } else {
      for (std::size_t j = 0; j < w.cols; ++j) {
        acc[j] += std::fabs(static_cast<double>(row[j]));
      }
    }
  }
  RowVector out(w.cols);
  for (std::size_t j = 0; j < w.cols; ++j) {
    const double n = norm_order == 2 ? std::sqrt(acc[j]) : acc[j];
    if (!std::isfinite(n)) {
      throw InvalidTensor(fmt::format("non-finite values in column {}", j));
    }
    out[j] = static_cast<float>(n);
  }
  return out;
}

Disentangled normalize_columns(const Matrix& w, int norm_order) {
  check_norm_order(norm_order);
  std::vector<double> acc(w.cols, 0.0);
  for (std::size_t i = 0; i < w.rows; ++i) {
    const float* row = w.data.data() + i * w.cols;
    for (std::size_t j = 0; j < w.cols; ++j) {
      const double x = row[j];
      acc[j] += norm_order == 2 ? x * x : std::fabs(x);
    }
  }

  Disentangled result;
  result.magnitudes.resize(w.cols);
  result.directions = Matrix(w.rows, w.cols);
  std::vector<double> norm(w.cols, 0.0);
  for (std::size_t j = 0; j < w.cols; ++j) {
    const double n = norm_order == 2 ? std::sqrt(acc[j]) : acc[j];
    if (!std::isfinite(n)) {
      throw InvalidTensor(fmt::format("non-finite values in column {}", j));
    }
    result.magnitudes[j] = static_cast<float>(n);
    norm[j] = n;
  }
  for (std::size_t i = 0; i < w.rows; ++i) {
    const float* src = w.data.data() + i * w.cols;
    float* dst = result.directions.data.data() + i * w.cols;
    for (std::size_t j = 0; j < w.cols; ++j) {
      // zero-norm column -> zero direction
      dst[j] = norm[j] > kNormEpsilon ? static_cast<float>(src[j] / norm[j]) : 0.0f;
    }
  }
  return result;
}

RowVector column_cosine_similarity(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch(fmt::format("cosine similarity needs equal shapes, got {}x{} vs {}x{}",
                                    a.rows, a.cols, b.rows, b.cols));
  }
  std::vector<double> dot(a.cols, 0.0), na(a.cols, 0.0), nb(a.cols, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const float* ra = a.data.data() + i * a.cols;
    const float* rb = b.data.data() + i * a.cols;
    for (std::size_t j = 0; j < a.cols; ++j) {
      const double x = ra[j];
      const double y = rb[j];
      dot[j] += x * y;
      na[j] += x * x;
      nb[j] += y * y;
    }
  }
  RowVector out(a.cols);
  for (std::size_t j = 0; j < a.cols; ++j) {
    const double norm_a = std::sqrt(na[j]);
    const double norm_b = std::sqrt(nb[j]);
    if (norm_a <= kNormEpsilon || norm_b <= kNormEpsilon) {
      out[j] = 1.0f;  // degenerate column: treated as unchanged direction
      continue;
    }
    const double c = dot[j] / (norm_a * norm_b);
    out[j] = static_cast<float>(std::clamp(c, -1.0, 1.0));
  }
  return out;
}

RowVector ascending_rank_normalize(const RowVector& v) {
  const std::size_t k = v.size();
  if (k == 0) {
    throw ConfigError("rank normalization needs at least one entry");
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // stableized: equal values keep ascending original-index order
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  RowVector out(k);
  for (std::size_t j = 0; j < k; ++j) {
    out[order[j]] = static_cast<float>(static_cast<double>(j + 1) / static_cast<double>(k));
  }
  return out;
}

RowVector min_max_normalize(const RowVector& v) {
  if (v.empty()) {
    throw ConfigError("min-max normalization needs at least one entry");
  }
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  RowVector out(v.size());
  if (hi == lo) {
    std::fill(out.begin(), out.end(), 0.5f);  // degenerate range
    return out;
  }
  const double inv = 1.0 / (hi - lo);
  for (std::size_t j = 0; j < v.size(); ++j) {
    out[j] = static_cast<float>((v[j] - lo) * inv);
  }
  return out;
}

ScoreTable softmax_over_models(const ScoreTable& scores) {
  if (scores.models == 0) {
    throw EmptyModelList("softmax needs at least one model row");
  }
  ScoreTable out(scores.models, scores.cols);
  for (std::size_t j = 0; j < scores.cols; ++j) {
    double hi = scores(0, j);
    for (std::size_t n = 1; n < scores.models; ++n) {
      hi = std::max(hi, static_cast<double>(scores(n, j)));
    }
    double total = 0.0;
    for (std::size_t n = 0; n < scores.models; ++n) {
      total += std::exp(static_cast<double>(scores(n, j)) - hi);
    }
    for (std::size_t n = 0; n < scores.models; ++n) {
      out(n, j) = static_cast<float>(std::exp(static_cast<double>(scores(n, j)) - hi) / total);
    }
  }
  return out;
}

}  // namespace merge
