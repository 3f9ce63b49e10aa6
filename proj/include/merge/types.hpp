// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

namespace merge {

/// A length-k row of per-column values (magnitudes, divergences, scores).
using RowVector = std::vector<float>;

/// Dense row-major fp32 matrix with d rows and k columns. Column j of a
/// weight matrix is the direction that gets normalized; the second stored
/// axis is always the column axis.
struct Matrix {
  std::vector<float> data;
  std::size_t rows = 0;
  std::size_t cols = 0;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : data(r * c, 0.0f), rows(r), cols(c) {}
  Matrix(std::size_t r, std::size_t c, std::vector<float> values)
      : data(std::move(values)), rows(r), cols(c) {}

  float operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  float& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& other) const {
    return rows == other.rows && cols == other.cols;
  }
};

/// N x k table of per-model, per-column scores. Row n holds the scores of
/// model n, stored row-major.
struct ScoreTable {
  std::vector<float> data;
  std::size_t models = 0;
  std::size_t cols = 0;

  ScoreTable() = default;
  ScoreTable(std::size_t n, std::size_t k) : data(n * k, 0.0f), models(n), cols(k) {}

  float operator()(std::size_t n, std::size_t j) const { return data[n * cols + j]; }
  float& operator()(std::size_t n, std::size_t j) { return data[n * cols + j]; }

  /// Copy of row n as a RowVector.
  RowVector row(std::size_t n) const {
    return RowVector(data.begin() + static_cast<std::ptrdiff_t>(n * cols),
                     data.begin() + static_cast<std::ptrdiff_t>((n + 1) * cols));
  }
};

}  // namespace merge
