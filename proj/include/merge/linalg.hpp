// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "merge/types.hpp"

namespace merge {

// Columns whose accumulated norm falls at or below this value are treated as
// degenerate: their direction is the zero vector and their cosine similarity
// against anything is 1 (no divergence).
inline constexpr double kNormEpsilon = 1e-12;

/// Per-column l_c norm of a matrix, c in {1, 2}. Accumulates in fp64.
RowVector column_norms(const Matrix& w, int norm_order);

/// Magnitude/direction split of a weight matrix.
struct Disentangled {
  RowVector magnitudes;  // per-column l_c norms, length k
  Matrix directions;     // columns scaled to unit l_c norm (zero columns stay zero)
};

/// Splits w into per-column magnitudes and unit-norm directions so that
/// magnitudes[j] * directions[:,j] reconstructs w[:,j] for every column with
/// norm above kNormEpsilon.
Disentangled normalize_columns(const Matrix& w, int norm_order);

/// Column-wise cosine similarity between equally shaped matrices, in [-1, 1].
/// Columns with l2 norm at or below kNormEpsilon compare as 1.
RowVector column_cosine_similarity(const Matrix& a, const Matrix& b);

/// Maps values to their ascending ranks scaled into (0, 1]: the j-th smallest
/// entry (1-based) becomes j/k. Ties resolve by ascending original index, so
/// the output is always an exact permutation of {1/k, 2/k, ..., 1}.
RowVector ascending_rank_normalize(const RowVector& v);

/// Affine rescale of v into [0, 1]. A constant vector maps to all 0.5.
RowVector min_max_normalize(const RowVector& v);

/// Column-wise softmax across models (rows). Every output column sums to 1;
/// computed with max-subtraction.
ScoreTable softmax_over_models(const ScoreTable& scores);

}  // namespace merge
