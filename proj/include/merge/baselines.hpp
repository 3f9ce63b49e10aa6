// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace merge {

// Comparison merging methods. All of them are element-wise over flat value
// buffers, so they apply to any tensor rank; shapes only need to agree.

/// Mean of the models, computed as backbone + (1/N) * sum of deltas.
std::vector<float> average_merge(const std::vector<float>& backbone,
                                 const std::vector<std::vector<float>>& models);

/// backbone + scale * sum of (model - backbone).
std::vector<float> task_arithmetic(const std::vector<float>& backbone,
                                   const std::vector<std::vector<float>>& models, double scale);

/// Spherical interpolation between exactly two weight tensors, flattened to
/// vectors for the angle. Falls back to linear interpolation when the inputs
/// are near-colinear (|sin(angle)| < 1e-6).
std::vector<float> slerp_merge(const std::vector<float>& a, const std::vector<float>& b,
                               double phi);

/// Interpolates between the backbone anchor and the model average with ratio
/// r = N*cos / ((N-1)(1+cos)), cos being the mean pairwise cosine of the task
/// vectors, clamped to [0, 1]. Zero task vectors give r = 0.
std::vector<float> model_stock_merge(const std::vector<float>& backbone,
                                     const std::vector<std::vector<float>>& models);

/// Trim-elect-merge: keeps the top keep_ratio fraction of each delta by
/// magnitude, elects a per-entry sign from the sum of kept deltas, and
/// averages the sign-consistent contributors. Entries with no contributor
/// stay at the backbone value.
std::vector<float> ties_merge(const std::vector<float>& backbone,
                              const std::vector<std::vector<float>>& models, double keep_ratio,
                              double scale);

/// Masks both tails of each delta's magnitude distribution: the top mask_top
/// fraction and the bottom (1 - keep_ratio - mask_top) fraction are zeroed,
/// then the masked deltas are summed with the given scale.
std::vector<float> breadcrumbs_merge(const std::vector<float>& backbone,
                                     const std::vector<std::vector<float>>& models,
                                     double mask_top, double keep_ratio, double scale);

/// Random drop-and-rescale of a delta: each entry is zeroed with probability
/// drop_rate and survivors are scaled by 1/(1-drop_rate), so the expectation
/// equals the input.
std::vector<float> dare_sparsify(const std::vector<float>& delta, double drop_rate,
                                 std::uint64_t seed);

/// Zeros the drop_rate fraction of entries with the smallest magnitudes.
/// No rescaling.
std::vector<float> magnitude_prune(const std::vector<float>& delta, double drop_rate);

}  // namespace merge
