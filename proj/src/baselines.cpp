// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "merge/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>

#include <fmt/core.h>

#include "merge/errors.hpp"
#include "merge/rng.hpp"

namespace merge {

namespace {

constexpr double kColinearEpsilon = 1e-6;
constexpr double kZeroNormEpsilon = 1e-12;

void check_models(const std::vector<float>& backbone,
                  const std::vector<std::vector<float>>& models) {
  if (models.empty()) {
    throw EmptyModelList("merge needs at least one model");
  }
  for (std::size_t n = 0; n < models.size(); ++n) {
    if (models[n].size() != backbone.size()) {
      throw ShapeMismatch(fmt::format("model {} has {} entries, backbone has {}", n,
                                      models[n].size(), backbone.size()));
    }
  }
}

// backbone + scale * (precomputed delta sum); keeps backbone bits when the
// accumulated delta is exactly zero.
std::vector<float> apply_scaled_delta(const std::vector<float>& backbone,
                                      const std::vector<float>& delta_sum, double scale) {
  std::vector<float> out(backbone.size());
  const float s = static_cast<float>(scale);
  for (std::size_t i = 0; i < backbone.size(); ++i) {
    const float step = s * delta_sum[i];
    out[i] = step == 0.0f ? backbone[i] : backbone[i] + step;
  }
  return out;
}

std::vector<float> delta_sum(const std::vector<float>& backbone,
                             const std::vector<std::vector<float>>& models) {
  std::vector<float> acc(backbone.size(), 0.0f);
  for (const auto& model : models) {
    for (std::size_t i = 0; i < backbone.size(); ++i) {
      acc[i] += model[i] - backbone[i];
    }
  }
  return acc;
}

// Indices of the count largest-magnitude entries; ties resolve by ascending
// index so results do not depend on sort internals.
std::vector<std::size_t> top_magnitude_indices(const std::vector<float>& values,
                                               std::size_t count) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const float ma = std::fabs(values[a]);
    const float mb = std::fabs(values[b]);
    if (ma != mb) return ma > mb;
    return a < b;
  });
  order.resize(std::min(count, order.size()));
  return order;
}

std::size_t fraction_to_count(double fraction, std::size_t size) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(size)));
}

}  // namespace

std::vector<float> average_merge(const std::vector<float>& backbone,
                                 const std::vector<std::vector<float>>& models) {
  check_models(backbone, models);
  return task_arithmetic(backbone, models, 1.0 / static_cast<double>(models.size()));
}

std::vector<float> task_arithmetic(const std::vector<float>& backbone,
                                   const std::vector<std::vector<float>>& models, double scale) {
  check_models(backbone, models);
  return apply_scaled_delta(backbone, delta_sum(backbone, models), scale);
}

std::vector<float> slerp_merge(const std::vector<float>& a, const std::vector<float>& b,
                               double phi) {
  if (a.size() != b.size()) {
    throw ShapeMismatch(fmt::format("slerp needs equal sizes, got {} vs {}", a.size(), b.size()));
  }
  if (phi < 0.0 || phi > 1.0) {
    throw ConfigError(fmt::format("slerp factor must be in [0, 1], got {}", phi));
  }

  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i];
    const double y = b[i];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);

  double sin_omega = 0.0;
  double omega = 0.0;
  if (na > kZeroNormEpsilon && nb > kZeroNormEpsilon) {
    const double cos_omega = std::clamp(dot / (na * nb), -1.0, 1.0);
    omega = std::acos(cos_omega);
    sin_omega = std::sin(omega);
  }

  std::vector<float> out(a.size());
  if (sin_omega < kColinearEpsilon) {
    // Near-colinear: linear interpolation, written in delta form so equal
    // inputs pass through untouched.
    const float t = static_cast<float>(phi);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const float step = t * (b[i] - a[i]);
      out[i] = step == 0.0f ? a[i] : a[i] + step;
    }
    return out;
  }
  const double wa = std::sin((1.0 - phi) * omega) / sin_omega;
  const double wb = std::sin(phi * omega) / sin_omega;
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = static_cast<float>(wa * a[i] + wb * b[i]);
  }
  return out;
}

std::vector<float> model_stock_merge(const std::vector<float>& backbone,
                                     const std::vector<std::vector<float>>& models) {
  check_models(backbone, models);
  const std::size_t n_models = models.size();
  if (n_models < 2) {
    throw ArityError(fmt::format("model stock needs at least 2 models, got {}", n_models));
  }

  // Pairwise cosines between flattened task vectors. Pairs with a degenerate
  // (zero) task vector contribute 0.
  std::vector<double> norms(n_models, 0.0);
  for (std::size_t n = 0; n < n_models; ++n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < backbone.size(); ++i) {
      const double d = static_cast<double>(models[n][i]) - backbone[i];
      acc += d * d;
    }
    norms[n] = std::sqrt(acc);
  }
  double cos_sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t p = 0; p < n_models; ++p) {
    for (std::size_t q = p + 1; q < n_models; ++q) {
      ++pairs;
      if (norms[p] <= kZeroNormEpsilon || norms[q] <= kZeroNormEpsilon) {
        continue;
      }
      double dot = 0.0;
      for (std::size_t i = 0; i < backbone.size(); ++i) {
        const double dp = static_cast<double>(models[p][i]) - backbone[i];
        const double dq = static_cast<double>(models[q][i]) - backbone[i];
        dot += dp * dq;
      }
      cos_sum += std::clamp(dot / (norms[p] * norms[q]), -1.0, 1.0);
    }
  }
  const bool all_zero = std::all_of(norms.begin(), norms.end(),
                                    [](double n) { return n <= kZeroNormEpsilon; });
  const double mean_cos = cos_sum / static_cast<double>(pairs);

  double ratio = 0.0;
  if (!all_zero && 1.0 + mean_cos > kColinearEpsilon) {
    ratio = static_cast<double>(n_models) * mean_cos /
            (static_cast<double>(n_models - 1) * (1.0 + mean_cos));
  }
  ratio = std::clamp(ratio, 0.0, 1.0);

  // out = ratio * mean(models) + (1 - ratio) * backbone, in delta form
  std::vector<float> mean_delta = delta_sum(backbone, models);
  const float inv_n = static_cast<float>(1.0 / static_cast<double>(n_models));
  for (float& d : mean_delta) {
    d *= inv_n;
  }
  return apply_scaled_delta(backbone, mean_delta, ratio);
}

std::vector<float> ties_merge(const std::vector<float>& backbone,
                              const std::vector<std::vector<float>>& models, double keep_ratio,
                              double scale) {
  check_models(backbone, models);
  if (keep_ratio <= 0.0 || keep_ratio > 1.0) {
    throw ConfigError(fmt::format("keep_ratio must be in (0, 1], got {}", keep_ratio));
  }
  const std::size_t size = backbone.size();
  const std::size_t n_models = models.size();
  const std::size_t keep = fraction_to_count(keep_ratio, size);

  // Trim: per model, keep only the top-magnitude fraction of the delta.
  std::vector<std::vector<float>> kept(n_models, std::vector<float>(size, 0.0f));
  for (std::size_t n = 0; n < n_models; ++n) {
    std::vector<float> delta(size);
    for (std::size_t i = 0; i < size; ++i) {
      delta[i] = models[n][i] - backbone[i];
    }
    for (std::size_t idx : top_magnitude_indices(delta, keep)) {
      kept[n][idx] = delta[idx];
    }
  }

  // Elect sign per entry, then average the contributors that agree with it.
  std::vector<float> merged_delta(size, 0.0f);
  for (std::size_t i = 0; i < size; ++i) {
    float total = 0.0f;
    for (std::size_t n = 0; n < n_models; ++n) {
      total += kept[n][i];
    }
    if (total == 0.0f) {
      continue;  // no elected sign, entry stays at the backbone
    }
    const bool positive = total > 0.0f;
    float sum = 0.0f;
    std::size_t contributors = 0;
    for (std::size_t n = 0; n < n_models; ++n) {
      const float v = kept[n][i];
      if (v == 0.0f || (v > 0.0f) != positive) {
        continue;
      }
      sum += v;
      ++contributors;
    }
    if (contributors > 0) {
      merged_delta[i] = sum / static_cast<float>(contributors);
    }
  }
  return apply_scaled_delta(backbone, merged_delta, scale);
}

std::vector<float> breadcrumbs_merge(const std::vector<float>& backbone,
                                     const std::vector<std::vector<float>>& models,
                                     double mask_top, double keep_ratio, double scale) {
  check_models(backbone, models);
  if (mask_top < 0.0 || mask_top >= 1.0) {
    throw ConfigError(fmt::format("mask_top must be in [0, 1), got {}", mask_top));
  }
  if (keep_ratio <= 0.0 || keep_ratio > 1.0) {
    throw ConfigError(fmt::format("keep_ratio must be in (0, 1], got {}", keep_ratio));
  }
  if (mask_top + keep_ratio > 1.0) {
    throw ConfigError(fmt::format(
        "infeasible mask: mask_top {} + keep_ratio {} exceeds 1", mask_top, keep_ratio));
  }
  const std::size_t size = backbone.size();
  const std::size_t top = fraction_to_count(mask_top, size);
  const std::size_t bottom = fraction_to_count(1.0 - keep_ratio - mask_top, size);

  std::vector<float> masked_sum(size, 0.0f);
  for (const auto& model : models) {
    std::vector<float> delta(size);
    for (std::size_t i = 0; i < size; ++i) {
      delta[i] = model[i] - backbone[i];
    }
    // order[0..top) is the masked head, order[size-bottom..size) the masked
    // tail; the rounded counts never overlap because keep_ratio > 0.
    std::vector<std::size_t> order = top_magnitude_indices(delta, size);
    for (std::size_t r = top; r < size - bottom; ++r) {
      masked_sum[order[r]] += delta[order[r]];
    }
  }
  return apply_scaled_delta(backbone, masked_sum, scale);
}

std::vector<float> dare_sparsify(const std::vector<float>& delta, double drop_rate,
                                 std::uint64_t seed) {
  if (drop_rate < 0.0 || drop_rate >= 1.0) {
    throw ConfigError(fmt::format("drop rate must be in [0, 1), got {}", drop_rate));
  }
  if (drop_rate == 0.0) {
    return delta;
  }
  std::vector<float> out(delta.size(), 0.0f);
  std::mt19937_64 rng(seed);
  const float rescale = static_cast<float>(1.0 / (1.0 - drop_rate));
  for (std::size_t i = 0; i < delta.size(); ++i) {
    if (next_uniform(rng) >= drop_rate) {
      out[i] = delta[i] * rescale;
    }
  }
  return out;
}

std::vector<float> magnitude_prune(const std::vector<float>& delta, double drop_rate) {
  if (drop_rate < 0.0 || drop_rate >= 1.0) {
    throw ConfigError(fmt::format("drop rate must be in [0, 1), got {}", drop_rate));
  }
  const std::size_t keep = delta.size() - fraction_to_count(drop_rate, delta.size());
  std::vector<float> out(delta.size(), 0.0f);
  for (std::size_t idx : top_magnitude_indices(delta, keep)) {
    out[idx] = delta[idx];
  }
  return out;
}

}  // namespace merge
