// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Standalone reference for the full merge pipeline: plain column-at-a-time
// loops, a counting-based rank, and a naive softmax. Shares no code with the
// library. Stage outputs are narrowed to float at the same points where the
// library stores fp32, so rank order agrees on identical inputs; everything
// else accumulates in double.

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> v;  // row-major

  float at(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
  float& at(std::size_t i, std::size_t j) { return v[i * cols + j]; }
};

inline std::vector<float> column_norms(const Mat& w) {
  std::vector<float> out(w.cols);
  for (std::size_t j = 0; j < w.cols; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < w.rows; ++i) {
      acc += static_cast<double>(w.at(i, j)) * static_cast<double>(w.at(i, j));
    }
    out[j] = static_cast<float>(std::sqrt(acc));
  }
  return out;
}

inline Mat directions(const Mat& w, const std::vector<float>& norms) {
  Mat d{w.rows, w.cols, std::vector<float>(w.rows * w.cols, 0.0f)};
  for (std::size_t j = 0; j < w.cols; ++j) {
    if (static_cast<double>(norms[j]) <= 1e-12) {
      continue;  // zero column stays zero
    }
    for (std::size_t i = 0; i < w.rows; ++i) {
      d.at(i, j) = static_cast<float>(w.at(i, j) / static_cast<double>(norms[j]));
    }
  }
  return d;
}

inline float column_cosine(const Mat& a, const Mat& b, std::size_t j) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i) {
    dot += static_cast<double>(a.at(i, j)) * static_cast<double>(b.at(i, j));
    na += static_cast<double>(a.at(i, j)) * static_cast<double>(a.at(i, j));
    nb += static_cast<double>(b.at(i, j)) * static_cast<double>(b.at(i, j));
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na <= 1e-12 || nb <= 1e-12) {
    return 1.0f;
  }
  double c = dot / (na * nb);
  if (c > 1.0) c = 1.0;
  if (c < -1.0) c = -1.0;
  return static_cast<float>(c);
}

// Ascending rank by counting: entry a's 1-based position is one plus the
// number of entries strictly smaller, plus earlier-indexed equal entries.
inline std::vector<float> rank_scores(const std::vector<float>& values) {
  const std::size_t k = values.size();
  std::vector<float> out(k);
  for (std::size_t a = 0; a < k; ++a) {
    std::size_t position = 1;
    for (std::size_t b = 0; b < k; ++b) {
      if (values[b] < values[a] || (values[b] == values[a] && b < a)) {
        ++position;
      }
    }
    out[a] = static_cast<float>(static_cast<double>(position) / static_cast<double>(k));
  }
  return out;
}

// Naive per-column softmax across the models axis (no max subtraction; rank
// scores live in (0, 1] so exp cannot overflow).
inline std::vector<std::vector<float>> softmax_rows(const std::vector<std::vector<float>>& rows) {
  const std::size_t n_models = rows.size();
  const std::size_t k = rows.front().size();
  std::vector<std::vector<float>> out(n_models, std::vector<float>(k));
  for (std::size_t j = 0; j < k; ++j) {
    double total = 0.0;
    for (std::size_t n = 0; n < n_models; ++n) {
      total += std::exp(static_cast<double>(rows[n][j]));
    }
    for (std::size_t n = 0; n < n_models; ++n) {
      out[n][j] = static_cast<float>(std::exp(static_cast<double>(rows[n][j])) / total);
    }
  }
  return out;
}

inline std::vector<bool> crucial_mask(const std::vector<float>& ranked, double t) {
  double total = 0.0;
  for (float r : ranked) {
    total += r;
  }
  const double cutoff = t / static_cast<double>(ranked.size()) * total;
  std::vector<bool> mask(ranked.size());
  for (std::size_t j = 0; j < ranked.size(); ++j) {
    mask[j] = static_cast<double>(ranked[j]) > cutoff;
  }
  return mask;
}

inline std::vector<std::vector<float>> scored(const std::vector<std::vector<float>>& divergence,
                                              double t, double s) {
  const std::size_t n_models = divergence.size();
  std::vector<std::vector<float>> ranked(n_models);
  for (std::size_t n = 0; n < n_models; ++n) {
    ranked[n] = rank_scores(divergence[n]);
  }
  std::vector<std::vector<float>> scores = softmax_rows(ranked);
  for (std::size_t n = 0; n < n_models; ++n) {
    const std::vector<bool> mask = crucial_mask(ranked[n], t);
    for (std::size_t j = 0; j < mask.size(); ++j) {
      if (mask[j]) {
        scores[n][j] = static_cast<float>(s);
      }
    }
  }
  return scores;
}

inline Mat widen_2d(const Mat& pre, const std::vector<Mat>& models, double t, double s) {
  const std::size_t n_models = models.size();
  const std::size_t k = pre.cols;

  const std::vector<float> pre_norms = column_norms(pre);
  const Mat pre_dirs = directions(pre, pre_norms);

  std::vector<std::vector<float>> mag_div(n_models, std::vector<float>(k));
  std::vector<std::vector<float>> dir_div(n_models, std::vector<float>(k));
  for (std::size_t n = 0; n < n_models; ++n) {
    const std::vector<float> norms = column_norms(models[n]);
    const Mat dirs = directions(models[n], norms);
    for (std::size_t j = 0; j < k; ++j) {
      mag_div[n][j] = std::fabs(norms[j] - pre_norms[j]);
      dir_div[n][j] = 1.0f - column_cosine(dirs, pre_dirs, j);
    }
  }

  const std::vector<std::vector<float>> mag_scores = scored(mag_div, t, s);
  const std::vector<std::vector<float>> dir_scores = scored(dir_div, t, s);

  Mat out{pre.rows, pre.cols, std::vector<float>(pre.rows * pre.cols)};
  for (std::size_t i = 0; i < pre.rows; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double acc = pre.at(i, j);
      for (std::size_t n = 0; n < n_models; ++n) {
        const double weight =
            (static_cast<double>(mag_scores[n][j]) + static_cast<double>(dir_scores[n][j])) / 2.0;
        acc += weight * (static_cast<double>(models[n].at(i, j)) - pre.at(i, j));
      }
      out.at(i, j) = static_cast<float>(acc);
    }
  }
  return out;
}

inline std::vector<float> widen_1d(const std::vector<float>& pre,
                                   const std::vector<std::vector<float>>& models, double t,
                                   double s) {
  const std::size_t n_models = models.size();
  const std::size_t k = pre.size();
  std::vector<std::vector<float>> divergence(n_models, std::vector<float>(k));
  for (std::size_t n = 0; n < n_models; ++n) {
    for (std::size_t j = 0; j < k; ++j) {
      divergence[n][j] = std::fabs(models[n][j] - pre[j]);
    }
  }
  const std::vector<std::vector<float>> scores = scored(divergence, t, s);
  std::vector<float> out(k);
  for (std::size_t j = 0; j < k; ++j) {
    double acc = pre[j];
    for (std::size_t n = 0; n < n_models; ++n) {
      acc += static_cast<double>(scores[n][j]) * (static_cast<double>(models[n][j]) - pre[j]);
    }
    out[j] = static_cast<float>(acc);
  }
  return out;
}

}  // namespace oracle
