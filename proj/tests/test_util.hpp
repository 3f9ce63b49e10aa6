// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <fmt/core.h>

#include "merge/safetensors.hpp"

namespace testutil {

/// Self-cleaning unique temp directory.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           fmt::format("modelmerge-test-{}-{}", ::getpid(), counter.fetch_add(1));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path file(const std::string& name) const { return path / name; }
};

inline std::vector<float> random_values(std::mt19937& rng, std::size_t count, float lo = -1.0f,
                                        float hi = 1.0f) {
  std::uniform_real_distribution<float> dist(lo, hi);
  std::vector<float> out(count);
  for (float& v : out) {
    v = dist(rng);
  }
  return out;
}

inline merge::TensorData make_tensor(const std::string& name, std::vector<std::int64_t> shape,
                                     std::vector<float> values,
                                     merge::Dtype dtype = merge::Dtype::kF32) {
  merge::TensorData t;
  t.meta = merge::TensorMeta{name, dtype, std::move(shape)};
  t.values = std::move(values);
  return t;
}

/// Random checkpoint with a mix of 2-D and 1-D tensors.
inline std::vector<merge::TensorData> random_checkpoint(std::mt19937& rng,
                                                        std::size_t tensor_count,
                                                        std::size_t max_dim,
                                                        merge::Dtype dtype = merge::Dtype::kF32) {
  std::uniform_int_distribution<std::size_t> dim(1, max_dim);
  std::vector<merge::TensorData> out;
  for (std::size_t i = 0; i < tensor_count; ++i) {
    const bool is_2d = i % 3 != 2;  // two thirds matrices, one third vectors
    std::vector<std::int64_t> shape;
    if (is_2d) {
      shape = {static_cast<std::int64_t>(dim(rng)), static_cast<std::int64_t>(dim(rng))};
    } else {
      shape = {static_cast<std::int64_t>(dim(rng))};
    }
    std::size_t numel = 1;
    for (std::int64_t d : shape) {
      numel *= static_cast<std::size_t>(d);
    }
    std::vector<float> values = random_values(rng, numel);
    if (dtype != merge::Dtype::kF32) {
      // quantize so stored and in-memory values agree exactly
      for (float& v : values) {
        v = dtype == merge::Dtype::kF16 ? merge::half_to_float(merge::float_to_half(v))
                                        : merge::bfloat_to_float(merge::float_to_bfloat(v));
      }
    }
    out.push_back(make_tensor(fmt::format("tensor.{}", i), std::move(shape), std::move(values),
                              dtype));
  }
  return out;
}

/// Gaussian perturbation of every value; metas unchanged.
inline std::vector<merge::TensorData> perturbed(const std::vector<merge::TensorData>& base,
                                                std::mt19937& rng, double sigma) {
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<merge::TensorData> out = base;
  for (merge::TensorData& t : out) {
    for (float& v : t.values) {
      v = static_cast<float>(v + noise(rng));
      if (t.meta.dtype != merge::Dtype::kF32) {
        v = t.meta.dtype == merge::Dtype::kF16 ? merge::half_to_float(merge::float_to_half(v))
                                               : merge::bfloat_to_float(merge::float_to_bfloat(v));
      }
    }
  }
  return out;
}

inline std::filesystem::path write_fixture(const TempDir& dir, const std::string& name,
                                           const std::vector<merge::TensorData>& tensors) {
  const std::filesystem::path path = dir.file(name);
  merge::write_checkpoint(path, tensors);
  return path;
}

/// Max |a - b| scaled by max(1, |b|) over all entries.
inline double max_relative_error(const std::vector<float>& a, const std::vector<float>& b) {
  double worst = a.size() == b.size() ? 0.0 : 1e30;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
    const double scale = std::max(1.0, std::abs(static_cast<double>(b[i])));
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]) / scale);
  }
  return worst;
}

}  // namespace testutil
