// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "merge/engine.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <memory>
#include <mutex>
#include <set>
#include <thread>

#include <fmt/core.h>

#include "merge/baselines.hpp"
#include "merge/errors.hpp"
#include "merge/rng.hpp"
#include "merge/widen.hpp"

namespace merge {

using nlohmann::json;

nlohmann::json MergeReport::to_json() const {
  return {
      {"method", method},
      {"output", output},
      {"tensors_total", tensors_total},
      {"tensors_2d", tensors_2d},
      {"tensors_1d", tensors_1d},
      {"tensors_copied", tensors_copied},
      {"tensors_ignored", tensors_ignored},
      {"total_params", total_params},
      {"threads", threads},
      {"wall_ms", wall_ms},
      {"peak_resident_bytes", peak_resident_bytes},
  };
}

namespace {

void check_finite(const TensorData& tensor, const std::filesystem::path& source) {
  for (float v : tensor.values) {
    if (!std::isfinite(v)) {
      throw InvalidTensor(fmt::format("tensor '{}' in '{}' contains non-finite values",
                                      tensor.meta.name, source.string()));
    }
  }
}

WidenParams widen_params(const MethodParams& p) {
  WidenParams params;
  params.crucial_threshold = p.t;
  params.calibration_value = p.s;
  params.variant = p.variant;
  return params;
}

std::vector<std::vector<float>> model_values(const std::vector<TensorData>& models) {
  std::vector<std::vector<float>> out;
  out.reserve(models.size());
  for (const TensorData& m : models) {
    out.push_back(m.values);
  }
  return out;
}

std::vector<float> sparsified_task_arithmetic(const MergeRecipe& recipe,
                                              const TensorData& backbone,
                                              const std::vector<TensorData>& models,
                                              bool random_drop) {
  const std::size_t size = backbone.values.size();
  std::vector<float> acc(size, 0.0f);
  for (std::size_t n = 0; n < models.size(); ++n) {
    std::vector<float> delta(size);
    for (std::size_t i = 0; i < size; ++i) {
      delta[i] = models[n].values[i] - backbone.values[i];
    }
    std::vector<float> kept =
        random_drop
            ? dare_sparsify(delta, recipe.params.drop_rate,
                            tensor_seed(recipe.params.seed, backbone.meta.name, n))
            : magnitude_prune(delta, recipe.params.drop_rate);
    for (std::size_t i = 0; i < size; ++i) {
      acc[i] += kept[i];
    }
  }
  const float scale = static_cast<float>(recipe.params.lambda);
  std::vector<float> out(size);
  for (std::size_t i = 0; i < size; ++i) {
    const float step = scale * acc[i];
    out[i] = step == 0.0f ? backbone.values[i] : backbone.values[i] + step;
  }
  return out;
}

}  // namespace

std::vector<float> merge_tensor(const MergeRecipe& recipe, const TensorData& backbone,
                                const std::vector<TensorData>& models) {
  switch (recipe.method) {
    case Method::kWiden: {
      const WidenParams params = widen_params(recipe.params);
      if (backbone.meta.rank() == 2) {
        std::vector<Matrix> mats;
        mats.reserve(models.size());
        for (const TensorData& m : models) {
          mats.push_back(m.as_matrix());
        }
        return widen_merge_2d(backbone.as_matrix(), mats, params).data;
      }
      return widen_merge_1d(backbone.values, model_values(models), params);
    }
    case Method::kAverage:
      return average_merge(backbone.values, model_values(models));
    case Method::kTaskArithmetic:
      return task_arithmetic(backbone.values, model_values(models), recipe.params.lambda);
    case Method::kSlerp:
      if (models.size() != 2) {
        throw ArityError(fmt::format("slerp merges exactly 2 models, got {}", models.size()));
      }
      return slerp_merge(models[0].values, models[1].values, recipe.params.phi);
    case Method::kModelStock:
      return model_stock_merge(backbone.values, model_values(models));
    case Method::kTies:
      return ties_merge(backbone.values, model_values(models), recipe.params.keep_ratio,
                        recipe.params.lambda);
    case Method::kBreadcrumbs:
      return breadcrumbs_merge(backbone.values, model_values(models), recipe.params.mask_top,
                               recipe.params.keep_ratio, recipe.params.lambda);
    case Method::kDareTaskArithmetic:
      return sparsified_task_arithmetic(recipe, backbone, models, /*random_drop=*/true);
    case Method::kMagnitudePruneTaskArithmetic:
      return sparsified_task_arithmetic(recipe, backbone, models, /*random_drop=*/false);
  }
  throw ConfigError("unhandled method");
}

MergeReport run_merge(const MergeRecipe& recipe) {
  const auto start = std::chrono::steady_clock::now();
  validate_recipe(recipe);

  // Open everything and decide the work list before creating any output.
  CheckpointReader backbone(recipe.backbone);
  std::vector<std::unique_ptr<CheckpointReader>> models;
  for (const auto& path : recipe.models) {
    models.push_back(std::make_unique<CheckpointReader>(path));
  }

  std::vector<const CheckpointReader*> handles;
  handles.push_back(&backbone);
  for (const auto& m : models) {
    handles.push_back(m.get());
  }
  const HomologyReport homology = validate_homologous(handles);

  MergeReport report;
  report.method = std::string(to_string(recipe.method));
  report.output = recipe.output.string();

  std::set<std::string> copy_names;
  if (!homology.homologous) {
    if (recipe.missing_tensor_policy == MissingTensorPolicy::kError) {
      std::string detail;
      for (std::size_t i = 0; i < homology.issues.size() && i < 8; ++i) {
        const HomologyIssue& issue = homology.issues[i];
        detail += fmt::format("\n  [{}] {} (model {}): {}", issue.kind, issue.name, issue.model,
                              issue.detail);
      }
      throw CheckpointError(
          fmt::format("checkpoints are not homologous:{}", detail));
    }
    for (const HomologyIssue& issue : homology.issues) {
      if (issue.kind == "shape-mismatch") {
        throw CheckpointError(fmt::format("tensor '{}' changes shape across models ({}); "
                                          "cannot merge",
                                          issue.name, issue.detail));
      }
      if (issue.kind == "missing") {
        copy_names.insert(issue.name);
      } else if (issue.kind == "extra") {
        report.tensors_ignored.push_back(issue.name);
      }
    }
    std::sort(report.tensors_ignored.begin(), report.tensors_ignored.end());
    report.tensors_ignored.erase(
        std::unique(report.tensors_ignored.begin(), report.tensors_ignored.end()),
        report.tensors_ignored.end());
  }

  // The output always carries the backbone's tensor set; rank > 2 anywhere is
  // rejected up front from metadata alone.
  std::vector<TensorMeta> metas;
  std::vector<std::string> names;
  for (const auto& [name, loc] : backbone.index()) {
    if (loc.shape.size() > 2) {
      throw UnsupportedRank(fmt::format(
          "tensor '{}' has rank {}; only ranks 1 and 2 are supported", name, loc.shape.size()));
    }
    TensorMeta meta{name, apply_dtype_policy(loc.dtype, recipe.dtype_policy), loc.shape};
    metas.push_back(meta);
    names.push_back(name);
    report.total_params += meta.numel();
    if (copy_names.count(name) != 0) {
      report.tensors_copied.push_back(name);
    } else if (loc.shape.size() == 2) {
      ++report.tensors_2d;
    } else {
      ++report.tensors_1d;
    }
  }
  report.tensors_total = names.size();

  std::size_t threads = recipe.threads;
  if (threads == 0) {
    threads = std::max(1u, std::thread::hardware_concurrency());
  }
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(names.size(), 1));
  report.threads = static_cast<unsigned>(threads);

  CheckpointWriter writer(recipe.output, std::move(metas));

  // Per-tensor parallelism: each worker owns one tensor end to end (read,
  // merge, write), so at most `threads` tensors are resident at once.
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::atomic<std::uint64_t> resident{0};
  std::atomic<std::uint64_t> peak_resident{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  const auto worker = [&]() {
    while (!failed.load(std::memory_order_relaxed)) {
      const std::size_t i = next.fetch_add(1);
      if (i >= names.size()) {
        return;
      }
      try {
        const std::string& name = names[i];
        const TensorData pre = backbone.read(name);
        check_finite(pre, backbone.source());

        const std::uint64_t working_set =
            static_cast<std::uint64_t>(pre.values.size()) * sizeof(float) *
            (copy_names.count(name) ? 2 : models.size() + 2);
        const std::uint64_t now = resident.fetch_add(working_set) + working_set;
        std::uint64_t seen = peak_resident.load();
        while (seen < now && !peak_resident.compare_exchange_weak(seen, now)) {
        }

        std::vector<float> merged;
        if (copy_names.count(name) != 0) {
          merged = pre.values;
        } else {
          std::vector<TensorData> model_tensors;
          model_tensors.reserve(models.size());
          for (const auto& model : models) {
            model_tensors.push_back(model->read(name));
            check_finite(model_tensors.back(), model->source());
          }
          merged = merge_tensor(recipe, pre, model_tensors);
        }
        writer.write(name, merged);
        resident.fetch_sub(working_set);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) {
          first_error = std::current_exception();
        }
        failed.store(true, std::memory_order_relaxed);
        return;
      }
    }
  };

  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back(worker);
    }
    for (std::thread& t : pool) {
      t.join();
    }
  }

  if (first_error) {
    writer.abort();
    std::rethrow_exception(first_error);
  }
  writer.finalize();

  report.peak_resident_bytes = peak_resident.load();
  report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                             start)
                       .count();
  return report;
}

}  // namespace merge
