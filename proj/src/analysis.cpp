// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "merge/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>

#include <fmt/core.h>

#include "merge/errors.hpp"
#include "merge/safetensors.hpp"

namespace merge {

using nlohmann::json;

std::vector<Tier> tier_classify(const RowVector& scores) {
  const std::size_t k = scores.size();
  if (k < 3) {
    throw TooSmall(fmt::format("tier classification needs at least 3 scores, got {}", k));
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  const std::size_t third = k / 3;
  std::vector<Tier> tiers(k, Tier::kHigh);  // remainder lands in High
  for (std::size_t r = 0; r < third; ++r) {
    tiers[order[r]] = Tier::kLow;
  }
  for (std::size_t r = third; r < 2 * third; ++r) {
    tiers[order[r]] = Tier::kMedium;
  }
  return tiers;
}

json TierTransition::to_json() const {
  static const char* kNames[3] = {"L", "M", "H"};
  json cells = json::object();
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      cells[fmt::format("{}->{}", kNames[a], kNames[b])] = fraction[a][b];
    }
  }
  return cells;
}

TierTransition tier_transition(const RowVector& scores_a, const RowVector& scores_b) {
  if (scores_a.size() != scores_b.size()) {
    throw ShapeMismatch(fmt::format("tier transition needs equal lengths, got {} vs {}",
                                    scores_a.size(), scores_b.size()));
  }
  const std::vector<Tier> tiers_a = tier_classify(scores_a);
  const std::vector<Tier> tiers_b = tier_classify(scores_b);
  TierTransition out;
  const double weight = 1.0 / static_cast<double>(scores_a.size());
  for (std::size_t j = 0; j < scores_a.size(); ++j) {
    out.fraction[static_cast<int>(tiers_a[j])][static_cast<int>(tiers_b[j])] += weight;
  }
  return out;
}

std::uint64_t Histogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

std::vector<double> Histogram::edges() const {
  std::vector<double> out(counts.size() + 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = upper * static_cast<double>(i) / static_cast<double>(counts.size());
  }
  return out;
}

json Histogram::to_json() const {
  return {{"upper", upper}, {"counts", counts}, {"edges", edges()}};
}

Histogram importance_histogram(const std::vector<float>& scores, int bins,
                               double calibration_value) {
  if (bins < 1) {
    throw ConfigError(fmt::format("histogram needs at least 1 bin, got {}", bins));
  }
  Histogram hist;
  hist.upper = std::max(1.0, calibration_value);
  hist.counts.assign(static_cast<std::size_t>(bins), 0);
  const double scale = static_cast<double>(bins) / hist.upper;
  for (float v : scores) {
    auto cell = static_cast<std::int64_t>(std::floor(static_cast<double>(v) * scale));
    cell = std::clamp<std::int64_t>(cell, 0, bins - 1);
    ++hist.counts[static_cast<std::size_t>(cell)];
  }
  return hist;
}

std::array<float, 11> delta_deciles(std::vector<float> values) {
  if (values.empty()) {
    throw TooSmall("deciles need a non-empty input");
  }
  std::sort(values.begin(), values.end());
  std::array<float, 11> out{};
  const double last = static_cast<double>(values.size() - 1);
  for (int q = 0; q <= 10; ++q) {
    const auto pos = static_cast<std::size_t>(std::llround(last * (q / 10.0)));
    out[static_cast<std::size_t>(q)] = values[pos];
  }
  return out;
}

namespace {

// Per-model accumulation across tensors: histograms per component, the
// concatenated combined scores of both variants, and all delta values.
struct ModelAccumulator {
  std::vector<std::uint64_t> hist_magnitude;
  std::vector<std::uint64_t> hist_direction;
  std::vector<std::uint64_t> hist_combined;
  RowVector combined_a;
  RowVector combined_b;
  std::vector<float> deltas;
  std::array<std::array<std::uint64_t, 3>, 3> tier_counts{};  // per-tensor mode
  std::uint64_t tier_positions = 0;
  std::uint64_t tensors_too_small = 0;
};

void accumulate_histogram(std::vector<std::uint64_t>& acc, const Histogram& hist) {
  if (acc.empty()) {
    acc.assign(hist.counts.size(), 0);
  }
  for (std::size_t i = 0; i < hist.counts.size(); ++i) {
    acc[i] += hist.counts[i];
  }
}

RowVector combined_row(const WidenScores& scores, std::size_t n) {
  RowVector out(scores.magnitude.cols);
  for (std::size_t j = 0; j < scores.magnitude.cols; ++j) {
    out[j] = 0.5f * (scores.magnitude(n, j) + scores.direction(n, j));
  }
  return out;
}

void append(RowVector& dst, const RowVector& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

}  // namespace

AnalysisResult analyze_checkpoints(const std::filesystem::path& backbone_path,
                                   const std::vector<std::filesystem::path>& model_paths,
                                   const AnalysisOptions& options) {
  if (model_paths.empty()) {
    throw EmptyModelList("analysis needs at least one model");
  }
  CheckpointReader backbone(backbone_path);
  std::vector<std::unique_ptr<CheckpointReader>> models;
  for (const auto& path : model_paths) {
    models.push_back(std::make_unique<CheckpointReader>(path));
  }
  const std::size_t n_models = models.size();
  const double upper = std::max(1.0, std::max(options.variant_a.calibration_value,
                                              options.variant_b.calibration_value));

  std::vector<ModelAccumulator> acc(n_models);
  for (const auto& [name, loc] : backbone.index()) {
    const TensorData pre = backbone.read(name);
    std::vector<TensorData> tensors;
    tensors.reserve(n_models);
    for (const auto& model : models) {
      tensors.push_back(model->read(name));
    }

    std::vector<RowVector> combined_a(n_models), combined_b(n_models);
    if (pre.meta.rank() == 2) {
      std::vector<Matrix> mats;
      mats.reserve(n_models);
      for (const TensorData& t : tensors) {
        mats.push_back(t.as_matrix());
      }
      const Matrix pre_mat = pre.as_matrix();
      const WidenScores sa = widen_scores_2d(pre_mat, mats, options.variant_a);
      const WidenScores sb = widen_scores_2d(pre_mat, mats, options.variant_b);
      for (std::size_t n = 0; n < n_models; ++n) {
        combined_a[n] = combined_row(sa, n);
        combined_b[n] = combined_row(sb, n);
        accumulate_histogram(acc[n].hist_magnitude,
                             importance_histogram(sa.magnitude.row(n), options.bins, upper));
        accumulate_histogram(acc[n].hist_direction,
                             importance_histogram(sa.direction.row(n), options.bins, upper));
      }
    } else {
      std::vector<RowVector> rows;
      rows.reserve(n_models);
      for (const TensorData& t : tensors) {
        rows.push_back(t.values);
      }
      const ScoreTable sa = widen_scores_1d(pre.values, rows, options.variant_a);
      const ScoreTable sb = widen_scores_1d(pre.values, rows, options.variant_b);
      for (std::size_t n = 0; n < n_models; ++n) {
        combined_a[n] = sa.row(n);
        combined_b[n] = sb.row(n);
        accumulate_histogram(acc[n].hist_magnitude,
                             importance_histogram(sa.row(n), options.bins, upper));
      }
    }

    for (std::size_t n = 0; n < n_models; ++n) {
      accumulate_histogram(acc[n].hist_combined,
                           importance_histogram(combined_a[n], options.bins, upper));
      for (std::size_t i = 0; i < pre.values.size(); ++i) {
        acc[n].deltas.push_back(tensors[n].values[i] - pre.values[i]);
      }
      if (options.per_tensor_tiers) {
        if (combined_a[n].size() < 3) {
          ++acc[n].tensors_too_small;
        } else {
          const std::vector<Tier> ta = tier_classify(combined_a[n]);
          const std::vector<Tier> tb = tier_classify(combined_b[n]);
          for (std::size_t j = 0; j < ta.size(); ++j) {
            ++acc[n].tier_counts[static_cast<int>(ta[j])][static_cast<int>(tb[j])];
            ++acc[n].tier_positions;
          }
        }
      } else {
        append(acc[n].combined_a, combined_a[n]);
        append(acc[n].combined_b, combined_b[n]);
      }
    }
  }

  AnalysisResult result;
  result.histograms = {{"bins", options.bins}, {"upper", upper}, {"models", json::array()}};
  result.transitions = {{"mode", options.per_tensor_tiers ? "per-tensor" : "whole-model"},
                        {"variant_a", std::string(to_string(options.variant_a.variant))},
                        {"variant_b", std::string(to_string(options.variant_b.variant))},
                        {"models", json::array()}};
  result.deciles = {{"models", json::array()}};

  for (std::size_t n = 0; n < n_models; ++n) {
    const std::string model_name = model_paths[n].string();
    const auto edges = [&](const std::vector<std::uint64_t>& counts) {
      Histogram h;
      h.upper = upper;
      h.counts = counts;
      return h.to_json();
    };
    json components = json::object();
    components["combined"] = edges(acc[n].hist_combined);
    components["magnitude"] = edges(acc[n].hist_magnitude);
    if (!acc[n].hist_direction.empty()) {
      components["direction"] = edges(acc[n].hist_direction);
    }
    result.histograms["models"].push_back({{"model", model_name}, {"components", components}});

    TierTransition transition;
    if (options.per_tensor_tiers) {
      if (acc[n].tier_positions > 0) {
        for (int a = 0; a < 3; ++a) {
          for (int b = 0; b < 3; ++b) {
            transition.fraction[a][b] = static_cast<double>(acc[n].tier_counts[a][b]) /
                                        static_cast<double>(acc[n].tier_positions);
          }
        }
      }
      result.transitions["models"].push_back({{"model", model_name},
                                              {"matrix", transition.to_json()},
                                              {"skipped_small_tensors",
                                               acc[n].tensors_too_small}});
    } else {
      transition = tier_transition(acc[n].combined_a, acc[n].combined_b);
      result.transitions["models"].push_back(
          {{"model", model_name}, {"matrix", transition.to_json()}});
    }

    const std::array<float, 11> deciles = delta_deciles(acc[n].deltas);
    json percentiles = json::array();
    json values = json::array();
    for (int q = 0; q <= 10; ++q) {
      percentiles.push_back(q * 10);
      values.push_back(deciles[static_cast<std::size_t>(q)]);
    }
    result.deciles["models"].push_back(
        {{"model", model_name}, {"percentiles", percentiles}, {"values", values}});
  }
  return result;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream file(path);
  if (!file) {
    throw Error(fmt::format("cannot write '{}'", path.string()));
  }
  file << text;
  if (!file) {
    throw Error(fmt::format("failed writing '{}'", path.string()));
  }
}

std::string histograms_csv(const json& histograms) {
  std::string csv = "model,component,bin,lo,hi,count\n";
  for (const auto& model : histograms["models"]) {
    for (const auto& [component, hist] : model["components"].items()) {
      const auto& counts = hist["counts"];
      const auto& edges = hist["edges"];
      for (std::size_t i = 0; i < counts.size(); ++i) {
        csv += fmt::format("{},{},{},{},{},{}\n", model["model"].get<std::string>(), component,
                           i, edges[i].get<double>(), edges[i + 1].get<double>(),
                           counts[i].get<std::uint64_t>());
      }
    }
  }
  return csv;
}

std::string transitions_csv(const json& transitions) {
  std::string csv = "model,from,to,fraction\n";
  static const char* kNames[3] = {"L", "M", "H"};
  for (const auto& model : transitions["models"]) {
    for (const char* a : kNames) {
      for (const char* b : kNames) {
        csv += fmt::format("{},{},{},{}\n", model["model"].get<std::string>(), a, b,
                           model["matrix"][fmt::format("{}->{}", a, b)].get<double>());
      }
    }
  }
  return csv;
}

std::string deciles_csv(const json& deciles) {
  std::string csv = "model,percentile,value\n";
  for (const auto& model : deciles["models"]) {
    const auto& percentiles = model["percentiles"];
    const auto& values = model["values"];
    for (std::size_t i = 0; i < percentiles.size(); ++i) {
      csv += fmt::format("{},{},{}\n", model["model"].get<std::string>(),
                         percentiles[i].get<int>(), values[i].get<double>());
    }
  }
  return csv;
}

}  // namespace

void AnalysisResult::write_files(const std::filesystem::path& out_dir) const {
  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "importance_histograms.json", histograms.dump(2) + "\n");
  write_text(out_dir / "importance_histograms.csv", histograms_csv(histograms));
  write_text(out_dir / "tier_transitions.json", transitions.dump(2) + "\n");
  write_text(out_dir / "tier_transitions.csv", transitions_csv(transitions));
  write_text(out_dir / "delta_deciles.json", deciles.dump(2) + "\n");
  write_text(out_dir / "delta_deciles.csv", deciles_csv(deciles));
}

}  // namespace merge
