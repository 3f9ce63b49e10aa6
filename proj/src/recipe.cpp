// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "merge/recipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <string>

#include <fmt/core.h>

#include "merge/errors.hpp"

namespace merge {

using nlohmann::json;

std::string_view to_string(Method method) {
  switch (method) {
    case Method::kWiden: return "widen";
    case Method::kAverage: return "average";
    case Method::kTaskArithmetic: return "task_arithmetic";
    case Method::kSlerp: return "slerp";
    case Method::kModelStock: return "model_stock";
    case Method::kTies: return "ties";
    case Method::kBreadcrumbs: return "breadcrumbs";
    case Method::kDareTaskArithmetic: return "dare_task_arithmetic";
    case Method::kMagnitudePruneTaskArithmetic: return "magnitude_prune_task_arithmetic";
  }
  return "widen";
}

Method method_from_string(std::string_view name) {
  if (name == "widen") return Method::kWiden;
  if (name == "average") return Method::kAverage;
  if (name == "task_arithmetic") return Method::kTaskArithmetic;
  if (name == "slerp") return Method::kSlerp;
  if (name == "model_stock") return Method::kModelStock;
  if (name == "ties") return Method::kTies;
  if (name == "breadcrumbs") return Method::kBreadcrumbs;
  if (name == "dare_task_arithmetic") return Method::kDareTaskArithmetic;
  if (name == "magnitude_prune_task_arithmetic") return Method::kMagnitudePruneTaskArithmetic;
  throw ConfigError(fmt::format("unknown method '{}'", name));
}

std::string_view to_string(MissingTensorPolicy policy) {
  return policy == MissingTensorPolicy::kError ? "error" : "copy_backbone";
}

MissingTensorPolicy missing_tensor_policy_from_string(std::string_view name) {
  if (name == "error") return MissingTensorPolicy::kError;
  if (name == "copy_backbone") return MissingTensorPolicy::kCopyBackbone;
  throw ConfigError(fmt::format(
      "unknown missing_tensor_policy '{}' (expected error, copy_backbone)", name));
}

namespace {

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    if (allowed.count(key) == 0) {
      throw ConfigError(fmt::format("unknown key '{}' in {}", key, where));
    }
  }
}

double require_number(const json& value, const std::string& key) {
  if (!value.is_number()) {
    throw ConfigError(fmt::format("param '{}' must be a number", key));
  }
  const double v = value.get<double>();
  if (!std::isfinite(v)) {
    throw ConfigError(fmt::format("param '{}' must be finite", key));
  }
  return v;
}

const std::set<std::string> kTopLevelKeys = {
    "backbone", "models",       "method", "params",
    "missing_tensor_policy",    "dtype_policy",
    "output",   "threads",
};

const std::set<std::string> kParamKeys = {
    "t", "s", "lambda", "phi", "keep_ratio", "mask_top", "drop_rate", "seed", "variant",
};

// Grid-searchable keys, expanded in this order.
const std::vector<std::string> kGridKeys = {
    "t", "s", "lambda", "phi", "keep_ratio", "mask_top", "drop_rate",
};

void assign_param(MethodParams& params, const std::string& key, const json& value) {
  if (key == "seed") {
    if (!value.is_number_unsigned()) {
      throw ConfigError("param 'seed' must be a non-negative integer");
    }
    params.seed = value.get<std::uint64_t>();
  } else if (key == "variant") {
    if (!value.is_string()) {
      throw ConfigError("param 'variant' must be a string");
    }
    params.variant = widen_variant_from_string(value.get<std::string>());
  } else if (key == "t") {
    params.t = require_number(value, key);
  } else if (key == "s") {
    params.s = require_number(value, key);
  } else if (key == "lambda") {
    params.lambda = require_number(value, key);
  } else if (key == "phi") {
    params.phi = require_number(value, key);
  } else if (key == "keep_ratio") {
    params.keep_ratio = require_number(value, key);
  } else if (key == "mask_top") {
    params.mask_top = require_number(value, key);
  } else if (key == "drop_rate") {
    params.drop_rate = require_number(value, key);
  } else {
    throw ConfigError(fmt::format("unknown key '{}' in params", key));
  }
}

MergeRecipe parse_recipe_scalars(const json& doc) {
  if (!doc.is_object()) {
    throw ConfigError("recipe must be a JSON object");
  }
  reject_unknown_keys(doc, kTopLevelKeys, "recipe");

  MergeRecipe recipe;
  if (!doc.contains("backbone") || !doc["backbone"].is_string()) {
    throw ConfigError("recipe needs a string 'backbone' path");
  }
  recipe.backbone = doc["backbone"].get<std::string>();
  if (!doc.contains("models") || !doc["models"].is_array() || doc["models"].empty()) {
    throw ConfigError("recipe needs a non-empty 'models' array");
  }
  for (const auto& m : doc["models"]) {
    if (!m.is_string()) {
      throw ConfigError("every entry of 'models' must be a string path");
    }
    recipe.models.emplace_back(m.get<std::string>());
  }
  if (!doc.contains("output") || !doc["output"].is_string()) {
    throw ConfigError("recipe needs a string 'output' path");
  }
  recipe.output = doc["output"].get<std::string>();
  if (doc.contains("method")) {
    recipe.method = method_from_string(doc["method"].get<std::string>());
  }
  if (doc.contains("missing_tensor_policy")) {
    recipe.missing_tensor_policy =
        missing_tensor_policy_from_string(doc["missing_tensor_policy"].get<std::string>());
  }
  if (doc.contains("dtype_policy")) {
    recipe.dtype_policy = dtype_policy_from_string(doc["dtype_policy"].get<std::string>());
  }
  if (doc.contains("threads")) {
    const json& t = doc["threads"];
    if (t.is_string() && t.get<std::string>() == "auto") {
      recipe.threads = 0;
    } else if (t.is_number_unsigned() && t.get<std::uint64_t>() >= 1) {
      recipe.threads = static_cast<unsigned>(t.get<std::uint64_t>());
    } else {
      throw ConfigError("'threads' must be a positive integer or \"auto\"");
    }
  }
  if (doc.contains("params")) {
    if (!doc["params"].is_object()) {
      throw ConfigError("'params' must be an object");
    }
    reject_unknown_keys(doc["params"], kParamKeys, "params");
  }
  return recipe;
}

// Shortest decimal spelling for path suffixes: 1.0 -> "1", 0.5 -> "0.5".
std::string format_value(double v) {
  std::string text = fmt::format("{}", v);
  return text;
}

std::filesystem::path suffixed_output(const std::filesystem::path& base,
                                      const std::string& suffix) {
  std::filesystem::path out = base;
  const std::string ext = out.extension().string();
  out.replace_extension();
  out += suffix;
  out += ext;
  return out;
}

}  // namespace

MergeRecipe parse_recipe(const json& doc) {
  MergeRecipe recipe = parse_recipe_scalars(doc);
  if (doc.contains("params")) {
    for (const auto& [key, value] : doc["params"].items()) {
      if (value.is_array()) {
        throw ConfigError(fmt::format(
            "param '{}' is a list; use the grid subcommand to expand list-valued recipes", key));
      }
      assign_param(recipe.params, key, value);
    }
  }
  validate_recipe(recipe);
  return recipe;
}

MergeRecipe load_recipe(const std::filesystem::path& path) {
  std::ifstream file(path);
  if (!file) {
    throw ConfigError(fmt::format("cannot open recipe '{}'", path.string()));
  }
  json doc;
  try {
    doc = json::parse(file);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("recipe '{}' is not valid JSON: {}", path.string(), e.what()));
  }
  return parse_recipe(doc);
}

json recipe_to_json(const MergeRecipe& recipe) {
  json models = json::array();
  for (const auto& m : recipe.models) {
    models.push_back(m.string());
  }
  json params = {
      {"t", recipe.params.t},
      {"s", recipe.params.s},
      {"lambda", recipe.params.lambda},
      {"phi", recipe.params.phi},
      {"keep_ratio", recipe.params.keep_ratio},
      {"mask_top", recipe.params.mask_top},
      {"drop_rate", recipe.params.drop_rate},
      {"seed", recipe.params.seed},
      {"variant", std::string(to_string(recipe.params.variant))},
  };
  json doc = {
      {"backbone", recipe.backbone.string()},
      {"models", models},
      {"method", std::string(to_string(recipe.method))},
      {"params", params},
      {"missing_tensor_policy", std::string(to_string(recipe.missing_tensor_policy))},
      {"dtype_policy", std::string(to_string(recipe.dtype_policy))},
      {"output", recipe.output.string()},
  };
  if (recipe.threads == 0) {
    doc["threads"] = "auto";
  } else {
    doc["threads"] = recipe.threads;
  }
  return doc;
}

void validate_recipe(const MergeRecipe& recipe) {
  if (recipe.models.empty()) {
    throw EmptyModelList("recipe lists no models");
  }
  if (recipe.output.empty()) {
    throw ConfigError("recipe needs an output path");
  }
  const std::size_t n = recipe.models.size();
  switch (recipe.method) {
    case Method::kSlerp:
      if (n != 2) {
        throw ArityError(fmt::format("slerp merges exactly 2 models, recipe lists {}", n));
      }
      break;
    case Method::kModelStock:
      if (n < 2) {
        throw ArityError(fmt::format("model_stock needs at least 2 models, recipe lists {}", n));
      }
      break;
    default:
      break;
  }
  const MethodParams& p = recipe.params;
  if (p.phi < 0.0 || p.phi > 1.0) {
    throw ConfigError(fmt::format("phi must be in [0, 1], got {}", p.phi));
  }
  if (p.keep_ratio <= 0.0 || p.keep_ratio > 1.0) {
    throw ConfigError(fmt::format("keep_ratio must be in (0, 1], got {}", p.keep_ratio));
  }
  if (p.mask_top < 0.0 || p.mask_top >= 1.0) {
    throw ConfigError(fmt::format("mask_top must be in [0, 1), got {}", p.mask_top));
  }
  if (recipe.method == Method::kBreadcrumbs && p.mask_top + p.keep_ratio > 1.0) {
    throw ConfigError(fmt::format("infeasible breadcrumbs mask: mask_top {} + keep_ratio {} > 1",
                                  p.mask_top, p.keep_ratio));
  }
  if (p.drop_rate < 0.0 || p.drop_rate >= 1.0) {
    throw ConfigError(fmt::format("drop_rate must be in [0, 1), got {}", p.drop_rate));
  }
}

std::vector<MergeRecipe> grid_search_expand(const json& doc) {
  MergeRecipe base = parse_recipe_scalars(doc);

  // Split params into scalars (applied to every recipe) and lists (expanded).
  std::vector<std::pair<std::string, std::vector<double>>> lists;
  if (doc.contains("params")) {
    for (const auto& [key, value] : doc["params"].items()) {
      if (!value.is_array()) {
        assign_param(base.params, key, value);
        continue;
      }
      if (std::find(kGridKeys.begin(), kGridKeys.end(), key) == kGridKeys.end()) {
        throw ConfigError(fmt::format("param '{}' cannot be grid-searched", key));
      }
      if (value.empty()) {
        throw ConfigError(fmt::format("param '{}' lists no values", key));
      }
      std::vector<double> values;
      for (const auto& v : value) {
        values.push_back(require_number(v, key));
      }
      lists.emplace_back(key, std::move(values));
    }
  }
  // Fixed expansion order regardless of JSON key order.
  std::sort(lists.begin(), lists.end(), [](const auto& a, const auto& b) {
    const auto pos = [](const std::string& k) {
      return std::find(kGridKeys.begin(), kGridKeys.end(), k) - kGridKeys.begin();
    };
    return pos(a.first) < pos(b.first);
  });

  std::vector<MergeRecipe> expanded;
  std::vector<std::size_t> cursor(lists.size(), 0);
  while (true) {
    MergeRecipe recipe = base;
    std::string suffix;
    for (std::size_t i = 0; i < lists.size(); ++i) {
      const auto& [key, values] = lists[i];
      const double v = values[cursor[i]];
      assign_param(recipe.params, key, json(v));
      suffix += fmt::format("_{}{}", key, format_value(v));
    }
    recipe.output = suffixed_output(base.output, suffix);
    validate_recipe(recipe);
    expanded.push_back(std::move(recipe));

    // odometer increment
    std::size_t i = lists.size();
    while (i > 0) {
      --i;
      if (++cursor[i] < lists[i].second.size()) {
        break;
      }
      cursor[i] = 0;
      if (i == 0) {
        return expanded;
      }
    }
    if (lists.empty()) {
      return expanded;
    }
  }
}

}  // namespace merge
