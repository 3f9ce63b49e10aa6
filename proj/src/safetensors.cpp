// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "merge/safetensors.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <system_error>

#include <fcntl.h>
#include <unistd.h>

#include <fmt/core.h>
#include <fmt/ranges.h>

#include "merge/errors.hpp"

namespace merge {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t TensorMeta::numel() const {
  std::uint64_t n = 1;
  for (std::int64_t d : shape) {
    n *= static_cast<std::uint64_t>(d);
  }
  return n;
}

Matrix TensorData::as_matrix() const {
  if (meta.rank() != 2) {
    throw UnsupportedRank(fmt::format("tensor '{}' has rank {}, expected 2", meta.name,
                                      meta.rank()));
  }
  return Matrix(static_cast<std::size_t>(meta.shape[0]), static_cast<std::size_t>(meta.shape[1]),
                values);
}

namespace {

struct ParsedHeader {
  json entries;
  std::uint64_t payload_offset = 0;  // absolute offset where tensor data begins
  std::uint64_t payload_size = 0;
};

ParsedHeader read_header(const fs::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) {
    throw FormatError(fmt::format("cannot open '{}'", path.string()));
  }
  std::error_code ec;
  const std::uint64_t file_size = fs::file_size(path, ec);
  if (ec) {
    throw FormatError(fmt::format("cannot stat '{}': {}", path.string(), ec.message()));
  }
  std::uint64_t header_size = 0;
  if (file_size < sizeof(header_size)) {
    throw FormatError(fmt::format("'{}' is too short for a safetensors header", path.string()));
  }
  file.read(reinterpret_cast<char*>(&header_size), sizeof(header_size));
  if (!file || header_size > file_size - sizeof(header_size)) {
    throw FormatError(fmt::format("'{}' declares a header of {} bytes but holds only {}",
                                  path.string(), header_size, file_size));
  }
  std::string header(header_size, '\0');
  file.read(header.data(), static_cast<std::streamsize>(header_size));
  if (!file) {
    throw FormatError(fmt::format("failed reading the header of '{}'", path.string()));
  }
  ParsedHeader parsed;
  try {
    parsed.entries = json::parse(header);
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("'{}' header is not valid JSON: {}", path.string(), e.what()));
  }
  if (!parsed.entries.is_object()) {
    throw FormatError(fmt::format("'{}' header must be a JSON object", path.string()));
  }
  parsed.payload_offset = sizeof(header_size) + header_size;
  parsed.payload_size = file_size - parsed.payload_offset;
  return parsed;
}

void check_ranges_disjoint(const fs::path& path,
                           std::vector<std::pair<std::uint64_t, std::uint64_t>>& ranges) {
  std::sort(ranges.begin(), ranges.end());
  for (std::size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].first < ranges[i - 1].second) {
      throw FormatError(fmt::format("'{}' has overlapping tensor byte ranges", path.string()));
    }
  }
}

}  // namespace

CheckpointReader::CheckpointReader(const fs::path& path) : source_(path) {
  if (!fs::exists(path)) {
    throw FormatError(fmt::format("checkpoint '{}' does not exist", path.string()));
  }
  if (path.extension() == ".json") {
    parse_shard_index(path);
  } else {
    parse_file(path);
  }
  for (const auto& [name, loc] : index_) {
    TensorMeta m{name, loc.dtype, loc.shape};
    total_params_ += m.numel();
  }
}

void CheckpointReader::parse_file(const fs::path& path) {
  ParsedHeader parsed = read_header(path);
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
  for (const auto& [name, entry] : parsed.entries.items()) {
    if (name == "__metadata__") {
      continue;
    }
    if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
        !entry.contains("data_offsets")) {
      throw FormatError(fmt::format("tensor '{}' in '{}' lacks dtype/shape/data_offsets", name,
                                    path.string()));
    }
    TensorLocation loc;
    loc.dtype = dtype_from_name(entry["dtype"].get<std::string>());
    loc.shape = entry["shape"].get<std::vector<std::int64_t>>();
    for (std::int64_t d : loc.shape) {
      if (d <= 0) {
        throw FormatError(fmt::format("tensor '{}' in '{}' has non-positive dimension {}", name,
                                      path.string(), d));
      }
    }
    const auto offsets = entry["data_offsets"].get<std::vector<std::uint64_t>>();
    if (offsets.size() != 2 || offsets[1] < offsets[0]) {
      throw FormatError(fmt::format("tensor '{}' in '{}' has malformed data_offsets", name,
                                    path.string()));
    }
    if (offsets[1] > parsed.payload_size) {
      throw FormatError(fmt::format("tensor '{}' in '{}' extends past the end of the file", name,
                                    path.string()));
    }
    TensorMeta meta{name, loc.dtype, loc.shape};
    if (offsets[1] - offsets[0] != meta.byte_size()) {
      throw FormatError(fmt::format(
          "tensor '{}' in '{}' declares {} bytes but shape and dtype imply {}", name,
          path.string(), offsets[1] - offsets[0], meta.byte_size()));
    }
    loc.file = path;
    loc.begin = parsed.payload_offset + offsets[0];
    loc.end = parsed.payload_offset + offsets[1];
    ranges.emplace_back(loc.begin, loc.end);
    if (!index_.emplace(name, std::move(loc)).second) {
      throw FormatError(fmt::format("duplicate tensor name '{}' in '{}'", name, path.string()));
    }
  }
  check_ranges_disjoint(path, ranges);
}

void CheckpointReader::parse_shard_index(const fs::path& path) {
  std::ifstream file(path);
  if (!file) {
    throw FormatError(fmt::format("cannot open index '{}'", path.string()));
  }
  json doc;
  try {
    doc = json::parse(file);
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("index '{}' is not valid JSON: {}", path.string(), e.what()));
  }
  if (!doc.is_object() || !doc.contains("weight_map") || !doc["weight_map"].is_object()) {
    throw FormatError(fmt::format("index '{}' lacks a weight_map object", path.string()));
  }

  // Parse each referenced shard once, then pick out the mapped tensors.
  std::map<std::string, std::map<std::string, TensorLocation>> shards;
  const fs::path dir = path.parent_path();
  for (const auto& [tensor, shard] : doc["weight_map"].items()) {
    const std::string shard_name = shard.get<std::string>();
    auto it = shards.find(shard_name);
    if (it == shards.end()) {
      const fs::path shard_path = dir / shard_name;
      if (!fs::exists(shard_path)) {
        throw MissingShard(fmt::format("index '{}' references missing shard '{}'", path.string(),
                                       shard_name));
      }
      CheckpointReader shard_reader(shard_path);
      it = shards.emplace(shard_name, shard_reader.index_).first;
    }
    auto tensor_it = it->second.find(tensor);
    if (tensor_it == it->second.end()) {
      throw FormatError(fmt::format("tensor '{}' mapped to shard '{}' is not present there",
                                    tensor, shard_name));
    }
    if (!index_.emplace(tensor, tensor_it->second).second) {
      throw FormatError(fmt::format("duplicate tensor name '{}' in index '{}'", tensor,
                                    path.string()));
    }
  }
}

TensorMeta CheckpointReader::meta(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw UnknownTensor(fmt::format("'{}' has no tensor named '{}'", source_.string(), name));
  }
  return TensorMeta{name, it->second.dtype, it->second.shape};
}

TensorData CheckpointReader::read(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw UnknownTensor(fmt::format("'{}' has no tensor named '{}'", source_.string(), name));
  }
  const TensorLocation& loc = it->second;
  if (loc.shape.size() > 2) {
    throw UnsupportedRank(fmt::format("tensor '{}' has rank {}; only ranks 1 and 2 are supported",
                                      name, loc.shape.size()));
  }
  std::ifstream file(loc.file, std::ios::binary);
  if (!file) {
    throw FormatError(fmt::format("cannot open '{}'", loc.file.string()));
  }
  std::vector<std::byte> payload(loc.end - loc.begin);
  file.seekg(static_cast<std::streamoff>(loc.begin));
  file.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!file) {
    throw FormatError(fmt::format("failed reading tensor '{}' from '{}'", name,
                                  loc.file.string()));
  }
  TensorData data;
  data.meta = TensorMeta{name, loc.dtype, loc.shape};
  data.values = decode_values(payload, loc.dtype);
  return data;
}

std::string_view to_string(DtypePolicy policy) {
  switch (policy) {
    case DtypePolicy::kPreserveInput: return "preserve-input";
    case DtypePolicy::kForceF32: return "force-fp32";
    case DtypePolicy::kForceBF16: return "force-bf16";
  }
  return "preserve-input";
}

DtypePolicy dtype_policy_from_string(std::string_view name) {
  if (name == "preserve-input") return DtypePolicy::kPreserveInput;
  if (name == "force-fp32") return DtypePolicy::kForceF32;
  if (name == "force-bf16") return DtypePolicy::kForceBF16;
  throw ConfigError(fmt::format(
      "unknown dtype policy '{}' (expected preserve-input, force-fp32, force-bf16)", name));
}

Dtype apply_dtype_policy(Dtype input, DtypePolicy policy) {
  switch (policy) {
    case DtypePolicy::kPreserveInput: return input;
    case DtypePolicy::kForceF32: return Dtype::kF32;
    case DtypePolicy::kForceBF16: return Dtype::kBF16;
  }
  return input;
}

CheckpointWriter::CheckpointWriter(fs::path path, std::vector<TensorMeta> metas)
    : path_(std::move(path)), temp_path_(path_.string() + ".tmp") {
  // Layout: names ascending, payload packed in that order. std::map keeps the
  // header JSON and the offsets in the same deterministic order.
  json header = json::object();
  std::uint64_t offset = 0;
  for (TensorMeta& meta : metas) {
    if (meta.name.empty()) {
      throw ConfigError("tensor names must be non-empty");
    }
    std::string name = meta.name;
    Slot slot;
    slot.meta = std::move(meta);
    if (slots_.count(name) != 0) {
      throw ConfigError(fmt::format("duplicate tensor name '{}'", name));
    }
    slots_.emplace(std::move(name), std::move(slot));
  }
  for (auto& [name, slot] : slots_) {
    slot.begin = offset;
    slot.end = offset + slot.meta.byte_size();
    offset = slot.end;
    header[name] = {{"dtype", std::string(dtype_name(slot.meta.dtype))},
                    {"shape", slot.meta.shape},
                    {"data_offsets", {slot.begin, slot.end}}};
  }

  const std::string header_text = header.dump();
  const std::uint64_t header_size = header_text.size();

  fd_ = ::open(temp_path_.c_str(), O_RDWR | O_CREAT | O_TRUNC, 0644);
  if (fd_ < 0) {
    throw Error(fmt::format("cannot create '{}': {}", temp_path_.string(), std::strerror(errno)));
  }
  const std::uint64_t total = sizeof(header_size) + header_size + offset;
  if (::ftruncate(fd_, static_cast<off_t>(total)) != 0) {
    const int err = errno;
    abort();
    throw Error(fmt::format("cannot size '{}': {}", temp_path_.string(), std::strerror(err)));
  }
  std::string prefix(sizeof(header_size), '\0');
  std::memcpy(prefix.data(), &header_size, sizeof(header_size));
  prefix += header_text;
  if (::pwrite(fd_, prefix.data(), prefix.size(), 0) != static_cast<ssize_t>(prefix.size())) {
    const int err = errno;
    abort();
    throw Error(fmt::format("cannot write header of '{}': {}", temp_path_.string(),
                            std::strerror(err)));
  }
  const std::uint64_t payload_offset = prefix.size();
  for (auto& [name, slot] : slots_) {
    slot.begin += payload_offset;
    slot.end += payload_offset;
  }
}

CheckpointWriter::~CheckpointWriter() {
  if (!finalized_) {
    abort();
  }
}

void CheckpointWriter::write(const std::string& name, std::span<const float> values) {
  Slot* slot = nullptr;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = slots_.find(name);
    if (it == slots_.end()) {
      throw UnknownTensor(fmt::format("tensor '{}' was not registered with the writer", name));
    }
    if (it->second.written) {
      throw Error(fmt::format("tensor '{}' was already written", name));
    }
    slot = &it->second;
  }
  if (values.size() != slot->meta.numel()) {
    throw ShapeMismatch(fmt::format("tensor '{}' expects {} values, got {}", name,
                                    slot->meta.numel(), values.size()));
  }
  const std::vector<std::byte> payload = encode_values(values, slot->meta.dtype);
  std::uint64_t written = 0;
  while (written < payload.size()) {
    const ssize_t n = ::pwrite(fd_, payload.data() + written, payload.size() - written,
                               static_cast<off_t>(slot->begin + written));
    if (n < 0) {
      throw Error(fmt::format("write failed for tensor '{}' in '{}': {}", name,
                              temp_path_.string(), std::strerror(errno)));
    }
    written += static_cast<std::uint64_t>(n);
  }
  std::lock_guard<std::mutex> lock(mutex_);
  slot->written = true;
}

void CheckpointWriter::finalize() {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    for (const auto& [name, slot] : slots_) {
      if (!slot.written) {
        throw Error(fmt::format("tensor '{}' was never written", name));
      }
    }
  }
  if (::fsync(fd_) != 0) {
    throw Error(fmt::format("fsync failed for '{}': {}", temp_path_.string(),
                            std::strerror(errno)));
  }
  ::close(fd_);
  fd_ = -1;
  std::error_code ec;
  fs::rename(temp_path_, path_, ec);
  if (ec) {
    throw Error(fmt::format("cannot rename '{}' to '{}': {}", temp_path_.string(), path_.string(),
                            ec.message()));
  }
  finalized_ = true;
}

void CheckpointWriter::abort() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
  std::error_code ec;
  fs::remove(temp_path_, ec);
  finalized_ = true;  // nothing left to clean up
}

void write_checkpoint(const fs::path& path, const std::vector<TensorData>& tensors,
                      DtypePolicy policy) {
  std::vector<TensorMeta> metas;
  metas.reserve(tensors.size());
  for (const TensorData& t : tensors) {
    TensorMeta meta = t.meta;
    meta.dtype = apply_dtype_policy(meta.dtype, policy);
    metas.push_back(std::move(meta));
  }
  CheckpointWriter writer(path, std::move(metas));
  for (const TensorData& t : tensors) {
    writer.write(t.meta.name, t.values);
  }
  writer.finalize();
}

nlohmann::json HomologyReport::to_json() const {
  json issues_json = json::array();
  for (const HomologyIssue& issue : issues) {
    issues_json.push_back({{"kind", issue.kind},
                           {"name", issue.name},
                           {"model", issue.model},
                           {"detail", issue.detail}});
  }
  return {{"homologous", homologous}, {"issues", issues_json}};
}

HomologyReport validate_homologous(const std::vector<const CheckpointReader*>& handles) {
  if (handles.size() < 2) {
    throw ConfigError("homology validation needs at least two checkpoints");
  }
  HomologyReport report;
  const CheckpointReader& ref = *handles.front();
  for (std::size_t m = 1; m < handles.size(); ++m) {
    const CheckpointReader& other = *handles[m];
    for (const auto& [name, loc] : ref.index()) {
      auto it = other.index().find(name);
      if (it == other.index().end()) {
        report.issues.push_back({"missing", name, m, "present in reference only"});
        report.homologous = false;
        continue;
      }
      if (it->second.shape != loc.shape) {
        report.issues.push_back(
            {"shape-mismatch", name, m,
             fmt::format("reference {} vs model {}", fmt::join(loc.shape, "x"),
                         fmt::join(it->second.shape, "x"))});
        report.homologous = false;
      } else if (it->second.dtype != loc.dtype) {
        report.issues.push_back({"dtype-mismatch", name, m,
                                 fmt::format("reference {} vs model {}", dtype_name(loc.dtype),
                                             dtype_name(it->second.dtype))});
      }
    }
    for (const auto& [name, loc] : other.index()) {
      if (ref.index().count(name) == 0) {
        report.issues.push_back({"extra", name, m, "absent from reference"});
        report.homologous = false;
      }
    }
  }
  return report;
}

}  // namespace merge
