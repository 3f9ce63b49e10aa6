// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "merge/dtype.hpp"
#include "merge/types.hpp"

namespace merge {

/// Name, dtype, and shape of one stored tensor. Rank 1 and 2 are the only
/// ranks the merge paths accept; readers index higher ranks but refuse to
/// load them.
struct TensorMeta {
  std::string name;
  Dtype dtype = Dtype::kF32;
  std::vector<std::int64_t> shape;

  std::size_t rank() const { return shape.size(); }
  std::uint64_t numel() const;
  std::uint64_t byte_size() const { return numel() * dtype_size(dtype); }
};

/// A tensor loaded into memory, upcast to fp32.
struct TensorData {
  TensorMeta meta;
  std::vector<float> values;

  /// Row-major 2-D view (throws UnsupportedRank unless rank() == 2).
  Matrix as_matrix() const;
};

/// Where one tensor lives on disk: which file, and the absolute byte range
/// of its payload within that file.
struct TensorLocation {
  Dtype dtype = Dtype::kF32;
  std::vector<std::int64_t> shape;
  std::filesystem::path file;
  std::uint64_t begin = 0;  // absolute offset of the first payload byte
  std::uint64_t end = 0;    // one past the last payload byte
};

/**
 * Lazy view over a safetensors checkpoint, single-file or sharded.
 *
 * The container starts with an 8-byte little-endian header length, followed
 * by a UTF-8 JSON header mapping tensor names to {dtype, shape,
 * data_offsets}, followed by the contiguous payload. A sharded checkpoint is
 * a JSON index with a "weight_map" from tensor name to shard file name;
 * shards live next to the index.
 *
 * Construction parses headers only and never touches payload bytes; data is
 * read on demand by read(). Distinct tensors may be read concurrently.
 */
class CheckpointReader {
 public:
  /// Opens a `.safetensors` file, or a `.json` shard index.
  explicit CheckpointReader(const std::filesystem::path& path);

  /// Name -> location map, ordered by name.
  const std::map<std::string, TensorLocation>& index() const { return index_; }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  TensorMeta meta(const std::string& name) const;

  /// Loads one tensor and upcasts it to fp32. Rank above 2 is refused.
  TensorData read(const std::string& name) const;

  std::uint64_t total_params() const { return total_params_; }
  const std::filesystem::path& source() const { return source_; }

 private:
  void parse_file(const std::filesystem::path& path);
  void parse_shard_index(const std::filesystem::path& path);

  std::filesystem::path source_;
  std::map<std::string, TensorLocation> index_;
  std::uint64_t total_params_ = 0;
};

/// Output dtype selection for written checkpoints.
enum class DtypePolicy {
  kPreserveInput,  // each tensor keeps the dtype it was registered with
  kForceF32,
  kForceBF16,
};

std::string_view to_string(DtypePolicy policy);
DtypePolicy dtype_policy_from_string(std::string_view name);

/**
 * Writer with a fixed, deterministic layout.
 *
 * All tensor metadata is supplied up front; the header is written and the
 * file sized immediately, with payload ranges assigned in ascending name
 * order. write() converts fp32 values to the tensor's storage dtype and
 * writes them at the precomputed offset, so distinct tensors may be written
 * from different threads in any order. Data goes to `<path>.tmp` and is
 * renamed into place by finalize() once every tensor has been written;
 * destroying an unfinalized writer removes the temporary file.
 */
class CheckpointWriter {
 public:
  CheckpointWriter(std::filesystem::path path, std::vector<TensorMeta> metas);
  ~CheckpointWriter();

  CheckpointWriter(const CheckpointWriter&) = delete;
  CheckpointWriter& operator=(const CheckpointWriter&) = delete;

  /// Converts and writes one registered tensor. Thread-safe across names.
  void write(const std::string& name, std::span<const float> values);

  /// Verifies completeness, flushes, and renames the temp file into place.
  void finalize();

  /// Drops the temp file without publishing anything.
  void abort();

 private:
  struct Slot {
    TensorMeta meta;
    std::uint64_t begin = 0;
    std::uint64_t end = 0;
    bool written = false;
  };

  std::filesystem::path path_;
  std::filesystem::path temp_path_;
  int fd_ = -1;
  std::map<std::string, Slot> slots_;
  std::mutex mutex_;
  bool finalized_ = false;
};

/// One-call convenience: applies the dtype policy to every meta and streams
/// the tensors out in sorted-name order.
void write_checkpoint(const std::filesystem::path& path, const std::vector<TensorData>& tensors,
                      DtypePolicy policy = DtypePolicy::kPreserveInput);

/// Resolves the on-disk dtype for a tensor under a policy.
Dtype apply_dtype_policy(Dtype input, DtypePolicy policy);

/// One problem found while comparing checkpoints.
struct HomologyIssue {
  std::string kind;  // "missing" | "extra" | "shape-mismatch" | "dtype-mismatch"
  std::string name;
  std::size_t model = 0;  // index into the handle list (0 = reference)
  std::string detail;
};

/// Comparison of N checkpoints against the first one. Models are homologous
/// when the name sets and shapes all agree; dtype differences are reported
/// but do not break homology (math upcasts to fp32 anyway).
struct HomologyReport {
  bool homologous = true;
  std::vector<HomologyIssue> issues;

  nlohmann::json to_json() const;
};

HomologyReport validate_homologous(const std::vector<const CheckpointReader*>& handles);

}  // namespace merge
