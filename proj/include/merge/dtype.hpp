// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace merge {

/// Storage element types supported by the checkpoint container.
enum class Dtype {
  kF32,
  kF16,
  kBF16,
};

std::size_t dtype_size(Dtype dtype);
std::string_view dtype_name(Dtype dtype);             // safetensors spelling: F32/F16/BF16
Dtype dtype_from_name(std::string_view name);         // throws FormatError on anything else

// Scalar conversions. The float -> 16-bit directions round to nearest even,
// so any value that originated from the narrow type round-trips bit-exactly.
float half_to_float(std::uint16_t bits);
std::uint16_t float_to_half(float value);
float bfloat_to_float(std::uint16_t bits);
std::uint16_t float_to_bfloat(float value);

/// Decodes a raw little-endian payload into fp32 values.
std::vector<float> decode_values(std::span<const std::byte> payload, Dtype dtype);

/// Encodes fp32 values into the raw little-endian payload of the given dtype.
std::vector<std::byte> encode_values(std::span<const float> values, Dtype dtype);

}  // namespace merge
