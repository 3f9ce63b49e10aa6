// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "merge/dtype.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include <fmt/core.h>

#include "merge/errors.hpp"

namespace merge {

std::size_t dtype_size(Dtype dtype) {
  return dtype == Dtype::kF32 ? 4 : 2;
}

std::string_view dtype_name(Dtype dtype) {
  switch (dtype) {
    case Dtype::kF32: return "F32";
    case Dtype::kF16: return "F16";
    case Dtype::kBF16: return "BF16";
  }
  return "F32";
}

Dtype dtype_from_name(std::string_view name) {
  if (name == "F32") return Dtype::kF32;
  if (name == "F16") return Dtype::kF16;
  if (name == "BF16") return Dtype::kBF16;
  throw FormatError(fmt::format("unsupported dtype '{}' (supported: F32, F16, BF16)", name));
}

float half_to_float(std::uint16_t bits) {
  const std::uint32_t sign = static_cast<std::uint32_t>(bits & 0x8000u) << 16;
  const std::uint32_t exp = (bits >> 10) & 0x1fu;
  std::uint32_t mant = bits & 0x3ffu;
  std::uint32_t out;
  if (exp == 31) {  // Inf / NaN, payload preserved
    out = sign | 0x7f800000u | (mant << 13);
  } else if (exp == 0) {
    if (mant == 0) {
      out = sign;
    } else {  // subnormal: normalize into a regular float
      std::uint32_t e = 113;
      while ((mant & 0x400u) == 0) {
        mant <<= 1;
        --e;
      }
      out = sign | (e << 23) | ((mant & 0x3ffu) << 13);
    }
  } else {
    out = sign | ((exp + 112u) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(out);
}

std::uint16_t float_to_half(float value) {
  std::uint32_t f = std::bit_cast<std::uint32_t>(value);
  const std::uint32_t sign = (f >> 16) & 0x8000u;
  f &= 0x7fffffffu;

  if (f >= 0x7f800000u) {  // Inf / NaN
    const std::uint16_t mant =
        f == 0x7f800000u ? 0 : static_cast<std::uint16_t>(((f >> 13) & 0x3ffu) | 0x200u);
    return static_cast<std::uint16_t>(sign | 0x7c00u | mant);
  }
  if (f >= 0x47800000u) {  // >= 2^16 overflows to Inf
    return static_cast<std::uint16_t>(sign | 0x7c00u);
  }
  if (f < 0x38800000u) {  // below the smallest normal half
    if (f < 0x33000000u) {  // < 2^-25 rounds to zero
      return static_cast<std::uint16_t>(sign);
    }
    const std::uint32_t exp = f >> 23;
    const std::uint32_t mant = (f & 0x7fffffu) | 0x800000u;
    const std::uint32_t shift = 126u - exp;
    std::uint32_t out = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1u);
    const std::uint32_t half = 1u << (shift - 1u);
    if (rem > half || (rem == half && (out & 1u))) {
      ++out;
    }
    return static_cast<std::uint16_t>(sign | out);
  }
  // normal range: rebias the exponent and round 23 -> 10 mantissa bits
  const std::uint32_t mant = f & 0x7fffffu;
  const std::uint32_t exp = (f >> 23) - 112u;
  std::uint32_t out = (exp << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1fffu;
  if (rem > 0x1000u || (rem == 0x1000u && (out & 1u))) {
    ++out;  // carry may roll into the exponent, saturating to Inf as intended
  }
  return static_cast<std::uint16_t>(sign | out);
}

float bfloat_to_float(std::uint16_t bits) {
  return std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16);
}

std::uint16_t float_to_bfloat(float value) {
  const std::uint32_t f = std::bit_cast<std::uint32_t>(value);
  if ((f & 0x7fffffffu) > 0x7f800000u) {  // NaN: keep it a NaN after truncation
    return static_cast<std::uint16_t>((f >> 16) | 0x0040u);
  }
  const std::uint32_t rounding = 0x7fffu + ((f >> 16) & 1u);
  return static_cast<std::uint16_t>((f + rounding) >> 16);
}

std::vector<float> decode_values(std::span<const std::byte> payload, Dtype dtype) {
  const std::size_t elem = dtype_size(dtype);
  if (payload.size() % elem != 0) {
    throw FormatError(fmt::format("payload of {} bytes is not a multiple of element size {}",
                                  payload.size(), elem));
  }
  const std::size_t count = payload.size() / elem;
  std::vector<float> out(count);
  if (dtype == Dtype::kF32) {
    std::memcpy(out.data(), payload.data(), payload.size());
    return out;
  }
  for (std::size_t i = 0; i < count; ++i) {
    std::uint16_t bits;
    std::memcpy(&bits, payload.data() + i * 2, 2);
    out[i] = dtype == Dtype::kF16 ? half_to_float(bits) : bfloat_to_float(bits);
  }
  return out;
}

std::vector<std::byte> encode_values(std::span<const float> values, Dtype dtype) {
  std::vector<std::byte> out(values.size() * dtype_size(dtype));
  if (dtype == Dtype::kF32) {
    std::memcpy(out.data(), values.data(), out.size());
    return out;
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint16_t bits =
        dtype == Dtype::kF16 ? float_to_half(values[i]) : float_to_bfloat(values[i]);
    std::memcpy(out.data() + i * 2, &bits, 2);
  }
  return out;
}

}  // namespace merge
