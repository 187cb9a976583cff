// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace tvscope {

enum class DType : std::uint8_t { f32, f64, bf16 };

std::size_t element_size(DType dtype);

// Container spelling: "F32", "F64", "BF16". Throws InputError on anything else.
DType parse_dtype(std::string_view name);
std::string_view dtype_name(DType dtype);

// bf16 is the upper half of an IEEE binary32; widening is exact.
double bf16_to_double(std::uint16_t bits);

// Correctly rounded (round-to-nearest-even) narrowing from binary64.
// Uses round-to-odd into binary32 first so the second rounding cannot double-round.
std::uint16_t double_to_bf16(double value);

}  // namespace tvscope
