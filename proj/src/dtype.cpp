// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvscope/dtype.hpp"

#include <bit>
#include <cmath>

#include "tvscope/error.hpp"

namespace tvscope {

std::size_t element_size(DType dtype) {
    switch (dtype) {
        case DType::f32: return 4;
        case DType::f64: return 8;
        case DType::bf16: return 2;
    }
    return 0;
}

DType parse_dtype(std::string_view name) {
    if (name == "F32") return DType::f32;
    if (name == "F64") return DType::f64;
    if (name == "BF16") return DType::bf16;
    throw InputError("unsupported dtype '" + std::string(name) + "'");
}

std::string_view dtype_name(DType dtype) {
    switch (dtype) {
        case DType::f32: return "F32";
        case DType::f64: return "F64";
        case DType::bf16: return "BF16";
    }
    return "?";
}

double bf16_to_double(std::uint16_t bits) {
    return static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16));
}

std::uint16_t double_to_bf16(double value) {
    if (std::isnan(value)) {
        // quiet NaN, sign preserved
        return static_cast<std::uint16_t>((std::signbit(value) ? 0x8000u : 0u) | 0x7fc0u);
    }
    float f = static_cast<float>(value);
    if (std::isfinite(f) && static_cast<double>(f) != value) {
        // round-to-odd: truncate toward zero, then force the sticky bit
        if (std::fabs(static_cast<double>(f)) > std::fabs(value)) f = std::nextafter(f, 0.0f);
        f = std::bit_cast<float>(std::bit_cast<std::uint32_t>(f) | 1u);
    }
    std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
    if ((bits & 0x7f800000u) == 0x7f800000u) return static_cast<std::uint16_t>(bits >> 16);  // inf
    const std::uint32_t lsb = (bits >> 16) & 1u;
    bits += 0x7fffu + lsb;
    return static_cast<std::uint16_t>(bits >> 16);
}

}  // namespace tvscope
