// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

// Named-tensor checkpoint containers.
//
// On-disk layout: an 8-byte little-endian header length N, N bytes of UTF-8 JSON
// mapping tensor name -> {"dtype", "shape", "data_offsets"} (plus an optional
// "__metadata__" string map), then the raw little-endian payload. Offsets are
// relative to the end of the header.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "tvscope/dtype.hpp"

namespace tvscope {

using Shape = std::vector<std::int64_t>;

std::int64_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

class DenseTensor {
public:
    DenseTensor() = default;
    // Throws InputError if bytes.size() != element_size(dtype) * product(shape) or a dim is < 1.
    DenseTensor(DType dtype, Shape shape, std::vector<std::uint8_t> bytes);

    static DenseTensor from_f64(DType dtype, Shape shape, std::span<const double> values);

    DType dtype() const { return dtype_; }
    const Shape& shape() const { return shape_; }
    std::int64_t numel() const { return element_count(shape_); }
    std::span<const std::uint8_t> bytes() const { return bytes_; }

    // Widened copy; exact for every supported dtype.
    std::vector<double> to_f64() const;

    friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

private:
    DType dtype_ = DType::f64;
    Shape shape_;
    std::vector<std::uint8_t> bytes_;
};

// std::map keeps names in lexicographic (byte) order, which is the iteration order everywhere.
struct TensorMap {
    std::map<std::string, DenseTensor> entries;
    std::map<std::string, std::string> metadata;

    friend bool operator==(const TensorMap&, const TensorMap&) = default;
};

struct CompatReport {
    std::vector<std::string> matched;
    std::vector<std::string> missing_in_a;
    std::vector<std::string> missing_in_b;
    std::vector<std::tuple<std::string, Shape, Shape>> shape_mismatches;
    std::vector<std::tuple<std::string, DType, DType>> dtype_mismatches;

    bool compatible() const {
        return missing_in_a.empty() && missing_in_b.empty() && shape_mismatches.empty() &&
               dtype_mismatches.empty();
    }
    std::string summary() const;
};

TensorMap read_checkpoint(const std::filesystem::path& path);
TensorMap parse_checkpoint(std::span<const std::uint8_t> file_bytes);

void write_checkpoint(const TensorMap& tm, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_checkpoint(const TensorMap& tm);

CompatReport validate_compat(const TensorMap& a, const TensorMap& b);

// Small helpers shared by the CLI and tests.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace tvscope
