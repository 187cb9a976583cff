// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvscope/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "tvscope/error.hpp"

static_assert(std::endian::native == std::endian::little, "tvscope assumes a little-endian host");

namespace tvscope {

using nlohmann::json;

std::int64_t element_count(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

DenseTensor::DenseTensor(DType dtype, Shape shape, std::vector<std::uint8_t> bytes)
    : dtype_(dtype), shape_(std::move(shape)), bytes_(std::move(bytes)) {
    for (auto d : shape_) {
        if (d < 1) throw InputError("tensor shape " + shape_string(shape_) + " has a non-positive dim");
    }
    const auto expected = static_cast<std::size_t>(element_count(shape_)) * element_size(dtype_);
    if (bytes_.size() != expected) {
        throw InputError("tensor byte size " + std::to_string(bytes_.size()) + " does not match " +
                         std::string(dtype_name(dtype_)) + shape_string(shape_));
    }
}

DenseTensor DenseTensor::from_f64(DType dtype, Shape shape, std::span<const double> values) {
    std::vector<std::uint8_t> bytes(values.size() * element_size(dtype));
    switch (dtype) {
        case DType::f64:
            std::memcpy(bytes.data(), values.data(), bytes.size());
            break;
        case DType::f32:
            for (std::size_t i = 0; i < values.size(); ++i) {
                const float f = static_cast<float>(values[i]);
                std::memcpy(bytes.data() + 4 * i, &f, 4);
            }
            break;
        case DType::bf16:
            for (std::size_t i = 0; i < values.size(); ++i) {
                const std::uint16_t h = double_to_bf16(values[i]);
                std::memcpy(bytes.data() + 2 * i, &h, 2);
            }
            break;
    }
    return DenseTensor(dtype, std::move(shape), std::move(bytes));
}

std::vector<double> DenseTensor::to_f64() const {
    const auto n = static_cast<std::size_t>(numel());
    std::vector<double> out(n);
    switch (dtype_) {
        case DType::f64:
            std::memcpy(out.data(), bytes_.data(), n * 8);
            break;
        case DType::f32:
            for (std::size_t i = 0; i < n; ++i) {
                float f;
                std::memcpy(&f, bytes_.data() + 4 * i, 4);
                out[i] = f;
            }
            break;
        case DType::bf16:
            for (std::size_t i = 0; i < n; ++i) {
                std::uint16_t h;
                std::memcpy(&h, bytes_.data() + 2 * i, 2);
                out[i] = bf16_to_double(h);
            }
            break;
    }
    return out;
}

std::string CompatReport::summary() const {
    std::ostringstream os;
    os << matched.size() << " matched";
    if (!missing_in_a.empty()) os << ", " << missing_in_a.size() << " missing in first (e.g. " << missing_in_a.front() << ")";
    if (!missing_in_b.empty()) os << ", " << missing_in_b.size() << " missing in second (e.g. " << missing_in_b.front() << ")";
    for (const auto& [name, sa, sb] : shape_mismatches)
        os << ", shape mismatch " << name << " " << shape_string(sa) << " vs " << shape_string(sb);
    for (const auto& [name, da, db] : dtype_mismatches)
        os << ", dtype mismatch " << name << " " << dtype_name(da) << " vs " << dtype_name(db);
    return os.str();
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

TensorMap parse_checkpoint(std::span<const std::uint8_t> file) {
    if (file.size() < 8) throw InputError("checkpoint shorter than its 8-byte header length");
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, file.data(), 8);
    if (header_len > file.size() - 8) {
        throw InputError("header length " + std::to_string(header_len) + " exceeds file size");
    }
    const auto* header_begin = reinterpret_cast<const char*>(file.data() + 8);
    json header;
    try {
        header = json::parse(header_begin, header_begin + header_len);
    } catch (const json::parse_error& e) {
        throw InputError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    if (!header.is_object()) throw InputError("checkpoint header is not a JSON object");

    const std::span<const std::uint8_t> payload = file.subspan(8 + header_len);
    TensorMap tm;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;

    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") {
            if (!entry.is_object()) throw InputError("__metadata__ must be an object");
            for (const auto& [k, v] : entry.items()) {
                if (!v.is_string()) throw InputError("__metadata__ value for '" + k + "' is not a string");
                tm.metadata[k] = v.get<std::string>();
            }
            continue;
        }
        if (name.empty()) throw InputError("empty tensor name");
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets")) {
            throw InputError("tensor '" + name + "' lacks dtype/shape/data_offsets");
        }
        if (!entry["dtype"].is_string()) throw InputError("tensor '" + name + "' dtype is not a string");
        const DType dtype = parse_dtype(entry["dtype"].get<std::string>());
        Shape shape;
        for (const auto& d : entry["shape"]) {
            if (!d.is_number_integer()) throw InputError("tensor '" + name + "' has a non-integer dim");
            shape.push_back(d.get<std::int64_t>());
        }
        const auto& offs = entry["data_offsets"];
        if (!offs.is_array() || offs.size() != 2 || !offs[0].is_number_unsigned() || !offs[1].is_number_unsigned()) {
            throw InputError("tensor '" + name + "' has malformed data_offsets");
        }
        const auto begin = offs[0].get<std::uint64_t>();
        const auto end = offs[1].get<std::uint64_t>();
        if (begin > end || end > payload.size()) {
            throw InputError("tensor '" + name + "' data_offsets out of bounds");
        }
        ranges.emplace_back(begin, end);
        std::vector<std::uint8_t> bytes(payload.begin() + static_cast<std::ptrdiff_t>(begin),
                                        payload.begin() + static_cast<std::ptrdiff_t>(end));
        tm.entries.emplace(name, DenseTensor(dtype, std::move(shape), std::move(bytes)));
    }

    std::sort(ranges.begin(), ranges.end());
    for (std::size_t i = 1; i < ranges.size(); ++i) {
        if (ranges[i].first < ranges[i - 1].second) throw InputError("overlapping tensor data_offsets");
    }
    return tm;
}

TensorMap read_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return parse_checkpoint(bytes);
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

std::vector<std::uint8_t> serialize_checkpoint(const TensorMap& tm) {
    // nlohmann::json objects are key-sorted, so the dump is canonical.
    json header = json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tm.entries) {
        if (name.empty()) throw InputError("empty tensor name");
        const std::uint64_t size = t.bytes().size();
        header[name] = {{"dtype", dtype_name(t.dtype())}, {"shape", t.shape()}, {"data_offsets", {offset, offset + size}}};
        offset += size;
    }
    if (!tm.metadata.empty()) header["__metadata__"] = tm.metadata;

    std::string text = header.dump();
    text.append((8 - text.size() % 8) % 8, ' ');

    std::vector<std::uint8_t> out(8 + text.size() + offset);
    const std::uint64_t n = text.size();
    std::memcpy(out.data(), &n, 8);
    std::memcpy(out.data() + 8, text.data(), text.size());
    auto* cursor = out.data() + 8 + text.size();
    for (const auto& [name, t] : tm.entries) {
        std::memcpy(cursor, t.bytes().data(), t.bytes().size());
        cursor += t.bytes().size();
    }
    return out;
}

void write_checkpoint(const TensorMap& tm, const std::filesystem::path& path) {
    write_file_bytes(path, serialize_checkpoint(tm));
}

CompatReport validate_compat(const TensorMap& a, const TensorMap& b) {
    CompatReport r;
    auto ia = a.entries.begin();
    auto ib = b.entries.begin();
    while (ia != a.entries.end() || ib != b.entries.end()) {
        if (ib == b.entries.end() || (ia != a.entries.end() && ia->first < ib->first)) {
            r.missing_in_b.push_back(ia->first);
            ++ia;
        } else if (ia == a.entries.end() || ib->first < ia->first) {
            r.missing_in_a.push_back(ib->first);
            ++ib;
        } else {
            const auto& ta = ia->second;
            const auto& tb = ib->second;
            if (ta.shape() != tb.shape()) {
                r.shape_mismatches.emplace_back(ia->first, ta.shape(), tb.shape());
            } else if (ta.dtype() != tb.dtype()) {
                r.dtype_mismatches.emplace_back(ia->first, ta.dtype(), tb.dtype());
            } else {
                r.matched.push_back(ia->first);
            }
            ++ia;
            ++ib;
        }
    }
    return r;
}

}  // namespace tvscope
