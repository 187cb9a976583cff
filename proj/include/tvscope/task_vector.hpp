// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

// Weight-space task vectors: per-tensor f64 deltas grouped by transformer layer.

#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "tvscope/kernels.hpp"
#include "tvscope/tensor_store.hpp"

namespace tvscope {

// Layer index parsed from a tensor name. Names outside the layer pattern map to the
// non-layer bucket, which no selection can ever contain.
struct LayerId {
    std::int64_t value = -1;

    static constexpr LayerId none() { return LayerId{-1}; }
    constexpr bool is_layer() const { return value >= 0; }
    auto operator<=>(const LayerId&) const = default;
};

std::string layer_label(LayerId id);

inline constexpr const char* kDefaultLayerPattern = R"(layers\.(\d+)\.)";

// Assigns tensors to layers: a regex with one integer capture group, narrowed by
// optional glob include/exclude lists (fnmatch syntax, matched against the full name).
class LayerAssigner {
public:
    LayerAssigner();
    explicit LayerAssigner(const std::string& pattern, std::vector<std::string> include = {},
                           std::vector<std::string> exclude = {});

    LayerId classify(const std::string& tensor_name) const;
    const std::string& pattern() const { return pattern_text_; }

private:
    std::string pattern_text_;
    std::regex pattern_;
    std::vector<std::string> include_;
    std::vector<std::string> exclude_;
};

struct Delta {
    Shape shape;
    std::vector<double> values;

    friend bool operator==(const Delta&, const Delta&) = default;
};

// Absent deltas are zero; they are never materialized.
struct TaskVector {
    std::map<std::string, Delta> deltas;
    std::map<std::string, LayerId> layer_index;

    void insert(const std::string& name, Delta delta, LayerId layer);
    LayerId layer_of(const std::string& name) const;
    std::set<LayerId> layers() const;
    std::vector<std::string> tensors_in(LayerId layer) const;

    friend bool operator==(const TaskVector&, const TaskVector&) = default;
};

struct LoraPair {
    std::string target;
    Matrix a;  // r x d_in
    Matrix b;  // d_out x r
};

struct LoraFactors {
    std::vector<LoraPair> pairs;
    std::int64_t rank = 0;
    double lora_alpha = 0.0;
};

// ft - base in f64. Throws InputError unless validate_compat(base, ft) is clean.
// Logs a warning when the layer pattern matches no tensor.
TaskVector diff(const TensorMap& base, const TensorMap& ft, const LayerAssigner& assigner = {});

TaskVector scale(const TaskVector& tv, double alpha);

// Reads `<target>.lora_A` / `<target>.lora_B` pairs and the "rank" / "lora_alpha" metadata.
LoraFactors lora_factors_from(const TensorMap& tm);

// Dense delta (lora_alpha / r) * B * A per adapted tensor. When base is given, each target
// must exist there with shape [d_out, d_in].
TaskVector materialize_lora(const LoraFactors& factors, const LayerAssigner& assigner = {},
                            const TensorMap* base = nullptr);

// sqrt of the sum of squares: per-tensor sums run in ascending flat index, then merge in
// lexicographic tensor order.
double frobenius_norm(const TaskVector& tv);
std::map<LayerId, double> layer_frobenius_norms(const TaskVector& tv);

// Task vectors on disk are ordinary containers of F64 tensors tagged with metadata.
TensorMap to_tensor_map(const TaskVector& tv);
TaskVector task_vector_from(const TensorMap& tm, const LayerAssigner& assigner = {});

}  // namespace tvscope
