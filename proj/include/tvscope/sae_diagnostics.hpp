// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

// Layer diagnosis from SAE activation statistics.
//
//   spec(l, j) = mean_target(l, j) / (mean_other(l, j) + epsilon)
//   SP(l)      = max_j spec(l, j)
//
// A feature is domain-specific when spec > tau_f (strict); a layer is selected by
// a threshold strategy when SP >= tau (inclusive).

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "tvscope/kernels.hpp"
#include "tvscope/task_vector.hpp"

namespace tvscope {

inline constexpr double kDefaultEpsilon = 1e-6;
inline constexpr double kDefaultTauF = 1.0;
inline constexpr double kDefaultTauSp = 4.0;

struct ActivationRow {
    LayerId layer;
    std::int64_t feature = 0;
    double mean_target = 0.0;
    double mean_other = 0.0;
};

struct ActivationStats {
    std::vector<ActivationRow> rows;
    // Per layer: 1 + the largest feature index seen.
    std::map<LayerId, std::int64_t> feature_width;
};

using FeatureKey = std::pair<LayerId, std::int64_t>;

struct SpecProfile {
    std::map<FeatureKey, double> spec;
    std::map<LayerId, double> sp;
    std::map<LayerId, std::int64_t> feature_counts;
    std::map<LayerId, std::int64_t> rows_per_layer;
    double epsilon = kDefaultEpsilon;
    double tau_f = kDefaultTauF;
};

// CSV with header `layer,feature,mean_target,mean_other`.
ActivationStats load_activation_stats(const std::filesystem::path& path);
ActivationStats parse_activation_stats(std::istream& in);
void write_activation_stats(const ActivationStats& stats, std::ostream& out);

SpecProfile feature_specificity(const ActivationStats& stats, double epsilon = kDefaultEpsilon);
SpecProfile layer_sp_scores(SpecProfile profile);
std::map<LayerId, std::int64_t> count_domain_features(const SpecProfile& profile, double tau_f = kDefaultTauF);

// feature_specificity -> layer_sp_scores -> count_domain_features in one call.
SpecProfile diagnose(const ActivationStats& stats, double epsilon = kDefaultEpsilon, double tau_f = kDefaultTauF);

// F_l = { j : spec(l, j) > tau_f }, feature indices ascending.
std::map<LayerId, std::vector<std::int64_t>> domain_features(const SpecProfile& profile, double tau_f);

// Selection strategies ------------------------------------------------------

struct SelectionStrategy;

namespace strategy {
struct Threshold { double tau = kDefaultTauSp; };
struct NoDeep { double tau = kDefaultTauSp; std::vector<std::int64_t> deep{30, 31, 32}; };
struct MidBand { std::int64_t lo = 0; std::int64_t hi = 0; };
struct Explicit { std::vector<std::int64_t> layers; };
struct Union { std::vector<SelectionStrategy> parts; };
struct Intersection { std::vector<SelectionStrategy> parts; };
}  // namespace strategy

struct SelectionStrategy {
    std::variant<strategy::Threshold, strategy::NoDeep, strategy::MidBand, strategy::Explicit,
                 strategy::Union, strategy::Intersection>
        rule;
};

struct LayerSelection {
    std::vector<std::int64_t> layers;  // sorted, unique

    bool empty() const { return layers.empty(); }
    bool contains(LayerId id) const;
    friend bool operator==(const LayerSelection&, const LayerSelection&) = default;
};

LayerSelection make_selection(std::vector<std::int64_t> layers);
LayerSelection select_layers(const SpecProfile& profile, const SelectionStrategy& strategy);

// {"type": "threshold", "tau": 4.0}, {"type": "nodeep", "tau": 4.0, "deep": [30,31,32]},
// {"type": "midband", "lo": 17, "hi": 27}, {"type": "explicit", "layers": [...]},
// {"type": "union"|"intersection", "of": [...]}
SelectionStrategy strategy_from_json(const nlohmann::json& j);
nlohmann::json strategy_to_json(const SelectionStrategy& s);

// SAE decoders ----------------------------------------------------------------

// directions[l] is D x d_model: row j is the decoder direction d_{l,j}. On disk each layer
// is one [D, d_model] tensor whose name matches the layer pattern (e.g. "layers.19.W_dec").
struct SaeDecoder {
    std::map<LayerId, Matrix> directions;

    std::size_t d_model() const;
};

SaeDecoder sae_decoder_from(const TensorMap& tm, const LayerAssigner& assigner = {});
TensorMap to_tensor_map(const SaeDecoder& decoder);

// Feature indices must be below each layer's decoder width.
void check_decoder_covers(const SaeDecoder& decoder, const ActivationStats& stats);

}  // namespace tvscope
