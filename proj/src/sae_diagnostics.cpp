// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvscope/sae_diagnostics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "tvscope/error.hpp"

namespace tvscope {

using nlohmann::json;

namespace {

constexpr const char* kStatsHeader = "layer,feature,mean_target,mean_other";

template <typename T>
T parse_field(std::string_view field, std::size_t line_no, const char* what) {
    T value{};
    const auto* end = field.data() + field.size();
    const auto [ptr, ec] = std::from_chars(field.data(), end, value);
    if (ec != std::errc() || ptr != end) {
        throw InputError("activation stats line " + std::to_string(line_no) + ": bad " + what + " '" +
                         std::string(field) + "'");
    }
    return value;
}

}  // namespace

ActivationStats parse_activation_stats(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw InputError("activation stats file is empty (no header)");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kStatsHeader) throw InputError("activation stats header must be '" + std::string(kStatsHeader) + "'");

    ActivationStats stats;
    std::set<FeatureKey> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string_view> fields;
        std::string_view rest(line);
        for (;;) {
            const auto comma = rest.find(',');
            fields.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (fields.size() != 4) {
            throw InputError("activation stats line " + std::to_string(line_no) + ": expected 4 fields");
        }
        ActivationRow row;
        const auto layer = parse_field<std::int64_t>(fields[0], line_no, "layer");
        row.feature = parse_field<std::int64_t>(fields[1], line_no, "feature");
        row.mean_target = parse_field<double>(fields[2], line_no, "mean_target");
        row.mean_other = parse_field<double>(fields[3], line_no, "mean_other");
        if (layer < 0 || row.feature < 0) {
            throw InputError("activation stats line " + std::to_string(line_no) + ": negative index");
        }
        if (!std::isfinite(row.mean_target) || !std::isfinite(row.mean_other) || row.mean_target < 0 ||
            row.mean_other < 0) {
            throw InputError("activation stats line " + std::to_string(line_no) + ": means must be finite and >= 0");
        }
        row.layer = LayerId{layer};
        if (!seen.emplace(row.layer, row.feature).second) {
            throw InputError("activation stats line " + std::to_string(line_no) + ": duplicate (layer " +
                             std::to_string(layer) + ", feature " + std::to_string(row.feature) + ")");
        }
        auto& width = stats.feature_width[row.layer];
        width = std::max(width, row.feature + 1);
        stats.rows.push_back(row);
    }
    return stats;
}

ActivationStats load_activation_stats(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path.string() + "'");
    try {
        return parse_activation_stats(in);
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

void write_activation_stats(const ActivationStats& stats, std::ostream& out) {
    out << kStatsHeader << '\n';
    char buf[64];
    for (const auto& r : stats.rows) {
        out << r.layer.value << ',' << r.feature << ',';
        auto res = std::to_chars(buf, buf + sizeof buf, r.mean_target);
        out.write(buf, res.ptr - buf) << ',';
        res = std::to_chars(buf, buf + sizeof buf, r.mean_other);
        out.write(buf, res.ptr - buf) << '\n';
    }
}

SpecProfile feature_specificity(const ActivationStats& stats, double epsilon) {
    if (!(epsilon > 0)) throw InputError("epsilon must be > 0");
    SpecProfile p;
    p.epsilon = epsilon;
    for (const auto& r : stats.rows) {
        p.spec[{r.layer, r.feature}] = r.mean_target / (r.mean_other + epsilon);
        ++p.rows_per_layer[r.layer];
    }
    return p;
}

SpecProfile layer_sp_scores(SpecProfile profile) {
    profile.sp.clear();
    for (const auto& [layer, n] : profile.rows_per_layer) profile.sp[layer] = 0.0;
    for (const auto& [key, s] : profile.spec) {
        auto& best = profile.sp[key.first];
        best = std::max(best, s);
    }
    return profile;
}

std::map<LayerId, std::int64_t> count_domain_features(const SpecProfile& profile, double tau_f) {
    std::map<LayerId, std::int64_t> counts;
    for (const auto& [layer, n] : profile.rows_per_layer) counts[layer] = 0;
    for (const auto& [key, s] : profile.spec)
        if (s > tau_f) ++counts[key.first];
    return counts;
}

SpecProfile diagnose(const ActivationStats& stats, double epsilon, double tau_f) {
    SpecProfile p = layer_sp_scores(feature_specificity(stats, epsilon));
    p.tau_f = tau_f;
    p.feature_counts = count_domain_features(p, tau_f);
    return p;
}

std::map<LayerId, std::vector<std::int64_t>> domain_features(const SpecProfile& profile, double tau_f) {
    std::map<LayerId, std::vector<std::int64_t>> out;
    for (const auto& [layer, n] : profile.rows_per_layer) out[layer];
    for (const auto& [key, s] : profile.spec)
        if (s > tau_f) out[key.first].push_back(key.second);
    return out;
}

// Selection ---------------------------------------------------------------

bool LayerSelection::contains(LayerId id) const {
    return id.is_layer() && std::binary_search(layers.begin(), layers.end(), id.value);
}

LayerSelection make_selection(std::vector<std::int64_t> layers) {
    std::sort(layers.begin(), layers.end());
    layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
    return LayerSelection{std::move(layers)};
}

namespace {

std::vector<std::int64_t> threshold_layers(const SpecProfile& profile, double tau) {
    std::vector<std::int64_t> out;
    for (const auto& [layer, sp] : profile.sp)
        if (layer.is_layer() && sp >= tau) out.push_back(layer.value);
    return out;
}

struct Selector {
    const SpecProfile& profile;

    std::vector<std::int64_t> operator()(const strategy::Threshold& t) const { return threshold_layers(profile, t.tau); }
    std::vector<std::int64_t> operator()(const strategy::NoDeep& t) const {
        auto out = threshold_layers(profile, t.tau);
        std::erase_if(out, [&](std::int64_t l) { return std::find(t.deep.begin(), t.deep.end(), l) != t.deep.end(); });
        return out;
    }
    std::vector<std::int64_t> operator()(const strategy::MidBand& m) const {
        std::vector<std::int64_t> out;
        for (auto l = std::max<std::int64_t>(m.lo, 0); l <= m.hi; ++l) out.push_back(l);
        return out;
    }
    std::vector<std::int64_t> operator()(const strategy::Explicit& e) const { return e.layers; }
    std::vector<std::int64_t> operator()(const strategy::Union& u) const {
        std::vector<std::int64_t> out;
        for (const auto& part : u.parts) {
            const auto s = select_layers(profile, part);
            out.insert(out.end(), s.layers.begin(), s.layers.end());
        }
        return out;
    }
    std::vector<std::int64_t> operator()(const strategy::Intersection& x) const {
        if (x.parts.empty()) return {};
        auto acc = select_layers(profile, x.parts.front()).layers;
        for (std::size_t i = 1; i < x.parts.size(); ++i) {
            const auto s = select_layers(profile, x.parts[i]).layers;
            std::vector<std::int64_t> next;
            std::set_intersection(acc.begin(), acc.end(), s.begin(), s.end(), std::back_inserter(next));
            acc = std::move(next);
        }
        return acc;
    }
};

}  // namespace

LayerSelection select_layers(const SpecProfile& profile, const SelectionStrategy& s) {
    auto layers = std::visit(Selector{profile}, s.rule);
    for (auto l : layers)
        if (l < 0) throw InputError("selection contains negative layer " + std::to_string(l));
    return make_selection(std::move(layers));
}

SelectionStrategy strategy_from_json(const json& j) {
    try {
        const std::string type = j.at("type").get<std::string>();
        if (type == "threshold") return {strategy::Threshold{j.value("tau", kDefaultTauSp)}};
        if (type == "nodeep") {
            strategy::NoDeep n;
            n.tau = j.value("tau", kDefaultTauSp);
            if (j.contains("deep")) n.deep = j.at("deep").get<std::vector<std::int64_t>>();
            return {n};
        }
        if (type == "midband") return {strategy::MidBand{j.at("lo").get<std::int64_t>(), j.at("hi").get<std::int64_t>()}};
        if (type == "explicit") return {strategy::Explicit{j.at("layers").get<std::vector<std::int64_t>>()}};
        if (type == "union" || type == "intersection") {
            std::vector<SelectionStrategy> parts;
            for (const auto& p : j.at("of")) parts.push_back(strategy_from_json(p));
            if (type == "union") return {strategy::Union{std::move(parts)}};
            return {strategy::Intersection{std::move(parts)}};
        }
        throw InputError("unknown selection strategy type '" + type + "'");
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed selection strategy: ") + e.what());
    }
}

json strategy_to_json(const SelectionStrategy& s) {
    struct ToJson {
        json operator()(const strategy::Threshold& t) const { return {{"type", "threshold"}, {"tau", t.tau}}; }
        json operator()(const strategy::NoDeep& t) const { return {{"type", "nodeep"}, {"tau", t.tau}, {"deep", t.deep}}; }
        json operator()(const strategy::MidBand& m) const { return {{"type", "midband"}, {"lo", m.lo}, {"hi", m.hi}}; }
        json operator()(const strategy::Explicit& e) const { return {{"type", "explicit"}, {"layers", e.layers}}; }
        json operator()(const strategy::Union& u) const { return {{"type", "union"}, {"of", parts(u.parts)}}; }
        json operator()(const strategy::Intersection& x) const { return {{"type", "intersection"}, {"of", parts(x.parts)}}; }
        static json parts(const std::vector<SelectionStrategy>& ps) {
            json arr = json::array();
            for (const auto& p : ps) arr.push_back(strategy_to_json(p));
            return arr;
        }
    };
    return std::visit(ToJson{}, s.rule);
}

// Decoders ----------------------------------------------------------------

std::size_t SaeDecoder::d_model() const {
    std::size_t d = 0;
    for (const auto& [layer, m] : directions) {
        if (d != 0 && m.cols != d) throw InputError("SAE decoders disagree on d_model");
        d = m.cols;
    }
    return d;
}

SaeDecoder sae_decoder_from(const TensorMap& tm, const LayerAssigner& assigner) {
    SaeDecoder dec;
    for (const auto& [name, t] : tm.entries) {
        const LayerId layer = assigner.classify(name);
        if (!layer.is_layer()) continue;
        if (t.shape().size() != 2) throw InputError("SAE decoder '" + name + "' must be [D, d_model]");
        if (dec.directions.contains(layer)) throw InputError("more than one SAE decoder for " + layer_label(layer));
        dec.directions.emplace(layer, Matrix(static_cast<std::size_t>(t.shape()[0]),
                                             static_cast<std::size_t>(t.shape()[1]), t.to_f64()));
    }
    return dec;
}

TensorMap to_tensor_map(const SaeDecoder& decoder) {
    TensorMap tm;
    for (const auto& [layer, m] : decoder.directions) {
        tm.entries.emplace("layers." + std::to_string(layer.value) + ".W_dec",
                           DenseTensor::from_f64(DType::f64,
                                                 {static_cast<std::int64_t>(m.rows), static_cast<std::int64_t>(m.cols)},
                                                 m.data));
    }
    tm.metadata["format"] = "tvscope.sae_decoder";
    return tm;
}

void check_decoder_covers(const SaeDecoder& decoder, const ActivationStats& stats) {
    for (const auto& [layer, width] : stats.feature_width) {
        const auto it = decoder.directions.find(layer);
        if (it == decoder.directions.end()) continue;
        if (static_cast<std::size_t>(width) > it->second.rows) {
            throw InputError("activation stats reference feature " + std::to_string(width - 1) + " but the " +
                             layer_label(layer) + " decoder has " + std::to_string(it->second.rows) + " features");
        }
    }
}

}  // namespace tvscope
