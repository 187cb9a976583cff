// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvscope/task_vector.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <cmath>
#include <span>

#include "tvscope/error.hpp"
#include "tvscope/kernels.hpp"
#include "tvscope/log.hpp"

namespace tvscope {

std::string layer_label(LayerId id) { return id.is_layer() ? "L" + std::to_string(id.value) : "non-layer"; }

LayerAssigner::LayerAssigner() : LayerAssigner(kDefaultLayerPattern) {}

LayerAssigner::LayerAssigner(const std::string& pattern, std::vector<std::string> include,
                             std::vector<std::string> exclude)
    : pattern_text_(pattern), include_(std::move(include)), exclude_(std::move(exclude)) {
    try {
        pattern_ = std::regex(pattern, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
        throw InputError("invalid layer pattern '" + pattern + "': " + e.what());
    }
    if (pattern_.mark_count() != 1) {
        throw InputError("layer pattern '" + pattern + "' must have exactly one capture group");
    }
}

LayerId LayerAssigner::classify(const std::string& name) const {
    const auto glob = [&](const std::string& g) { return ::fnmatch(g.c_str(), name.c_str(), 0) == 0; };
    if (!include_.empty() && std::none_of(include_.begin(), include_.end(), glob)) return LayerId::none();
    if (std::any_of(exclude_.begin(), exclude_.end(), glob)) return LayerId::none();
    std::smatch m;
    if (!std::regex_search(name, m, pattern_)) return LayerId::none();
    const std::string digits = m[1].str();
    if (digits.empty() || digits.size() > 9 || !std::all_of(digits.begin(), digits.end(), ::isdigit)) {
        return LayerId::none();
    }
    return LayerId{std::stoll(digits)};
}

void TaskVector::insert(const std::string& name, Delta delta, LayerId layer) {
    deltas.insert_or_assign(name, std::move(delta));
    layer_index.insert_or_assign(name, layer);
}

LayerId TaskVector::layer_of(const std::string& name) const {
    const auto it = layer_index.find(name);
    return it == layer_index.end() ? LayerId::none() : it->second;
}

std::set<LayerId> TaskVector::layers() const {
    std::set<LayerId> out;
    for (const auto& [name, layer] : layer_index) out.insert(layer);
    return out;
}

std::vector<std::string> TaskVector::tensors_in(LayerId layer) const {
    std::vector<std::string> out;
    for (const auto& [name, l] : layer_index)
        if (l == layer) out.push_back(name);
    return out;
}

TaskVector diff(const TensorMap& base, const TensorMap& ft, const LayerAssigner& assigner) {
    const auto report = validate_compat(base, ft);
    if (!report.compatible()) throw InputError("incompatible checkpoints: " + report.summary());

    TaskVector tv;
    bool any_layer = false;
    for (const auto& [name, tb] : base.entries) {
        const auto wb = tb.to_f64();
        const auto wf = ft.entries.at(name).to_f64();
        Delta d{tb.shape(), std::vector<double>(wb.size())};
        kernels::subtract(wf, wb, d.values);
        const LayerId layer = assigner.classify(name);
        any_layer = any_layer || layer.is_layer();
        tv.insert(name, std::move(d), layer);
    }
    if (!any_layer && !base.entries.empty()) {
        log::warn("layer pattern '" + assigner.pattern() + "' matches no tensor; every delta is in the non-layer bucket");
    }
    return tv;
}

TaskVector scale(const TaskVector& tv, double alpha) {
    TaskVector out = tv;
    for (auto& [name, d] : out.deltas) kernels::scale_inplace(d.values, alpha);
    return out;
}

namespace {

Matrix matrix_from(const DenseTensor& t, const std::string& name) {
    if (t.shape().size() != 2) throw InputError("LoRA factor '" + name + "' is not a matrix");
    return Matrix(static_cast<std::size_t>(t.shape()[0]), static_cast<std::size_t>(t.shape()[1]), t.to_f64());
}

double metadata_number(const TensorMap& tm, const std::string& key) {
    const auto it = tm.metadata.find(key);
    if (it == tm.metadata.end()) throw InputError("LoRA container lacks metadata key '" + key + "'");
    try {
        std::size_t used = 0;
        const double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw InputError("LoRA metadata '" + key + "' is not a number: '" + it->second + "'");
    }
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

LoraFactors lora_factors_from(const TensorMap& tm) {
    LoraFactors f;
    const double rank = metadata_number(tm, "rank");
    f.lora_alpha = metadata_number(tm, "lora_alpha");
    if (rank < 1 || rank != std::floor(rank)) throw InputError("LoRA rank must be a positive integer");
    if (!(f.lora_alpha > 0) || !std::isfinite(f.lora_alpha)) throw InputError("lora_alpha must be positive");
    f.rank = static_cast<std::int64_t>(rank);

    const std::string suffix_a = ".lora_A";
    const std::string suffix_b = ".lora_B";
    for (const auto& [name, t] : tm.entries) {
        if (ends_with(name, suffix_b)) {
            const std::string target = name.substr(0, name.size() - suffix_b.size());
            if (!tm.entries.contains(target + suffix_a)) throw InputError("'" + name + "' has no matching lora_A");
            continue;
        }
        if (!ends_with(name, suffix_a)) throw InputError("unexpected tensor '" + name + "' in LoRA container");
        const std::string target = name.substr(0, name.size() - suffix_a.size());
        const auto b_it = tm.entries.find(target + suffix_b);
        if (b_it == tm.entries.end()) throw InputError("'" + name + "' has no matching lora_B");
        LoraPair pair{target, matrix_from(t, name), matrix_from(b_it->second, b_it->first)};
        if (pair.a.rows != static_cast<std::size_t>(f.rank) || pair.b.cols != static_cast<std::size_t>(f.rank)) {
            throw InputError("LoRA factors for '" + target + "' do not have the declared rank " + std::to_string(f.rank));
        }
        f.pairs.push_back(std::move(pair));
    }
    return f;
}

TaskVector materialize_lora(const LoraFactors& factors, const LayerAssigner& assigner, const TensorMap* base) {
    if (factors.rank < 1) throw InputError("LoRA rank must be positive");
    const double scaling = factors.lora_alpha / static_cast<double>(factors.rank);
    TaskVector tv;
    for (const auto& p : factors.pairs) {
        if (p.a.rows != p.b.cols) throw InputError("LoRA inner dims disagree for '" + p.target + "'");
        const Shape shape{static_cast<std::int64_t>(p.b.rows), static_cast<std::int64_t>(p.a.cols)};
        if (base != nullptr) {
            const auto it = base->entries.find(p.target);
            if (it == base->entries.end()) throw InputError("LoRA target '" + p.target + "' not in base checkpoint");
            if (it->second.shape() != shape) {
                throw InputError("LoRA product for '" + p.target + "' has shape " + shape_string(shape) +
                                 " but target is " + shape_string(it->second.shape()));
            }
        }
        Matrix ba = kernels::matmul(p.b, p.a);
        kernels::scale_inplace(ba.data, scaling);
        tv.insert(p.target, Delta{shape, std::move(ba.data)}, assigner.classify(p.target));
    }
    return tv;
}

namespace {

std::vector<double> per_tensor_sum_squares(const TaskVector& tv) {
    std::vector<std::span<const double>> parts;
    parts.reserve(tv.deltas.size());
    for (const auto& [name, d] : tv.deltas) parts.emplace_back(d.values);
    return kernels::sum_squares_each(parts);
}

}  // namespace

double frobenius_norm(const TaskVector& tv) {
    double total = 0.0;
    for (double s : per_tensor_sum_squares(tv)) total += s;
    return std::sqrt(total);
}

std::map<LayerId, double> layer_frobenius_norms(const TaskVector& tv) {
    const auto sums = per_tensor_sum_squares(tv);
    std::map<LayerId, double> out;
    std::size_t i = 0;
    for (const auto& [name, d] : tv.deltas) out[tv.layer_of(name)] += sums[i++];
    for (auto& [layer, v] : out) v = std::sqrt(v);
    return out;
}

TensorMap to_tensor_map(const TaskVector& tv) {
    TensorMap tm;
    for (const auto& [name, d] : tv.deltas) tm.entries.emplace(name, DenseTensor::from_f64(DType::f64, d.shape, d.values));
    tm.metadata["format"] = "tvscope.task_vector";
    return tm;
}

TaskVector task_vector_from(const TensorMap& tm, const LayerAssigner& assigner) {
    TaskVector tv;
    for (const auto& [name, t] : tm.entries) tv.insert(name, Delta{t.shape(), t.to_f64()}, assigner.classify(name));
    return tv;
}

}  // namespace tvscope
