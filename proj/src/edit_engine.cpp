// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvscope/edit_engine.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "tvscope/error.hpp"
#include "tvscope/kernels.hpp"
#include "tvscope/log.hpp"

namespace tvscope {

using nlohmann::json;

namespace {

PlanMode parse_plan_mode(const std::string& s) {
    if (s == "raw") return PlanMode::raw;
    if (s == "projected") return PlanMode::projected;
    if (s == "dual") return PlanMode::dual;
    throw InputError("unknown plan mode '" + s + "'");
}

std::string plan_mode_name(PlanMode m) {
    switch (m) {
        case PlanMode::raw: return "raw";
        case PlanMode::projected: return "projected";
        case PlanMode::dual: return "dual";
    }
    return "?";
}

}  // namespace

EditPlan plan_from_json(const json& j) {
    try {
        EditPlan p;
        p.selection = make_selection(j.at("selection").get<std::vector<std::int64_t>>());
        p.alpha = j.at("alpha").get<double>();
        p.mode = parse_plan_mode(j.value("mode", std::string("raw")));
        if (j.contains("projection")) {
            const auto& pj = j.at("projection");
            p.side = parse_projection_side(pj.value("side", std::string("output_rows")));
            p.projection = parse_projection_mode(pj.value("mode", std::string("sum_rank_one")));
            p.tau_f = pj.value("tau_f", kDefaultTauF);
        }
        if (p.mode == PlanMode::dual) {
            const auto& dj = j.at("dual");
            p.dual_selection = make_selection(dj.at("selection").get<std::vector<std::int64_t>>());
            p.dual_alpha = dj.at("alpha").get<double>();
        }
        if (!std::isfinite(p.alpha) || !std::isfinite(p.dual_alpha)) throw InputError("plan alpha must be finite");
        for (auto l : p.selection.layers)
            if (l < 0) throw InputError("plan selection contains a negative layer");
        return p;
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed edit plan: ") + e.what());
    }
}

json plan_to_json(const EditPlan& p) {
    json j = {{"selection", p.selection.layers},
              {"alpha", p.alpha},
              {"mode", plan_mode_name(p.mode)},
              {"projection", {{"side", to_string(p.side)}, {"mode", to_string(p.projection)}, {"tau_f", p.tau_f}}}};
    if (p.mode == PlanMode::dual) j["dual"] = {{"selection", p.dual_selection.layers}, {"alpha", p.dual_alpha}};
    return j;
}

namespace {

struct Contribution {
    const TaskVector* tv;
    double alpha;
    const LayerSelection* selection;
};

void check_against_base(const TensorMap& base, const TaskVector& tv) {
    for (const auto& [name, d] : tv.deltas) {
        const auto it = base.entries.find(name);
        if (it == base.entries.end()) throw InputError("task vector tensor '" + name + "' not in base checkpoint");
        if (it->second.shape() != d.shape) {
            throw InputError("task vector tensor '" + name + "' has shape " + shape_string(d.shape) + " but base has " +
                             shape_string(it->second.shape()));
        }
    }
}

void check_selection_has_tensors(const TaskVector& tv, const LayerSelection& sel) {
    const auto layers = tv.layers();
    for (auto l : sel.layers) {
        if (!layers.contains(LayerId{l})) throw InputError("selected layer " + std::to_string(l) + " has no tensors");
    }
}

std::int64_t count_overflow(std::span<const double> values, const DenseTensor& out) {
    if (out.dtype() == DType::f64) return 0;
    const auto back = out.to_f64();
    std::int64_t n = 0;
    for (std::size_t i = 0; i < values.size(); ++i)
        if (std::isfinite(values[i]) && std::isinf(back[i])) ++n;
    return n;
}

// Contributions are added in order: W + a1*D1, then + a2*D2.
EditResult apply(const TensorMap& base, const std::vector<Contribution>& parts) {
    EditResult r;
    r.edited.metadata = base.metadata;
    for (const auto& [name, t] : base.entries) {
        std::vector<const Contribution*> active;
        for (const auto& c : parts) {
            if (c.alpha == 0.0) continue;
            if (!c.tv->deltas.contains(name)) continue;
            if (!c.selection->contains(c.tv->layer_of(name))) continue;
            active.push_back(&c);
        }
        if (active.empty()) {
            r.edited.entries.emplace(name, t);
            continue;
        }
        auto w = t.to_f64();
        for (const auto* c : active) kernels::add_scaled(w, c->tv->deltas.at(name).values, c->alpha, w);
        DenseTensor out = DenseTensor::from_f64(t.dtype(), t.shape(), w);
        r.overflow_count += count_overflow(w, out);
        r.edited.entries.emplace(name, std::move(out));
        r.modified.push_back(name);
    }
    if (r.overflow_count > 0) {
        log::warn(std::to_string(r.overflow_count) + " element(s) overflowed to inf when cast back to the base dtype");
    }
    return r;
}

}  // namespace

EditResult inject_raw(const TensorMap& base, const TaskVector& tv, const EditPlan& plan) {
    if (plan.mode == PlanMode::dual) throw InputError("inject_raw called with a dual plan");
    if (!std::isfinite(plan.alpha)) throw InputError("alpha must be finite");
    check_against_base(base, tv);
    if (plan.selection.empty()) log::warn("empty layer selection: the edit is the identity");
    check_selection_has_tensors(tv, plan.selection);
    return apply(base, {{&tv, plan.alpha, &plan.selection}});
}

EditResult inject_dual(const TensorMap& base, const TaskVector& tv1, const TaskVector& tv2, const EditPlan& plan) {
    if (!std::isfinite(plan.alpha) || !std::isfinite(plan.dual_alpha)) throw InputError("alpha must be finite");
    check_against_base(base, tv1);
    check_against_base(base, tv2);
    if (plan.selection.empty() && plan.dual_selection.empty()) log::warn("empty layer selections: the edit is the identity");
    check_selection_has_tensors(tv1, plan.selection);
    check_selection_has_tensors(tv2, plan.dual_selection);
    return apply(base, {{&tv1, plan.alpha, &plan.selection}, {&tv2, plan.dual_alpha, &plan.dual_selection}});
}

ProjectedEdit inject_projected(const TensorMap& base, const TaskVector& tv, const SaeDecoder& decoder,
                               const SpecProfile& profile, const EditPlan& plan) {
    check_against_base(base, tv);
    check_selection_has_tensors(tv, plan.selection);
    auto features = domain_features(profile, plan.tau_f);
    std::map<LayerId, std::vector<std::int64_t>> selected;
    for (auto l : plan.selection.layers) {
        const auto it = features.find(LayerId{l});
        selected[LayerId{l}] = it == features.end() ? std::vector<std::int64_t>{} : it->second;
    }
    const ProjectorSet projectors = build_projector(decoder, selected, plan.projection);
    ProjectedEdit out;
    out.projection = project_task_vector(tv, projectors, plan.side);
    if (plan.selection.empty()) log::warn("empty layer selection: the edit is the identity");
    out.edit = apply(base, {{&out.projection.projected, plan.alpha, &plan.selection}});
    return out;
}

// Measurements ------------------------------------------------------------

namespace {

std::map<LayerId, double> layer_sums(const TaskVector& tv) {
    std::map<LayerId, double> out;
    for (const auto& [layer, norm] : layer_frobenius_norms(tv)) out[layer] = norm * norm;
    return out;
}

LayerEnergy make_energy(double sumsq, double proj_sumsq) {
    LayerEnergy e;
    e.norm = std::sqrt(sumsq);
    e.projected_norm = std::sqrt(proj_sumsq);
    e.zero_norm = e.norm == 0.0;
    e.ratio = e.zero_norm ? 0.0 : e.projected_norm / e.norm;
    return e;
}

}  // namespace

EnergyReport energy_retained(const TaskVector& tv, const TaskVector& tv_proj,
                             const std::optional<LayerSelection>& restrict_to) {
    const auto full = layer_sums(tv);
    const auto proj = layer_sums(tv_proj);
    std::set<LayerId> layers;
    for (const auto& [l, s] : full) layers.insert(l);
    for (const auto& [l, s] : proj) layers.insert(l);
    if (restrict_to) std::erase_if(layers, [&](LayerId l) { return !restrict_to->contains(l); });

    EnergyReport r;
    double total = 0.0;
    double total_proj = 0.0;
    double ratio_sum = 0.0;
    for (LayerId l : layers) {
        const double a = full.contains(l) ? full.at(l) : 0.0;
        const double b = proj.contains(l) ? proj.at(l) : 0.0;
        r.layers[l] = make_energy(a, b);
        ratio_sum += r.layers[l].ratio;
        total += a;
        total_proj += b;
    }
    r.global = make_energy(total, total_proj);
    r.mean_layer_ratio = layers.empty() ? 0.0 : ratio_sum / static_cast<double>(layers.size());
    if (r.global.zero_norm) log::warn("task vector has zero norm on the measured layers; energy ratio reported as 0");
    return r;
}

OverlapReport overlap_metrics(const TaskVector& tv1, const TaskVector& tv2, const LayerSelection& sel1,
                              const LayerSelection& sel2) {
    OverlapReport r;
    for (const auto& [name, d1] : tv1.deltas) {
        const auto it = tv2.deltas.find(name);
        if (it != tv2.deltas.end() && it->second.shape != d1.shape) {
            throw InputError("task vectors disagree on the shape of '" + name + "'");
        }
    }
    struct Acc {
        double dot = 0.0, n1 = 0.0, n2 = 0.0;
    };
    std::map<LayerId, Acc> acc;
    std::set<std::string> names;
    for (const auto& [n, d] : tv1.deltas) names.insert(n);
    for (const auto& [n, d] : tv2.deltas) names.insert(n);
    for (const auto& name : names) {
        const auto* d1 = tv1.deltas.contains(name) ? &tv1.deltas.at(name) : nullptr;
        const auto* d2 = tv2.deltas.contains(name) ? &tv2.deltas.at(name) : nullptr;
        const LayerId layer = d1 ? tv1.layer_of(name) : tv2.layer_of(name);
        auto& a = acc[layer];
        if (d1) a.n1 += kernels::serial::sum_squares(d1->values);
        if (d2) a.n2 += kernels::serial::sum_squares(d2->values);
        if (d1 && d2) {
            for (std::size_t i = 0; i < d1->values.size(); ++i) a.dot += d1->values[i] * d2->values[i];
        }
    }
    for (const auto& [layer, a] : acc) {
        if (a.n1 == 0.0 || a.n2 == 0.0) {
            r.cosine[layer] = std::nullopt;
        } else {
            r.cosine[layer] = std::clamp(a.dot / (std::sqrt(a.n1) * std::sqrt(a.n2)), -1.0, 1.0);
        }
    }
    std::vector<std::int64_t> inter, uni;
    std::set_intersection(sel1.layers.begin(), sel1.layers.end(), sel2.layers.begin(), sel2.layers.end(),
                          std::back_inserter(inter));
    std::set_union(sel1.layers.begin(), sel1.layers.end(), sel2.layers.begin(), sel2.layers.end(), std::back_inserter(uni));
    if (!uni.empty()) r.jaccard = static_cast<double>(inter.size()) / static_cast<double>(uni.size());
    return r;
}

}  // namespace tvscope
