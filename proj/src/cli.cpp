// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvscope/cli.hpp"

#include <omp.h>

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tvscope/edit_engine.hpp"
#include "tvscope/error.hpp"
#include "tvscope/fixtures.hpp"
#include "tvscope/log.hpp"
#include "tvscope/reference_tables.hpp"
#include "tvscope/sae_diagnostics.hpp"
#include "tvscope/stats.hpp"
#include "tvscope/task_vector.hpp"
#include "tvscope/tensor_store.hpp"

namespace tvscope::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Options that never reach a report: they must not change output bytes.
const std::set<std::string> kUnechoed = {"config", "out", "threads", "help"};

const std::vector<std::string> kSubcommands = {"diff",       "diagnose", "select", "project", "inject",
                                               "energy",     "eval-stats", "sweep", "report", "fixture"};

std::string fmt(const char* f, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

json effective_config(const CLI::App& app, const CLI::App& sub) {
    json cfg = json::object();
    auto collect = [&](const CLI::App& a, json& into) {
        for (const CLI::Option* opt : a.get_options()) {
            std::string name = opt->get_name(false, true);
            while (!name.empty() && name.front() == '-') name.erase(0, 1);
            if (name.empty() || kUnechoed.contains(name)) continue;
            if (opt->count() > 0) {
                const auto& r = opt->results();
                if (opt->get_type_size() == 0) {
                    into[name] = true;
                } else if (r.size() == 1 && opt->get_expected_max() <= 1) {
                    into[name] = r.front();
                } else {
                    into[name] = r;
                }
            } else if (!opt->get_default_str().empty()) {
                into[name] = opt->get_default_str();
            }
        }
    };
    collect(app, cfg);
    json sub_cfg = json::object();
    collect(sub, sub_cfg);
    cfg["command"] = sub.get_name();
    cfg["options"] = sub_cfg;
    return cfg;
}

struct Context {
    fs::path out = "tvscope_out";
    json config;

    fs::path path(const std::string& file) const { return out / file; }

    void write_json(const std::string& file, json body) const {
        body["effective_config"] = config;
        fs::create_directories(out);
        std::ofstream f(path(file), std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + path(file).string());
        f << body.dump(2) << '\n';
    }

    void write_text(const std::string& file, const std::string& text) const {
        fs::create_directories(out);
        std::ofstream f(path(file), std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + path(file).string());
        f << text;
    }
};

std::string layer_key(LayerId l) { return l.is_layer() ? std::to_string(l.value) : "non_layer"; }

LayerAssigner make_assigner(const std::string& pattern, const std::vector<std::string>& include,
                            const std::vector<std::string>& exclude) {
    return LayerAssigner(pattern, include, exclude);
}

json read_json_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw InputError("cannot open '" + p.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw InputError(p.string() + ": invalid JSON: " + e.what());
    }
}

// --selection accepts a selection.json written by `select` or a plain JSON list.
LayerSelection read_selection(const std::string& file, const std::vector<std::int64_t>& layers) {
    if (!file.empty()) {
        const json j = read_json_file(file);
        try {
            if (j.is_array()) return make_selection(j.get<std::vector<std::int64_t>>());
            return make_selection(j.at("layers").get<std::vector<std::int64_t>>());
        } catch (const json::exception& e) {
            throw InputError(file + ": malformed selection: " + e.what());
        }
    }
    return make_selection(layers);
}

json selection_json(const LayerSelection& s) { return {{"layers", s.layers}, {"n_layers", s.layers.size()}}; }

std::string join_layers(const std::vector<std::int64_t>& layers) {
    std::string s;
    for (auto l : layers) s += (s.empty() ? "" : ",") + std::to_string(l);
    return s.empty() ? "-" : s;
}

// diff ----------------------------------------------------------------------

struct DiffArgs {
    std::string base, ft, lora, pattern = kDefaultLayerPattern;
    std::vector<std::string> include, exclude;
};

int cmd_diff(const DiffArgs& a, const Context& ctx) {
    const LayerAssigner assigner = make_assigner(a.pattern, a.include, a.exclude);
    TaskVector tv;
    json source;
    if (!a.lora.empty()) {
        std::optional<TensorMap> base;
        if (!a.base.empty()) base = read_checkpoint(a.base);
        tv = materialize_lora(lora_factors_from(read_checkpoint(a.lora)), assigner, base ? &*base : nullptr);
        source = {{"lora", a.lora}};
    } else {
        if (a.base.empty() || a.ft.empty()) throw InputError("diff needs --base and --ft (or --lora)");
        tv = diff(read_checkpoint(a.base), read_checkpoint(a.ft), assigner);
        source = {{"base", a.base}, {"ft", a.ft}};
    }
    TensorMap out = to_tensor_map(tv);
    out.metadata["layer_pattern"] = a.pattern;
    write_checkpoint(out, ctx.path("task_vector.safetensors"));

    const double global = frobenius_norm(tv);
    if (global == 0.0) log::warn("task vector is identically zero");
    json layers = json::object();
    std::ostringstream table;
    table << fmt("%-10s %8s %16s\n", "layer", "tensors", "frobenius");
    for (const auto& [layer, norm] : layer_frobenius_norms(tv)) {
        layers[layer_key(layer)] = norm;
        table << fmt("%-10s %8zu %16.9g\n", layer_label(layer).c_str(), tv.tensors_in(layer).size(), norm);
    }
    table << fmt("%-10s %8zu %16.9g\n", "global", tv.deltas.size(), global);
    std::cout << table.str();
    ctx.write_json("diff_report.json", {{"source", source},
                                        {"tensors", tv.deltas.size()},
                                        {"layer_norms", layers},
                                        {"global_norm", global},
                                        {"zero", global == 0.0},
                                        {"output", "task_vector.safetensors"}});
    return kExitOk;
}

// diagnose --------------------------------------------------------------------

struct DiagnoseArgs {
    std::string stats;
    double epsilon = kDefaultEpsilon, tau_f = kDefaultTauF, tau_sp = kDefaultTauSp;
    std::int64_t num_layers = 0;
};

int cmd_diagnose(const DiagnoseArgs& a, const Context& ctx) {
    const ActivationStats stats = load_activation_stats(a.stats);
    if (stats.rows.empty()) log::warn("activation stats file has no rows; every SP is 0");
    const SpecProfile p = diagnose(stats, a.epsilon, a.tau_f);

    std::set<LayerId> layers;
    for (const auto& [l, sp] : p.sp) layers.insert(l);
    for (std::int64_t l = 0; l < a.num_layers; ++l) layers.insert(LayerId{l});

    json rows = json::array();
    std::ostringstream series, table;
    series << "layer,sp,n_feat,selected\n";
    table << fmt("%-6s %10s %7s %4s\n", "layer", "SP", "#feat", "sel");
    std::int64_t n_selected = 0;
    for (LayerId l : layers) {
        const double sp = p.sp.contains(l) ? p.sp.at(l) : 0.0;
        const std::int64_t nf = p.feature_counts.contains(l) ? p.feature_counts.at(l) : 0;
        const bool sel = sp >= a.tau_sp;
        n_selected += sel;
        rows.push_back({{"layer", l.value}, {"sp", sp}, {"n_feat", nf}, {"selected", sel}});
        series << l.value << ',' << fmt("%.17g", sp) << ',' << nf << ',' << (sel ? 1 : 0) << '\n';
        table << fmt("L%-5" PRId64 " %10.4f %7" PRId64 " %4s\n", l.value, sp, nf, sel ? "*" : "");
    }
    table << n_selected << " of " << layers.size() << " layers have SP >= " << a.tau_sp << "\n";
    std::cout << table.str();
    ctx.write_text("sp_series.csv", series.str());
    ctx.write_json("diagnose_report.json", {{"layers", rows},
                                            {"n_selected", n_selected},
                                            {"epsilon", a.epsilon},
                                            {"tau_f", a.tau_f},
                                            {"tau_sp", a.tau_sp},
                                            {"rows", stats.rows.size()}});
    return kExitOk;
}

// select ------------------------------------------------------------------------

struct StrategyArgs {
    std::string strategy = "sp";
    std::string strategy_json;
    double tau = kDefaultTauSp;
    std::vector<std::int64_t> deep{30, 31, 32};
    std::int64_t lo = 0, hi = 0;
    std::vector<std::int64_t> layers;
};

SelectionStrategy strategy_from_args(const StrategyArgs& a) {
    if (!a.strategy_json.empty()) {
        const std::string& s = a.strategy_json;
        if (!s.empty() && (s.front() == '{' || s.front() == '[')) {
            try {
                return strategy_from_json(json::parse(s));
            } catch (const json::parse_error& e) {
                throw InputError(std::string("--strategy-json: ") + e.what());
            }
        }
        return strategy_from_json(read_json_file(s));
    }
    if (a.strategy == "sp" || a.strategy == "threshold") return {strategy::Threshold{a.tau}};
    if (a.strategy == "nodeep") return {strategy::NoDeep{a.tau, a.deep}};
    if (a.strategy == "mid" || a.strategy == "midband") return {strategy::MidBand{a.lo, a.hi}};
    if (a.strategy == "explicit") return {strategy::Explicit{a.layers}};
    throw InputError("unknown --strategy '" + a.strategy + "' (sp, nodeep, mid, explicit)");
}

struct SelectArgs {
    std::string stats;
    double epsilon = kDefaultEpsilon;
    StrategyArgs strategy;
    bool allow_empty = false;
};

int cmd_select(const SelectArgs& a, const Context& ctx) {
    const SelectionStrategy s = strategy_from_args(a.strategy);
    SpecProfile profile;
    if (!a.stats.empty()) profile = diagnose(load_activation_stats(a.stats), a.epsilon);
    const LayerSelection sel = select_layers(profile, s);
    std::cout << "selected " << sel.layers.size() << " layer(s): " << join_layers(sel.layers) << "\n";
    json body = selection_json(sel);
    body["strategy"] = strategy_to_json(s);
    body["empty"] = sel.empty();
    ctx.write_json("selection.json", body);
    if (sel.empty() && !a.allow_empty) throw EmptyResultError("layer selection is empty (pass --allow-empty to accept)");
    if (sel.empty()) log::warn("layer selection is empty");
    return kExitOk;
}

// project / inject ----------------------------------------------------------------

struct ProjectionArgs {
    std::string decoder, stats;
    std::string side = "output_rows", mode = "sum_rank_one";
    double tau_f = kDefaultTauF, epsilon = kDefaultEpsilon;
};

struct ProjectArgs {
    std::string tv, selection, pattern = kDefaultLayerPattern;
    std::vector<std::int64_t> layers;
    ProjectionArgs proj;
    bool allow_empty = false;
};

json projector_json(const ProjectorSet& ps) {
    json j = json::object();
    for (const auto& [layer, p] : ps) {
        j[layer_key(layer)] = {{"rank", p.rank()}, {"features", p.features}, {"dropped", p.dropped}};
    }
    return j;
}

json energy_json(const EnergyReport& r) {
    json layers = json::object();
    for (const auto& [l, e] : r.layers) {
        layers[layer_key(l)] = {{"norm", e.norm}, {"projected_norm", e.projected_norm}, {"ratio", e.ratio},
                                {"zero_norm", e.zero_norm}};
    }
    return {{"layers", layers},
            {"global", {{"norm", r.global.norm}, {"projected_norm", r.global.projected_norm}, {"ratio", r.global.ratio},
                        {"zero_norm", r.global.zero_norm}}},
            {"mean_layer_ratio", r.mean_layer_ratio}};
}

std::string energy_table(const EnergyReport& r) {
    std::ostringstream t;
    t << fmt("%-10s %16s %16s %10s\n", "layer", "|dW|_F", "|dW_proj|_F", "retained");
    for (const auto& [l, e] : r.layers) {
        t << fmt("%-10s %16.9g %16.9g %9.4f%%%s\n", layer_label(l).c_str(), e.norm, e.projected_norm, 100.0 * e.ratio,
                 e.zero_norm ? " (zero norm)" : "");
    }
    t << fmt("%-10s %16.9g %16.9g %9.4f%%\n", "global", r.global.norm, r.global.projected_norm, 100.0 * r.global.ratio);
    return t.str();
}

ProjectorSet projectors_for(const LayerSelection& sel, const ProjectionArgs& a, const LayerAssigner& assigner) {
    if (a.decoder.empty() || a.stats.empty()) throw InputError("projection needs --decoder and --stats");
    const SaeDecoder decoder = sae_decoder_from(read_checkpoint(a.decoder), assigner);
    const ActivationStats stats = load_activation_stats(a.stats);
    check_decoder_covers(decoder, stats);
    const auto features = domain_features(feature_specificity(stats, a.epsilon), a.tau_f);
    std::map<LayerId, std::vector<std::int64_t>> chosen;
    for (auto l : sel.layers) {
        const auto it = features.find(LayerId{l});
        chosen[LayerId{l}] = it == features.end() ? std::vector<std::int64_t>{} : it->second;
    }
    return build_projector(decoder, chosen, parse_projection_mode(a.mode));
}

int cmd_project(const ProjectArgs& a, const Context& ctx) {
    const LayerAssigner assigner(a.pattern);
    const TaskVector tv = task_vector_from(read_checkpoint(a.tv), assigner);
    const LayerSelection sel = read_selection(a.selection, a.layers);
    if (sel.empty() && !a.allow_empty) throw EmptyResultError("layer selection is empty (pass --allow-empty to accept)");
    const ProjectorSet ps = projectors_for(sel, a.proj, assigner);
    const ProjectionResult pr = project_task_vector(tv, ps, parse_projection_side(a.proj.side));
    TensorMap out = to_tensor_map(pr.projected);
    out.metadata["layer_pattern"] = a.pattern;
    write_checkpoint(out, ctx.path("projected_tv.safetensors"));
    const EnergyReport er = energy_retained(tv, pr.projected, sel);
    std::cout << energy_table(er);
    ctx.write_json("project_report.json", {{"selection", sel.layers},
                                           {"side", a.proj.side},
                                           {"mode", a.proj.mode},
                                           {"projectors", projector_json(ps)},
                                           {"excluded_tensors", pr.excluded},
                                           {"energy", energy_json(er)},
                                           {"output", "projected_tv.safetensors"}});
    return kExitOk;
}

struct InjectArgs {
    std::string base, tv, tv2, plan, selection, selection2, pattern = kDefaultLayerPattern, mode = "raw";
    std::vector<std::int64_t> layers, layers2;
    double alpha = 1.0, alpha2 = 0.0;
    ProjectionArgs proj;
    bool allow_empty = false;
};

int cmd_inject(const InjectArgs& a, const Context& ctx) {
    EditPlan plan;
    if (!a.plan.empty()) {
        plan = plan_from_json(read_json_file(a.plan));
    } else {
        plan.selection = read_selection(a.selection, a.layers);
        plan.alpha = a.alpha;
        if (a.mode == "raw") plan.mode = PlanMode::raw;
        else if (a.mode == "projected") plan.mode = PlanMode::projected;
        else if (a.mode == "dual") plan.mode = PlanMode::dual;
        else throw InputError("unknown --mode '" + a.mode + "'");
        plan.side = parse_projection_side(a.proj.side);
        plan.projection = parse_projection_mode(a.proj.mode);
        plan.tau_f = a.proj.tau_f;
        plan.dual_selection = read_selection(a.selection2, a.layers2);
        plan.dual_alpha = a.alpha2;
    }
    const bool empty = plan.mode == PlanMode::dual ? plan.selection.empty() && plan.dual_selection.empty()
                                                   : plan.selection.empty();
    if (empty && !a.allow_empty) throw EmptyResultError("layer selection is empty (pass --allow-empty to accept)");

    const LayerAssigner assigner(a.pattern);
    const TensorMap base = read_checkpoint(a.base);
    const TaskVector tv = task_vector_from(read_checkpoint(a.tv), assigner);
    EditResult result;
    json extra = json::object();
    switch (plan.mode) {
        case PlanMode::raw:
            result = inject_raw(base, tv, plan);
            break;
        case PlanMode::dual: {
            if (a.tv2.empty()) throw InputError("dual injection needs --tv2");
            const TaskVector tv2 = task_vector_from(read_checkpoint(a.tv2), assigner);
            result = inject_dual(base, tv, tv2, plan);
            const OverlapReport ov = overlap_metrics(tv, tv2, plan.selection, plan.dual_selection);
            json cos = json::object();
            for (const auto& [l, c] : ov.cosine) cos[layer_key(l)] = c ? json(*c) : json(nullptr);
            extra["overlap"] = {{"cosine", cos}, {"jaccard", ov.jaccard ? json(*ov.jaccard) : json(nullptr)}};
            break;
        }
        case PlanMode::projected: {
            if (a.proj.decoder.empty() || a.proj.stats.empty()) throw InputError("projection needs --decoder and --stats");
            const SaeDecoder decoder = sae_decoder_from(read_checkpoint(a.proj.decoder), assigner);
            const ActivationStats stats = load_activation_stats(a.proj.stats);
            check_decoder_covers(decoder, stats);
            ProjectedEdit pe = inject_projected(base, tv, decoder, diagnose(stats, a.proj.epsilon, plan.tau_f), plan);
            result = std::move(pe.edit);
            extra["excluded_tensors"] = pe.projection.excluded;
            extra["energy"] = energy_json(energy_retained(tv, pe.projection.projected, plan.selection));
            break;
        }
    }
    write_checkpoint(result.edited, ctx.path("edited.safetensors"));
    std::cout << "modified " << result.modified.size() << " of " << base.entries.size() << " tensors"
              << " (alpha " << plan.alpha << ", layers " << join_layers(plan.selection.layers) << ")\n";
    if (result.overflow_count > 0) std::cout << "overflowed elements: " << result.overflow_count << "\n";
    json body = {{"plan", plan_to_json(plan)},
                 {"modified_tensors", result.modified},
                 {"overflow_count", result.overflow_count},
                 {"output", "edited.safetensors"}};
    body.update(extra);
    ctx.write_json("inject_report.json", body);
    return kExitOk;
}

// energy ----------------------------------------------------------------------------

struct EnergyArgs {
    std::string tv, projected, selection, pattern = kDefaultLayerPattern;
    std::vector<std::int64_t> layers;
};

int cmd_energy(const EnergyArgs& a, const Context& ctx) {
    const LayerAssigner assigner(a.pattern);
    const TaskVector tv = task_vector_from(read_checkpoint(a.tv), assigner);
    const TaskVector proj = task_vector_from(read_checkpoint(a.projected), assigner);
    std::optional<LayerSelection> restrict_to;
    if (!a.selection.empty() || !a.layers.empty()) restrict_to = read_selection(a.selection, a.layers);
    const EnergyReport r = energy_retained(tv, proj, restrict_to);
    std::cout << energy_table(r);
    ctx.write_json("energy_report.json", energy_json(r));
    return kExitOk;
}

// eval-stats --------------------------------------------------------------------------

struct EvalArgs {
    std::string counts;
    bool reference_check = false;
    double power = 0.80;
};

json zresult_json(const stats::ZResult& z) {
    json zj = z.kind == stats::ZKind::finite ? json(z.z) : json(z.kind == stats::ZKind::plus_infinity ? "+inf" : "-inf");
    return {{"z", zj}, {"p", z.p_two_sided}, {"significant", z.significant}, {"se_base", z.se_base}, {"se_edit", z.se_edit}};
}

json reference_check_json() {
    const auto& t = fixtures::load_reference_tables();
    json rows = json::array();
    bool pass = true;
    for (const auto& r : t.main_results) {
        const auto c = stats::EvalCounts{r.subject, r.n, std::llround(r.base_pct / 100.0 * static_cast<double>(r.n)),
                                         std::llround(r.edit_pct / 100.0 * static_cast<double>(r.n))};
        const auto z = stats::ztest(c);
        const bool ok = std::fabs(z.z - r.z) <= 0.1 && std::fabs(z.p_two_sided - r.p) <= 5e-4;
        pass = pass && ok;
        rows.push_back({{"subject", r.subject}, {"z", z.z}, {"p", z.p_two_sided}, {"published_z", r.z},
                        {"published_p", r.p}, {"ok", ok}});
    }
    json pairs = json::array();
    auto check_pair = [&](double z, double p) {
        const double got = stats::pvalue_from_z(z);
        const bool ok = std::fabs(got - p) <= 5e-4;
        pass = pass && ok;
        pairs.push_back({{"z", z}, {"published_p", p}, {"p", got}, {"ok", ok}});
    };
    for (const auto& r : t.main_results) check_pair(r.z, r.p);
    for (const auto& r : t.projection_comparison) check_pair(r.nt_z, r.nt_p);
    return {{"main_results", rows}, {"z_p_pairs", pairs}, {"pass", pass}, {"z_tolerance", 0.1}, {"p_tolerance", 5e-4}};
}

int cmd_eval_stats(const EvalArgs& a, const Context& ctx) {
    const auto counts = stats::load_eval_counts(a.counts);
    json rows = json::array();
    std::ostringstream t;
    t << fmt("%-8s %6s %8s %8s %8s %9s %4s %8s\n", "subject", "n", "base%", "edit%", "z", "p", "sig", "MDE(pp)");
    int n_sig = 0;
    for (const auto& c : counts) {
        const auto z = stats::ztest(c);
        const double pb = static_cast<double>(c.correct_base) / static_cast<double>(c.n);
        std::optional<stats::MdeResult> mde;
        if (pb > 0.0 && pb < 1.0) mde = stats::min_detectable_effect(static_cast<double>(c.n), static_cast<double>(c.n), pb, a.power);
        n_sig += z.significant && z.z > 0;
        json row = {{"subject", c.subject}, {"n", c.n}, {"correct_base", c.correct_base}, {"correct_edit", c.correct_edit}};
        row.update(zresult_json(z));
        row["mde_pp"] = mde && mde->reachable ? json(mde->effect_pp) : json(nullptr);
        rows.push_back(row);
        t << fmt("%-8s %6" PRId64 " %8.2f %8.2f %+8.3f %9.4f %4s %8s\n", c.subject.c_str(), c.n, 100.0 * pb,
                 100.0 * static_cast<double>(c.correct_edit) / static_cast<double>(c.n), z.z, z.p_two_sided,
                 z.significant ? "*" : "", mde && mde->reachable ? fmt("%.2f", mde->effect_pp).c_str() : "-");
    }
    t << "significant improvements: " << n_sig << "/" << counts.size() << "\n";
    json body = {{"subjects", rows}, {"n_significant_improvements", n_sig}, {"power", a.power}, {"alpha_level", 0.05}};
    if (a.reference_check) {
        body["reference_check"] = reference_check_json();
        t << "reference check: " << (body["reference_check"]["pass"].get<bool>() ? "pass" : "FAIL") << "\n";
    }
    std::cout << t.str();
    ctx.write_json("eval_report.json", body);
    return kExitOk;
}

// sweep --------------------------------------------------------------------------------

struct SweepArgs {
    std::string sweep, base, tv, stats, pattern = kDefaultLayerPattern;
    std::string target = "NT";
};

struct SweepRun {
    std::string name;
    LayerSelection selection;
    double alpha = 0.0;
    std::optional<std::vector<stats::EvalCounts>> counts;
};

std::string slug(const std::string& s) {
    std::string out;
    for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
    return out;
}

int cmd_sweep(const SweepArgs& a, const Context& ctx) {
    const fs::path sweep_path(a.sweep);
    const json spec = read_json_file(sweep_path);
    const fs::path dir = sweep_path.parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : dir / p; };

    std::string target = a.target;
    std::string stats_path = a.stats;
    std::string base_path = a.base;
    std::string tv_path = a.tv;
    try {
        if (spec.contains("target_subject") && target == "NT") target = spec.at("target_subject").get<std::string>();
        if (stats_path.empty() && spec.contains("stats")) stats_path = resolve(spec.at("stats").get<std::string>()).string();
        if (base_path.empty() && spec.contains("base")) base_path = resolve(spec.at("base").get<std::string>()).string();
        if (tv_path.empty() && spec.contains("tv")) tv_path = resolve(spec.at("tv").get<std::string>()).string();
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed sweep file: ") + e.what());
    }

    SpecProfile profile;
    if (!stats_path.empty()) profile = diagnose(load_activation_stats(stats_path));

    std::vector<SweepRun> runs;
    try {
        for (const auto& c : spec.at("configs")) {
            const std::string name = c.at("name").get<std::string>();
            LayerSelection sel;
            if (c.contains("strategy")) sel = select_layers(profile, strategy_from_json(c.at("strategy")));
            else sel = make_selection(c.at("selection").get<std::vector<std::int64_t>>());
            std::vector<double> alphas;
            if (c.contains("alphas")) alphas = c.at("alphas").get<std::vector<double>>();
            else alphas.push_back(c.at("alpha").get<double>());
            std::vector<std::string> counts;
            if (c.contains("counts")) {
                if (c.at("counts").is_string()) counts.push_back(c.at("counts").get<std::string>());
                else counts = c.at("counts").get<std::vector<std::string>>();
                if (counts.size() != alphas.size()) throw InputError("config '" + name + "': counts and alphas differ in length");
            }
            for (std::size_t i = 0; i < alphas.size(); ++i) {
                SweepRun r{name, sel, alphas[i], std::nullopt};
                if (!counts.empty()) r.counts = stats::load_eval_counts(resolve(counts[i]));
                runs.push_back(std::move(r));
            }
        }
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed sweep file: ") + e.what());
    }
    if (runs.empty()) throw InputError("sweep has no configurations");

    // Optional checkpoint materialization.
    json written = json::array();
    if (!base_path.empty() && !tv_path.empty()) {
        const LayerAssigner assigner(a.pattern);
        const TensorMap base = read_checkpoint(base_path);
        const TaskVector tv = task_vector_from(read_checkpoint(tv_path), assigner);
        for (const auto& r : runs) {
            EditPlan plan;
            plan.selection = r.selection;
            plan.alpha = r.alpha;
            const std::string file = "sweep/" + slug(r.name) + "_a" + fmt("%.4g", r.alpha) + ".safetensors";
            write_checkpoint(inject_raw(base, tv, plan).edited, ctx.path(file));
            written.push_back(file);
        }
    }

    struct Scored {
        const SweepRun* run;
        double z;
        int n_sig;
        json subjects;
    };
    std::vector<Scored> scored;
    json unranked = json::array();
    for (const auto& r : runs) {
        if (!r.counts) {
            unranked.push_back({{"name", r.name}, {"alpha", r.alpha}, {"n_layers", r.selection.layers.size()}});
            continue;
        }
        Scored s{&r, 0.0, 0, json::object()};
        bool found = false;
        for (const auto& c : *r.counts) {
            const auto z = stats::ztest(c);
            s.n_sig += z.significant && z.z > 0;
            s.subjects[c.subject] = zresult_json(z);
            if (c.subject == target) {
                s.z = z.z;
                found = true;
            }
        }
        if (!found) throw InputError("config '" + r.name + "' has no counts for subject '" + target + "'");
        scored.push_back(std::move(s));
    }
    std::stable_sort(scored.begin(), scored.end(), [](const Scored& x, const Scored& y) {
        if (x.z != y.z) return x.z > y.z;
        if (x.run->name != y.run->name) return x.run->name < y.run->name;
        return x.run->alpha < y.run->alpha;
    });

    json ranking = json::array();
    std::ostringstream t;
    t << fmt("%4s  %-24s %6s %7s %8s %5s %8s\n", "rank", "configuration", "alpha", "layers", "z", "#sig", "budget");
    int rank = 0;
    for (std::size_t i = 0; i < scored.size(); ++i) {
        if (i == 0 || scored[i].z != scored[i - 1].z) rank = static_cast<int>(i) + 1;
        const auto& s = scored[i];
        const auto n_layers = static_cast<std::int64_t>(s.run->selection.layers.size());
        const double budget = stats::budget_product({s.run->name, std::max<std::int64_t>(n_layers, 1), s.run->alpha});
        ranking.push_back({{"rank", rank},
                           {"name", s.run->name},
                           {"alpha", s.run->alpha},
                           {"layers", s.run->selection.layers},
                           {"n_layers", n_layers},
                           {"target_z", s.z},
                           {"n_sig", s.n_sig},
                           {"n_subjects", s.subjects.size()},
                           {"budget", n_layers > 0 ? json(budget) : json(nullptr)},
                           {"subjects", s.subjects}});
        t << fmt("%4d  %-24s %6.2f %7" PRId64 " %+8.3f %2d/%-2zu %8.4g\n", rank, s.run->name.c_str(), s.run->alpha,
                 n_layers, s.z, s.n_sig, s.subjects.size(), n_layers > 0 ? budget : 0.0);
    }
    std::cout << t.str();
    ctx.write_json("sweep_report.json",
                   {{"target_subject", target}, {"ranking", ranking}, {"unranked", unranked}, {"checkpoints", written}});
    return kExitOk;
}

// report ---------------------------------------------------------------------------------

int cmd_report(const Context& ctx) {
    const auto& t = fixtures::load_reference_tables();
    std::ostringstream text;

    const json check = reference_check_json();
    text << "Significance (counts reconstructed from published accuracies):\n";
    for (const auto& r : check["main_results"]) {
        text << fmt("  %-4s z=%+.3f (published %+.2f)  p=%.4f (published %.4f)  %s\n",
                    r["subject"].get<std::string>().c_str(), r["z"].get<double>(), r["published_z"].get<double>(),
                    r["p"].get<double>(), r["published_p"].get<double>(), r["ok"].get<bool>() ? "ok" : "MISMATCH");
    }

    const SpecProfile profile = diagnose(fixtures::reference_layer_stats());
    json selections = json::object();
    text << "Layer selection from the per-layer specificity table:\n";
    for (double tau : {3.5, 4.0, 4.5}) {
        const auto sel = select_layers(profile, {strategy::Threshold{tau}});
        selections[fmt("%.1f", tau)] = sel.layers;
        text << fmt("  SP >= %.1f: %2zu layers  ", tau, sel.layers.size()) << join_layers(sel.layers) << "\n";
    }
    const auto nodeep = select_layers(profile, {strategy::NoDeep{4.0, {30, 31, 32}}});
    selections["nodeep_4.0"] = nodeep.layers;
    text << fmt("  SP4 noDeep: %2zu layers  ", nodeep.layers.size()) << join_layers(nodeep.layers) << "\n";

    std::vector<stats::BudgetRecord> records;
    for (const auto& s : t.strategies) records.push_back({s.config, s.n_layers, s.alpha_opt});
    const auto budget = stats::budget_analysis(std::span(records).first(2));
    json budget_rows = json::array();
    text << "Modification budget (n_layers x alpha*):\n";
    for (const auto& r : records) {
        budget_rows.push_back({{"config", r.name}, {"n_layers", r.n_layers}, {"alpha", r.alpha_opt},
                               {"product", stats::budget_product(r)}});
        text << fmt("  %-12s %2" PRId64 " x %.2f = %.4g\n", r.name.c_str(), r.n_layers, r.alpha_opt, stats::budget_product(r));
    }
    text << fmt("  spread between the two optimal configurations: %.2f%%\n", 100.0 * budget.max_relative_spread);

    std::ostringstream alpha_csv;
    alpha_csv << "alpha,nt_acc_pct,nt_z,cp_z,alg_z,geo_z,n_sig\n";
    for (const auto& r : t.alpha_sweep) {
        alpha_csv << fmt("%.2f,%.1f,%.2f,%.1f,%.1f,%.1f,%d\n", r.alpha, r.nt_acc_pct, r.nt_z, r.cp_z, r.alg_z, r.geo_z, r.n_sig);
    }
    std::ostringstream strat_csv;
    strat_csv << "config,n_layers,alpha,nt_z,n_sig\n";
    for (const auto& s : t.strategies) strat_csv << s.config << ',' << s.n_layers << ',' << fmt("%.2f,%.2f,%d\n", s.alpha_opt, s.nt_z, s.n_sig);
    std::ostringstream sp_csv;
    sp_csv << "layer,sp,n_feat,selected\n";
    for (const auto& r : t.layer_specificity) sp_csv << r.layer << ',' << fmt("%.2f", r.sp) << ',' << r.n_feat << ',' << r.selected << '\n';

    ctx.write_text("series_alpha_curve.csv", alpha_csv.str());
    ctx.write_text("series_strategies.csv", strat_csv.str());
    ctx.write_text("series_sp.csv", sp_csv.str());
    std::cout << text.str();
    ctx.write_json("report.json", {{"significance", check},
                                   {"selections", selections},
                                   {"budget", {{"records", budget_rows},
                                               {"optimal_pair_spread", budget.max_relative_spread},
                                               {"optimal_pair_mean", budget.mean}}},
                                   {"series", {"series_alpha_curve.csv", "series_strategies.csv", "series_sp.csv"}}});
    return kExitOk;
}

// fixture --------------------------------------------------------------------------------

struct FixtureArgs {
    std::int64_t layers = 3, d_model = 16, features = 32;
    std::vector<std::string> plant;
    double delta_scale = 1.0 / 16.0;
    std::string dtype = "F32";
};

int cmd_fixture(const FixtureArgs& a, std::uint64_t seed, const Context& ctx) {
    fixtures::FixtureSpec spec;
    spec.seed = seed;
    spec.n_layers = a.layers;
    spec.d_model = a.d_model;
    spec.sae_features = a.features;
    spec.planted_delta_scale = a.delta_scale;
    spec.dtype = parse_dtype(a.dtype);
    for (const auto& p : a.plant) {
        const auto colon = p.find(':');
        if (colon == std::string::npos) throw InputError("--plant expects LAYER:SP, got '" + p + "'");
        try {
            spec.planted_sp[std::stoll(p.substr(0, colon))] = std::stod(p.substr(colon + 1));
        } catch (const std::exception&) {
            throw InputError("--plant expects LAYER:SP, got '" + p + "'");
        }
    }
    const auto bundle = fixtures::generate(spec);
    fixtures::write_bundle(bundle, ctx.out);
    std::cout << "wrote fixture bundle (seed " << seed << ", " << bundle.base.entries.size() << " tensors) to "
              << ctx.out.string() << "\n";
    return kExitOk;
}

// Config-file merging ------------------------------------------------------------------

std::vector<std::string> config_args(const json& obj, const std::vector<std::string>& user) {
    std::vector<std::string> out;
    auto given = [&](const std::string& flag) {
        return std::any_of(user.begin(), user.end(), [&](const std::string& a) {
            return a == flag || a.rfind(flag + "=", 0) == 0;
        });
    };
    for (const auto& [key, value] : obj.items()) {
        if (value.is_object()) continue;
        std::string flag = "--" + key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        if (given(flag)) continue;
        auto scalar = [](const json& v) {
            if (v.is_string()) return v.get<std::string>();
            return v.dump();
        };
        if (value.is_boolean()) {
            if (value.get<bool>()) out.push_back(flag);
        } else if (value.is_array()) {
            for (const auto& v : value) {
                out.push_back(flag);
                out.push_back(scalar(v));
            }
        } else {
            out.push_back(flag);
            out.push_back(scalar(value));
        }
    }
    return out;
}

// Inserts config-file values so that explicit flags still win: global keys before the
// subcommand, the subcommand's own object right after it.
std::vector<std::string> merge_config(const std::vector<std::string>& args) {
    std::string config_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
    }
    if (config_path.empty()) return args;
    const json cfg = read_json_file(config_path);
    if (!cfg.is_object()) throw InputError("--config must hold a JSON object");

    const auto sub_it = std::find_if(args.begin(), args.end(), [](const std::string& a) {
        return std::find(kSubcommands.begin(), kSubcommands.end(), a) != kSubcommands.end();
    });
    std::vector<std::string> merged;
    const std::vector<std::string> global_user(args.begin(), args.end());
    auto globals = config_args(cfg, global_user);
    if (sub_it == args.end()) {
        merged = globals;
        merged.insert(merged.end(), args.begin(), args.end());
        return merged;
    }
    merged = globals;
    merged.insert(merged.end(), args.begin(), sub_it + 1);
    if (cfg.contains(*sub_it) && cfg.at(*sub_it).is_object()) {
        const auto sub_args = config_args(cfg.at(*sub_it), global_user);
        merged.insert(merged.end(), sub_args.begin(), sub_args.end());
    }
    merged.insert(merged.end(), sub_it + 1, args.end());
    return merged;
}

void add_pattern(CLI::App* sub, std::string& pattern) {
    sub->add_option("--layer-pattern", pattern, "Regex with one integer capture group naming the layer")
        ->capture_default_str();
}

void add_projection(CLI::App* sub, ProjectionArgs& p) {
    sub->add_option("--decoder", p.decoder, "SAE decoder container ([D, d_model] per layer)");
    sub->add_option("--stats", p.stats, "Activation-stats CSV used to pick domain features");
    sub->add_option("--side", p.side, "output_rows | input_columns")->capture_default_str();
    sub->add_option("--projection-mode", p.mode, "sum_rank_one | orthogonal")->capture_default_str();
    sub->add_option("--tau-f", p.tau_f, "Feature threshold (strict >)")->capture_default_str();
    sub->add_option("--epsilon", p.epsilon, "Specificity epsilon")->capture_default_str();
}

}  // namespace

int run(const std::vector<std::string>& raw_args) {
    std::vector<std::string> args;
    try {
        args = merge_config(raw_args);
    } catch (const InputError& e) {
        log::error(e.what());
        return kExitInput;
    }

    CLI::App app{"tvscope: SAE-guided task-vector editing toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    Context ctx;
    std::string config_path;
    std::uint64_t seed = 0;
    int threads = 0;
    std::string out_dir = "tvscope_out";
    app.add_option("--config", config_path, "JSON file of default option values (flags override it)");
    app.add_option("--out", out_dir, "Output directory")->capture_default_str();
    app.add_option("--seed", seed, "Fixture seed")->capture_default_str();
    app.add_option("--threads", threads, "OpenMP threads (outputs do not depend on it)");

    DiffArgs diff_args;
    auto* diff_cmd = app.add_subcommand("diff", "Task vector ft - base (or a materialized LoRA delta)");
    diff_cmd->add_option("--base", diff_args.base, "Base checkpoint");
    diff_cmd->add_option("--ft", diff_args.ft, "Fine-tuned checkpoint");
    diff_cmd->add_option("--lora", diff_args.lora, "LoRA factor container instead of --ft");
    diff_cmd->add_option("--include", diff_args.include, "Glob of tensors kept in layer slices");
    diff_cmd->add_option("--exclude", diff_args.exclude, "Glob of tensors dropped from layer slices");
    add_pattern(diff_cmd, diff_args.pattern);

    DiagnoseArgs diag_args;
    auto* diag_cmd = app.add_subcommand("diagnose", "Per-layer specificity scores and domain-feature counts");
    diag_cmd->add_option("--stats", diag_args.stats, "Activation-stats CSV")->required();
    diag_cmd->add_option("--epsilon", diag_args.epsilon)->capture_default_str();
    diag_cmd->add_option("--tau-f", diag_args.tau_f)->capture_default_str();
    diag_cmd->add_option("--tau-sp", diag_args.tau_sp)->capture_default_str();
    diag_cmd->add_option("--num-layers", diag_args.num_layers, "Report layers 0..N-1 even when absent (SP 0)");

    SelectArgs sel_args;
    auto* sel_cmd = app.add_subcommand("select", "Choose layers from an SP profile");
    sel_cmd->add_option("--stats", sel_args.stats, "Activation-stats CSV");
    sel_cmd->add_option("--epsilon", sel_args.epsilon)->capture_default_str();
    sel_cmd->add_option("--strategy", sel_args.strategy.strategy, "sp | nodeep | mid | explicit")->capture_default_str();
    sel_cmd->add_option("--strategy-json", sel_args.strategy.strategy_json, "Strategy as JSON text or file");
    sel_cmd->add_option("--tau", sel_args.strategy.tau, "SP threshold (inclusive)")->capture_default_str();
    sel_cmd->add_option("--deep", sel_args.strategy.deep, "Layers removed by nodeep")->delimiter(',');
    sel_cmd->add_option("--lo", sel_args.strategy.lo, "Mid band lower layer");
    sel_cmd->add_option("--hi", sel_args.strategy.hi, "Mid band upper layer");
    sel_cmd->add_option("--layers", sel_args.strategy.layers, "Explicit layers")->delimiter(',');
    sel_cmd->add_flag("--allow-empty", sel_args.allow_empty);

    ProjectArgs proj_args;
    auto* proj_cmd = app.add_subcommand("project", "Project a task vector onto SAE feature subspaces");
    proj_cmd->add_option("--tv", proj_args.tv, "Task vector container")->required();
    proj_cmd->add_option("--selection", proj_args.selection, "selection.json");
    proj_cmd->add_option("--layers", proj_args.layers)->delimiter(',');
    proj_cmd->add_flag("--allow-empty", proj_args.allow_empty);
    add_projection(proj_cmd, proj_args.proj);
    add_pattern(proj_cmd, proj_args.pattern);

    InjectArgs inj_args;
    auto* inj_cmd = app.add_subcommand("inject", "Apply a task vector to selected layers");
    inj_cmd->add_option("--base", inj_args.base, "Base checkpoint")->required();
    inj_cmd->add_option("--tv", inj_args.tv, "Task vector container")->required();
    inj_cmd->add_option("--tv2", inj_args.tv2, "Second task vector (dual mode)");
    inj_cmd->add_option("--plan", inj_args.plan, "EditPlan JSON");
    inj_cmd->add_option("--selection", inj_args.selection, "selection.json");
    inj_cmd->add_option("--layers", inj_args.layers)->delimiter(',');
    inj_cmd->add_option("--selection2", inj_args.selection2, "selection.json for --tv2");
    inj_cmd->add_option("--layers2", inj_args.layers2)->delimiter(',');
    inj_cmd->add_option("--alpha", inj_args.alpha)->capture_default_str();
    inj_cmd->add_option("--alpha2", inj_args.alpha2)->capture_default_str();
    inj_cmd->add_option("--mode", inj_args.mode, "raw | projected | dual")->capture_default_str();
    inj_cmd->add_flag("--allow-empty", inj_args.allow_empty);
    add_projection(inj_cmd, inj_args.proj);
    add_pattern(inj_cmd, inj_args.pattern);

    EnergyArgs en_args;
    auto* en_cmd = app.add_subcommand("energy", "Energy retained by a projected task vector");
    en_cmd->add_option("--tv", en_args.tv)->required();
    en_cmd->add_option("--projected", en_args.projected)->required();
    en_cmd->add_option("--selection", en_args.selection, "Restrict to a selection.json");
    en_cmd->add_option("--layers", en_args.layers)->delimiter(',');
    add_pattern(en_cmd, en_args.pattern);

    EvalArgs ev_args;
    auto* ev_cmd = app.add_subcommand("eval-stats", "Per-subject two-sample proportion z-tests");
    ev_cmd->add_option("--counts", ev_args.counts, "Eval-counts CSV")->required();
    ev_cmd->add_flag("--paper-check", ev_args.reference_check, "Compare the reference tables against recomputation");
    ev_cmd->add_option("--power", ev_args.power, "Power for the MDE column")->capture_default_str();

    SweepArgs sw_args;
    auto* sw_cmd = app.add_subcommand("sweep", "Rank (selection, alpha) configurations by target-subject z");
    sw_cmd->add_option("--grid", sw_args.sweep, "Sweep JSON")->required();
    sw_cmd->add_option("--base", sw_args.base, "Base checkpoint (writes edited checkpoints)");
    sw_cmd->add_option("--tv", sw_args.tv, "Task vector container");
    sw_cmd->add_option("--stats", sw_args.stats, "Activation-stats CSV for strategy selections");
    sw_cmd->add_option("--target", sw_args.target, "Ranking subject")->capture_default_str();
    add_pattern(sw_cmd, sw_args.pattern);

    auto* rep_cmd = app.add_subcommand("report", "Recompute the embedded reference tables and emit plot series");

    FixtureArgs fx_args;
    auto* fx_cmd = app.add_subcommand("fixture", "Write a synthetic bundle with planted ground truth");
    fx_cmd->add_option("--layers", fx_args.layers)->capture_default_str();
    fx_cmd->add_option("--d-model", fx_args.d_model)->capture_default_str();
    fx_cmd->add_option("--features", fx_args.features)->capture_default_str();
    fx_cmd->add_option("--plant", fx_args.plant, "LAYER:SP, repeatable");
    fx_cmd->add_option("--delta-scale", fx_args.delta_scale)->capture_default_str();
    fx_cmd->add_option("--dtype", fx_args.dtype, "F32 | F64 | BF16")->capture_default_str();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInput;
    }

    if (threads > 0) omp_set_num_threads(threads);
    ctx.out = out_dir;

    try {
        for (CLI::App* sub : app.get_subcommands()) {
            ctx.config = effective_config(app, *sub);
            const std::string name = sub->get_name();
            if (name == "diff") return cmd_diff(diff_args, ctx);
            if (name == "diagnose") return cmd_diagnose(diag_args, ctx);
            if (name == "select") return cmd_select(sel_args, ctx);
            if (name == "project") return cmd_project(proj_args, ctx);
            if (name == "inject") return cmd_inject(inj_args, ctx);
            if (name == "energy") return cmd_energy(en_args, ctx);
            if (name == "eval-stats") return cmd_eval_stats(ev_args, ctx);
            if (name == "sweep") return cmd_sweep(sw_args, ctx);
            if (name == "report") return cmd_report(ctx);
            if (name == "fixture") return cmd_fixture(fx_args, seed, ctx);
        }
        (void)rep_cmd;
    } catch (const InputError& e) {
        log::error(e.what());
        return kExitInput;
    } catch (const EmptyResultError& e) {
        log::error(e.what());
        return kExitEmpty;
    } catch (const std::exception& e) {
        log::error(e.what());
        return kExitInternal;
    }
    return kExitInternal;
}

}  // namespace tvscope::cli
