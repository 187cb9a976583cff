// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

// Published reference values (Gemma-3-4B-IT, Gemma Scope 2 16K SAEs, Minerva Math),
// embedded so reproduction checks can run without any external assets.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tvscope/sae_diagnostics.hpp"

namespace tvscope::fixtures {

struct SubjectResult {
    std::string subject;
    std::int64_t n;
    double base_pct;
    double edit_pct;
    double z;
    double p;
};

struct MethodRow {
    std::string method;
    std::vector<double> accuracy_pct;  // NT, CP, ALG, GEO, IA, PRE, PC
};

struct ProjectionRow {
    std::string method;
    std::optional<double> energy_pct;
    double nt_z;
    int n_sig;
    double nt_p;
};

struct AlphaRow {
    double alpha;
    double nt_acc_pct;
    double nt_z, cp_z, alg_z, geo_z;
    int n_sig;
};

struct StrategyRow {
    std::string config;
    std::int64_t n_layers;
    double alpha_opt;
    double nt_z;
    int n_sig;
};

struct RankingRow {
    int rank;
    std::string config;
    double alpha;
    double nt_z;
    int n_sig;
};

struct LayerSpecRow {
    std::int64_t layer;
    double sp;
    std::int64_t n_feat;
    bool selected;
};

struct ReferenceTables {
    // Main comparison: the edited model (SP >= 4.0, 14 layers, alpha 0.80) against base.
    std::vector<SubjectResult> main_results;
    std::vector<MethodRow> method_accuracies;
    // Raw versus SAE-projected injection.
    std::vector<ProjectionRow> projection_comparison;
    // Alpha response of the 14-layer configuration.
    std::vector<AlphaRow> alpha_sweep;
    // Layer-selection strategies at their own optimal alpha.
    std::vector<StrategyRow> strategies;
    // Top-10 configurations by NT z.
    std::vector<RankingRow> ranking;
    // Per-layer NT specificity score and #features with spec > 1.0 (layers 6-32; layer 8 unlisted).
    std::vector<LayerSpecRow> layer_specificity;
    // Fixed seven-layer raw-injection control.
    std::vector<std::int64_t> e3_layers;
    // PPL-vs-accuracy correlations of the CMA-ES top-3 (CP, NT); the raw points are unpublished.
    double pearson_cp;
    double pearson_nt;
    std::int64_t model_layers;
};

const ReferenceTables& load_reference_tables();

// Activation statistics whose spec profile reproduces layer_specificity exactly:
// per layer, n_feat features above 1.0 topped by SP, plus four features below 1.0.
ActivationStats reference_layer_stats(double epsilon = kDefaultEpsilon);

}  // namespace tvscope::fixtures
