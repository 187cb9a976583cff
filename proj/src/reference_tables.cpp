// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvscope/reference_tables.hpp"

namespace tvscope::fixtures {

namespace {

ReferenceTables build() {
    ReferenceTables t;
    // Main results: accuracy (%) base vs edited, test size, z, two-sided p.
    t.main_results = {
        {"NT", 540, 29.6, 39.4, 3.41, 0.0007},   {"CP", 474, 33.3, 41.4, 2.56, 0.0105},
        {"ALG", 1187, 61.3, 67.0, 2.87, 0.0041}, {"GEO", 479, 30.5, 37.2, 2.19, 0.0286},
        {"IA", 903, 16.6, 19.6, 1.65, 0.0989},   {"PRE", 871, 62.9, 69.6, 2.94, 0.0032},
        {"PC", 546, 20.5, 20.5, 0.00, 1.0000},
    };
    t.method_accuracies = {
        {"Base model", {29.6, 33.3, 61.3, 30.5, 16.6, 62.9, 20.5}},
        {"Full LoRA merge (34L)", {30.0, 33.8, 58.1, 29.2, 16.3, 61.4, 19.8}},
        {"SAE Projection (rank-3, alpha 0.70, 16K)", {33.9, 34.6, 62.1, 31.0, 16.8, 63.5, 20.3}},
        {"Ours (SP4, alpha 0.80)", {39.4, 41.4, 67.0, 37.2, 19.6, 69.6, 20.5}},
    };
    // Energy retained is approximate ("~2.1%") for the projected rows.
    t.projection_comparison = {
        {"SAE Proj (16K, rank-3)", 2.1, 1.50, 0, 0.1336},
        {"SAE Proj (262K, rank-3)", 3.5, 0.79, 0, 0.4296},
        {"Raw TV (E3, 7 layers)", 100.0, 2.02, 1, 0.0434},
        {"Raw TV (SP4, 14 layers)", 100.0, 3.41, 5, 0.0007},
    };
    t.alpha_sweep = {
        {0.70, 38.7, 3.16, 2.5, 3.0, 2.5, 4}, {0.75, 38.3, 3.03, 2.5, 2.8, 2.0, 5},
        {0.80, 39.4, 3.41, 2.6, 2.9, 2.2, 5}, {0.85, 39.3, 3.34, 2.7, 2.9, 2.6, 5},
        {0.90, 37.8, 2.84, 2.8, 3.2, 2.7, 5}, {1.10, 38.7, 3.16, 2.7, 2.8, 1.8, 4},
        {1.20, 35.6, 2.08, 2.6, 2.4, 2.3, 5},
    };
    t.strategies = {
        {"SP4 14L", 14, 0.80, 3.41, 5},    {"SP4 noDeep", 11, 1.00, 3.22, 6}, {"SP3.5 17L", 17, 1.00, 2.33, 6},
        {"SP4 UNION", 16, 1.00, 2.33, 6},  {"MID 10L", 11, 0.90, 2.59, 3},    {"SP4.5 11L", 11, 1.00, 0.73, 0},
    };
    t.ranking = {
        {1, "SP4 14L", 0.80, 3.41, 5},        {2, "SP4 noDeep", 1.00, 3.22, 6}, {3, "SP4 14L", 0.70, 3.16, 4},
        {3, "SP4 14L", 1.10, 3.16, 4},        {5, "DUAL MID+CP0.5", 1.00, 3.09, 4}, {6, "SP4 14L", 0.90, 2.84, 5},
        {6, "SP4 14L", 1.00, 2.84, 5},        {6, "v25 SP4 14L", 1.00, 2.84, 5}, {9, "MID 10L", 0.90, 2.59, 3},
        {9, "MID 10L", 1.00, 2.59, 2},
    };
    t.layer_specificity = {
        {6, 1.21, 1, false},  {7, 1.10, 1, false},  {9, 1.08, 2, false},  {10, 2.30, 4, false},
        {11, 1.23, 7, false}, {12, 1.90, 6, false}, {13, 3.47, 5, false}, {14, 4.07, 20, true},
        {15, 4.09, 24, true}, {16, 3.74, 21, false}, {17, 5.08, 22, true}, {18, 2.33, 18, false},
        {19, 7.82, 16, true}, {20, 7.00, 9, true},  {21, 4.75, 12, true}, {22, 6.30, 11, true},
        {23, 5.58, 6, true},  {24, 4.21, 8, true},  {25, 5.35, 8, true},  {26, 3.83, 8, false},
        {27, 4.88, 4, true},  {28, 3.52, 12, false}, {29, 3.37, 12, false}, {30, 5.54, 13, true},
        {31, 8.80, 13, true}, {32, 5.02, 12, true},
    };
    t.e3_layers = {19, 20, 22, 23, 25, 30, 31};
    t.pearson_cp = -0.06;
    t.pearson_nt = 0.14;
    t.model_layers = 34;
    return t;
}

}  // namespace

const ReferenceTables& load_reference_tables() {
    static const ReferenceTables tables = build();
    return tables;
}

ActivationStats reference_layer_stats(double epsilon) {
    constexpr double kOther = 1.0 / 64.0;
    ActivationStats stats;
    for (const auto& row : load_reference_tables().layer_specificity) {
        const LayerId layer{row.layer};
        std::int64_t j = 0;
        auto add = [&](double ratio) {
            stats.rows.push_back({layer, j++, ratio * (kOther + epsilon), kOther});
        };
        // n_feat ratios in (1, SP]: SP itself, then evenly spaced down toward 1.
        for (std::int64_t i = 0; i < row.n_feat; ++i) {
            add(row.sp - (row.sp - 1.0) * static_cast<double>(i) / static_cast<double>(row.n_feat));
        }
        for (double below : {0.25, 0.5, 0.75, 0.9}) add(below);
        stats.feature_width[layer] = j;
    }
    return stats;
}

}  // namespace tvscope::fixtures
