// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "tvscope/edit_engine.hpp"
#include "tvscope/error.hpp"
#include "tvscope/fixtures.hpp"

using namespace tvscope;

namespace {

std::vector<std::vector<double>> rows_of(const Matrix& m) {
    std::vector<std::vector<double>> out;
    for (std::size_t i = 0; i < m.rows; ++i) out.emplace_back(m.data.begin() + i * m.cols, m.data.begin() + (i + 1) * m.cols);
    return out;
}

std::vector<std::int64_t> iota_features(std::size_t k) {
    std::vector<std::int64_t> f(k);
    for (std::size_t i = 0; i < k; ++i) f[i] = static_cast<std::int64_t>(i);
    return f;
}

TaskVector one_matrix_tv(const Matrix& m) {
    TaskVector tv;
    tv.insert("model.layers.0.w", Delta{{static_cast<std::int64_t>(m.rows), static_cast<std::int64_t>(m.cols)}, m.data},
              LayerId{0});
    return tv;
}

Matrix project(const Matrix& delta, const LayerProjector& p, ProjectionSide side) {
    const auto r = project_task_vector(one_matrix_tv(delta), {{LayerId{0}, p}}, side);
    if (r.projected.deltas.empty()) return Matrix(delta.rows, delta.cols);
    return Matrix(delta.rows, delta.cols, r.projected.deltas.begin()->second.values);
}

fixtures::Bundle fourteen_layer_bundle(std::uint64_t seed) {
    fixtures::FixtureSpec spec;
    spec.seed = seed;
    spec.n_layers = 34;
    spec.d_model = 8;
    for (auto l : {14, 15, 17, 19, 20, 21, 22, 23, 24, 25, 27, 30, 31, 32}) spec.planted_sp[l] = 5.0;
    return fixtures::generate(spec);
}

}  // namespace

TEST(Projector, UnitVectorModesAgree) {
    Matrix e1(1, 5);
    e1(0, 0) = 1.0;
    const auto a = build_layer_projector(e1, {0}, ProjectionMode::sum_rank_one).dense();
    const auto b = build_layer_projector(e1, {0}, ProjectionMode::orthogonal).dense();
    EXPECT_LE(testutil::max_abs_diff(a.data, b.data), 1e-15);
    EXPECT_EQ(a(0, 0), 1.0);
}

TEST(Projector, DuplicateColumns) {
    std::mt19937_64 rng(2);
    const auto v = testutil::random_vector(rng, 6);
    Matrix d(2, 6);
    for (std::size_t j = 0; j < 6; ++j) d(0, j) = d(1, j) = v[j];
    const auto orth = build_layer_projector(d, {0, 1}, ProjectionMode::orthogonal);
    EXPECT_EQ(orth.rank(), 1u);
    const auto s = build_layer_projector(d, {0, 1}, ProjectionMode::sum_rank_one);
    EXPECT_EQ(s.rank(), 2u);
    // The sum of two identical rank-1 projectors is twice the projector.
    const auto ps = s.dense(), po = orth.dense();
    for (std::size_t i = 0; i < ps.data.size(); ++i) EXPECT_NEAR(ps.data[i], 2.0 * po.data[i], 1e-12);
}

TEST(Projector, ZeroColumnsDropped) {
    Matrix d(3, 4);
    d(0, 0) = 1.0;
    d(2, 3) = 2.0;
    const auto p = build_layer_projector(d, {0, 1, 2}, ProjectionMode::orthogonal);
    EXPECT_EQ(p.dropped, std::vector<std::int64_t>{1});
    EXPECT_EQ(p.features, (std::vector<std::int64_t>{0, 2}));
    EXPECT_THROW(build_layer_projector(d, {7}, ProjectionMode::orthogonal), InputError);
}

TEST(Projector, OrthogonalIsSymmetricIdempotent) {
    std::mt19937_64 rng(8);
    const Matrix d = testutil::random_matrix(rng, 3, 8);
    const Matrix p = build_layer_projector(d, {0, 1, 2}, ProjectionMode::orthogonal).dense();
    const Matrix pp = kernels::serial::matmul(p, p);
    EXPECT_LE(testutil::max_abs_diff(pp.data, p.data), 1e-10);
    EXPECT_LE(testutil::max_abs_diff(p.transposed().data, p.data), 1e-10);
}

TEST(Projection, MatchesOracleBothSidesAndModes) {
    std::mt19937_64 rng(21);
    for (auto side : {ProjectionSide::output_rows, ProjectionSide::input_columns}) {
        for (auto mode : {ProjectionMode::sum_rank_one, ProjectionMode::orthogonal}) {
            const Matrix dirs = testutil::random_matrix(rng, 3, 6);
            const Matrix delta = testutil::random_matrix(rng, 6, 6);
            const auto p = build_layer_projector(dirs, {0, 1, 2}, mode);
            const Matrix got = project(delta, p, side);
            const Matrix want = fixtures::oracle_project(delta, rows_of(dirs), side, mode);
            EXPECT_LE(testutil::max_abs_diff(got.data, want.data), 1e-12);
        }
    }
}

TEST(Projection, OrthonormalColumnsAgreeAcrossModes) {
    // Two orthonormal features: e2 and (e1 + e3)/sqrt(2) in R^6.
    Matrix dirs(2, 6);
    dirs(0, 1) = 1.0;
    dirs(1, 0) = dirs(1, 2) = 1.0 / std::sqrt(2.0);
    std::mt19937_64 rng(4);
    const Matrix delta = testutil::random_matrix(rng, 6, 6);
    const Matrix a = project(delta, build_layer_projector(dirs, {0, 1}, ProjectionMode::sum_rank_one), ProjectionSide::output_rows);
    const Matrix b = project(delta, build_layer_projector(dirs, {0, 1}, ProjectionMode::orthogonal), ProjectionSide::output_rows);
    EXPECT_LE(testutil::max_abs_diff(a.data, b.data), 1e-10);
    // Explicit sum of d (d^T dW).
    Matrix want(6, 6);
    for (std::size_t f = 0; f < 2; ++f)
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t j = 0; j < 6; ++j)
                for (std::size_t k = 0; k < 6; ++k) want(i, j) += dirs(f, i) * dirs(f, k) * delta(k, j);
    EXPECT_LE(testutil::max_abs_diff(a.data, want.data), 1e-12);
}

TEST(Projection, FullSpanAndEmpty) {
    std::mt19937_64 rng(5);
    const Matrix dirs = testutil::random_matrix(rng, 10, 10);
    const Matrix delta = testutil::random_matrix(rng, 10, 7);
    const auto full = build_layer_projector(dirs, iota_features(10), ProjectionMode::orthogonal);
    EXPECT_LE(testutil::max_abs_diff(project(delta, full, ProjectionSide::output_rows).data, delta.data), 1e-10);
    const auto none = build_layer_projector(dirs, {}, ProjectionMode::orthogonal);
    EXPECT_EQ(testutil::frob(project(delta, none, ProjectionSide::output_rows).data), 0.0);
}

TEST(Projection, VectorsAndExclusions) {
    std::mt19937_64 rng(6);
    const Matrix dirs = testutil::random_matrix(rng, 2, 4);
    const auto p = build_layer_projector(dirs, {0, 1}, ProjectionMode::orthogonal);
    TaskVector tv;
    tv.insert("model.layers.0.norm", Delta{{4}, testutil::random_vector(rng, 4)}, LayerId{0});
    tv.insert("model.layers.0.up", Delta{{8, 4}, testutil::random_vector(rng, 32)}, LayerId{0});
    tv.insert("model.layers.0.odd", Delta{{3, 5}, testutil::random_vector(rng, 15)}, LayerId{0});
    tv.insert("model.layers.1.w", Delta{{4, 4}, testutil::random_vector(rng, 16)}, LayerId{1});
    const auto r = project_task_vector(tv, {{LayerId{0}, p}}, ProjectionSide::output_rows);
    EXPECT_TRUE(r.projected.deltas.contains("model.layers.0.norm"));
    EXPECT_FALSE(r.projected.deltas.contains("model.layers.0.up"));
    EXPECT_FALSE(r.projected.deltas.contains("model.layers.1.w"));
    EXPECT_EQ(r.excluded, (std::vector<std::string>{"model.layers.0.odd", "model.layers.0.up"}));
    const auto c = project_task_vector(tv, {{LayerId{0}, p}}, ProjectionSide::input_columns);
    EXPECT_TRUE(c.projected.deltas.contains("model.layers.0.up"));
}

TEST(Energy, Basics) {
    const auto b = fixtures::generate({});
    const auto same = energy_retained(b.planted, b.planted);
    EXPECT_DOUBLE_EQ(same.global.ratio, 1.0);
    for (const auto& [l, e] : same.layers) EXPECT_DOUBLE_EQ(e.ratio, 1.0);
    const auto zero = energy_retained(b.planted, TaskVector{});
    EXPECT_EQ(zero.global.ratio, 0.0);
    const auto empty = energy_retained(TaskVector{}, TaskVector{});
    EXPECT_TRUE(empty.global.zero_norm);
    EXPECT_EQ(empty.global.ratio, 0.0);
}

TEST(Energy, RandomSubspaceExpectation) {
    std::mt19937_64 rng(77);
    const std::size_t n = 64, k = 8;
    double mean = 0.0;
    const int trials = 100;
    for (int t = 0; t < trials; ++t) {
        const auto p = build_layer_projector(testutil::random_matrix(rng, k, n), iota_features(k), ProjectionMode::orthogonal);
        const TaskVector tv = one_matrix_tv(testutil::random_matrix(rng, n, n));
        const auto proj = project_task_vector(tv, {{LayerId{0}, p}}, ProjectionSide::output_rows).projected;
        const double r = energy_retained(tv, proj).global.ratio;
        mean += r * r / trials;
    }
    const double expected = static_cast<double>(k) / static_cast<double>(n);
    EXPECT_NEAR(mean, expected, 0.05 * expected);
}

TEST(Inject, AlphaZeroIsByteIdentical) {
    const auto b = fixtures::generate({});
    EditPlan plan;
    plan.selection = make_selection({0, 1, 2});
    plan.alpha = 0.0;
    const auto r = inject_raw(b.base, b.planted, plan);
    EXPECT_EQ(serialize_checkpoint(r.edited), serialize_checkpoint(b.base));
}

TEST(Inject, FullSelectionReconstructsFt) {
    for (auto dt : {DType::f32, DType::f64, DType::bf16}) {
        fixtures::FixtureSpec spec;
        spec.dtype = dt;
        const auto b = fixtures::generate(spec);
        EditPlan plan;
        plan.selection = make_selection({0, 1, 2});
        const auto r = inject_raw(b.base, diff(b.base, b.ft), plan);
        for (const auto& [name, t] : r.edited.entries) {
            const bool layer = LayerAssigner().classify(name).is_layer();
            EXPECT_EQ(t, layer ? b.ft.entries.at(name) : b.base.entries.at(name)) << name;
        }
    }
}

TEST(Inject, SequentialLoopOracle) {
    const auto b = fourteen_layer_bundle(3);
    EditPlan plan;
    plan.selection = make_selection({14, 15, 17, 19, 20, 21, 22, 23, 24, 25, 27, 30, 31, 32});
    plan.alpha = 0.80;
    const auto r = inject_raw(b.base, b.planted, plan);
    const LayerAssigner assigner;
    for (const auto& [name, t] : b.base.entries) {
        const LayerId l = assigner.classify(name);
        if (!plan.selection.contains(l)) {
            EXPECT_EQ(r.edited.entries.at(name), t);
            continue;
        }
        std::vector<double> w = t.to_f64();
        const auto& d = b.planted.deltas.at(name).values;
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = w[i] + 0.80 * d[i];
        EXPECT_EQ(r.edited.entries.at(name), DenseTensor::from_f64(t.dtype(), t.shape(), w)) << name;
    }
    EXPECT_EQ(r.modified.size(), 14u * 5u);
}

TEST(Inject, Linearity) {
    fixtures::FixtureSpec spec;
    spec.dtype = DType::f64;
    const auto b = fixtures::generate(spec);
    EditPlan p1;
    p1.selection = make_selection({0, 2});
    p1.alpha = 0.3;
    EditPlan p2 = p1;
    p2.alpha = 1.1;
    const auto once = inject_raw(b.base, b.planted, p2).edited;
    EditPlan step = p1;
    step.alpha = 1.0;
    const auto twice = inject_raw(inject_raw(b.base, b.planted, p1).edited, scale(b.planted, 1.1 - 0.3), step).edited;
    for (const auto& [name, t] : once.entries) {
        EXPECT_LE(testutil::max_abs_diff(t.to_f64(), twice.entries.at(name).to_f64()), 1e-12) << name;
    }
}

TEST(Inject, Errors) {
    const auto b = fixtures::generate({});
    EditPlan plan;
    plan.selection = make_selection({7});
    EXPECT_THROW(inject_raw(b.base, b.planted, plan), InputError);
    plan.selection = make_selection({0});
    plan.alpha = NAN;
    EXPECT_THROW(inject_raw(b.base, b.planted, plan), InputError);
    plan.alpha = 1.0;
    plan.selection = {};
    EXPECT_EQ(serialize_checkpoint(inject_raw(b.base, b.planted, plan).edited), serialize_checkpoint(b.base));
}

TEST(Inject, OverflowCounted) {
    TensorMap base;
    base.entries["model.layers.0.w"] = DenseTensor::from_f64(DType::f32, {2}, std::vector<double>{3e38, 1.0});
    TaskVector tv;
    tv.insert("model.layers.0.w", Delta{{2}, {3e38, 1.0}}, LayerId{0});
    EditPlan plan;
    plan.selection = make_selection({0});
    EXPECT_EQ(inject_raw(base, tv, plan).overflow_count, 1);
}

TEST(Dual, Algebra) {
    fixtures::FixtureSpec s1, s2;
    s1.seed = 1;
    s2.seed = 2;
    s1.n_layers = s2.n_layers = 4;
    const auto b1 = fixtures::generate(s1);
    const auto tv2 = diff(b1.base, fixtures::generate(s2).ft);

    EditPlan dual;
    dual.mode = PlanMode::dual;
    dual.selection = make_selection({0, 1});
    dual.alpha = 0.75;
    dual.dual_selection = make_selection({2, 3});
    dual.dual_alpha = 0.0;
    EditPlan raw1;
    raw1.selection = dual.selection;
    raw1.alpha = dual.alpha;
    EXPECT_EQ(inject_dual(b1.base, b1.planted, tv2, dual).edited, inject_raw(b1.base, b1.planted, raw1).edited);

    dual.dual_alpha = 0.5;
    EditPlan raw2;
    raw2.selection = dual.dual_selection;
    raw2.alpha = 0.5;
    const auto seq = inject_raw(inject_raw(b1.base, b1.planted, raw1).edited, tv2, raw2).edited;
    EXPECT_EQ(inject_dual(b1.base, b1.planted, tv2, dual).edited, seq);
}

TEST(Dual, OverlapMetrics) {
    const auto b = fixtures::generate({});
    const auto sel = make_selection({0, 1, 2});
    const auto same = overlap_metrics(b.planted, b.planted, sel, sel);
    for (const auto& [l, c] : same.cosine) {
        ASSERT_TRUE(c.has_value());
        EXPECT_NEAR(*c, 1.0, 1e-12);
    }
    EXPECT_EQ(same.jaccard, 1.0);
    const auto neg = overlap_metrics(b.planted, scale(b.planted, -1.0), sel, make_selection({1, 2, 3}));
    for (const auto& [l, c] : neg.cosine) EXPECT_NEAR(c.value(), -1.0, 1e-12);
    EXPECT_DOUBLE_EQ(neg.jaccard.value(), 0.5);
    const auto zero = overlap_metrics(b.planted, scale(b.planted, 0.0), sel, {});
    for (const auto& [l, c] : zero.cosine) EXPECT_FALSE(c.has_value());
    EXPECT_FALSE(overlap_metrics(b.planted, b.planted, {}, {}).jaccard.has_value());
}

TEST(Plan, JsonRoundTrip) {
    EditPlan p;
    p.selection = make_selection({3, 1});
    p.alpha = 0.8;
    p.mode = PlanMode::dual;
    p.side = ProjectionSide::input_columns;
    p.projection = ProjectionMode::orthogonal;
    p.dual_selection = make_selection({5});
    p.dual_alpha = 0.5;
    const EditPlan back = plan_from_json(plan_to_json(p));
    EXPECT_EQ(back.selection.layers, (std::vector<std::int64_t>{1, 3}));
    EXPECT_EQ(back.mode, PlanMode::dual);
    EXPECT_EQ(back.side, ProjectionSide::input_columns);
    EXPECT_EQ(back.projection, ProjectionMode::orthogonal);
    EXPECT_EQ(back.dual_selection.layers, std::vector<std::int64_t>{5});
    EXPECT_EQ(back.dual_alpha, 0.5);
    EXPECT_THROW(plan_from_json({{"selection", {1}}, {"alpha", 1}, {"mode", "nope"}}), InputError);
}

TEST(InjectProjected, UsesDomainFeatures) {
    fixtures::FixtureSpec spec;
    spec.planted_sp = {{1, 6.0}};
    const auto b = fixtures::generate(spec);
    EditPlan plan;
    plan.mode = PlanMode::projected;
    plan.selection = make_selection({1});
    plan.projection = ProjectionMode::orthogonal;
    const auto pe = inject_projected(b.base, b.planted, b.decoder, diagnose(b.stats), plan);
    EXPECT_FALSE(pe.projection.projected.deltas.empty());
    const auto er = energy_retained(b.planted, pe.projection.projected, plan.selection);
    EXPECT_LE(er.global.ratio, 1.0 + 1e-9);
    for (const auto& [name, t] : b.base.entries) {
        if (LayerAssigner().classify(name) != LayerId{1}) EXPECT_EQ(pe.edit.edited.entries.at(name), t);
    }
}
