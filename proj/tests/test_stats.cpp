// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "tvscope/error.hpp"
#include "tvscope/reference_tables.hpp"
#include "tvscope/stats.hpp"

using namespace tvscope;
using namespace tvscope::stats;

namespace {

std::vector<EvalCounts> published_counts_from_csv() {
    std::ostringstream csv;
    csv << "subject,n,acc_base,acc_edit\n";
    for (const auto& r : fixtures::load_reference_tables().main_results)
        csv << r.subject << ',' << r.n << ',' << r.base_pct / 100.0 << ',' << r.edit_pct / 100.0 << '\n';
    std::istringstream in(csv.str());
    return parse_eval_counts(in);
}

// Simulated rejection rate of the unpooled two-sided test.
double simulated_power(double p0, double p1, int n, int trials, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::binomial_distribution<int> b0(n, p0), b1(n, p1);
    int reject = 0;
    for (int t = 0; t < trials; ++t) {
        const auto z = ztest({"x", n, b0(rng), b1(rng)});
        reject += std::fabs(z.z) >= 1.959963984540054;
    }
    return static_cast<double>(reject) / trials;
}

}  // namespace

TEST(ZTest, PublishedMainResults) {
    const auto counts = published_counts_from_csv();
    const auto& rows = fixtures::load_reference_tables().main_results;
    ASSERT_EQ(counts.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto z = ztest(counts[i]);
        EXPECT_NEAR(z.z, rows[i].z, 0.1) << rows[i].subject;
        EXPECT_NEAR(z.p_two_sided, rows[i].p, 5e-4) << rows[i].subject;
    }
    const auto nt = ztest(counts[0]);
    EXPECT_NEAR(nt.z, 3.41, 0.05);
    const auto alg = ztest(counts[2]);
    EXPECT_NEAR(alg.z, 2.87, 0.05);
}

TEST(ZTest, FromProportions) {
    const auto nt = ztest_proportions(0.296, 0.394, 540, 540);
    EXPECT_NEAR(nt.z, 3.41, 0.05);
    EXPECT_NEAR(nt.p_two_sided, 0.0007, 5e-4);
    EXPECT_TRUE(nt.significant);
}

TEST(ZTest, EdgeCases) {
    const auto eq = ztest({"x", 100, 40, 40});
    EXPECT_EQ(eq.z, 0.0);
    EXPECT_EQ(eq.p_two_sided, 1.0);
    const auto zero = ztest({"x", 10, 0, 0});
    EXPECT_EQ(zero.z, 0.0);
    EXPECT_EQ(zero.kind, ZKind::finite);
    const auto inf = ztest({"x", 10, 0, 10});
    EXPECT_EQ(inf.kind, ZKind::plus_infinity);
    EXPECT_TRUE(inf.significant);
    EXPECT_EQ(ztest({"x", 10, 10, 0}).kind, ZKind::minus_infinity);
    EXPECT_THROW(ztest({"x", 0, 0, 0}), InputError);
    EXPECT_THROW(ztest({"x", 10, 11, 0}), InputError);
}

TEST(ZTest, AntisymmetryAndMonotonicity) {
    const auto a = ztest({"x", 500, 150, 190});
    const auto b = ztest({"x", 500, 190, 150});
    EXPECT_DOUBLE_EQ(a.z, -b.z);
    EXPECT_DOUBLE_EQ(a.p_two_sided, b.p_two_sided);
    double prev = -INFINITY;
    for (int c = 1; c < 500; c += 7) {
        const double z = ztest({"x", 500, 150, c}).z;
        EXPECT_GT(z, prev);
        prev = z;
    }
}

TEST(PValue, KnownPairs) {
    EXPECT_NEAR(pvalue_from_z(1.96), 0.05, 1e-4);
    EXPECT_NEAR(pvalue_from_z(3.41), 0.00065, 1e-5);
    EXPECT_NEAR(pvalue_from_z(2.02), 0.0434, 5e-4);
    EXPECT_EQ(pvalue_from_z(0.0), 1.0);
    EXPECT_NEAR(normal_cdf(1.0), 0.8413447460685429, 1e-15);
    EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-12);
    for (const auto& r : fixtures::load_reference_tables().main_results) EXPECT_NEAR(pvalue_from_z(r.z), r.p, 5e-4);
    for (const auto& r : fixtures::load_reference_tables().projection_comparison) EXPECT_NEAR(pvalue_from_z(r.nt_z), r.nt_p, 5e-4);
}

TEST(PValue, StrictlyDecreasing) {
    double prev = 1.1;
    for (double z = 0.0; z < 8.0; z += 0.05) {
        const double p = pvalue_from_z(z);
        EXPECT_LT(p, prev);
        EXPECT_EQ(p, pvalue_from_z(-z));
        prev = p;
    }
}

TEST(Mde, NtRangeAndSimulation) {
    const auto m = min_detectable_effect(540, 540, 0.296);
    ASSERT_TRUE(m.reachable);
    EXPECT_GE(m.effect_pp, 7.0);
    EXPECT_LE(m.effect_pp, 9.0);
    EXPECT_NEAR(power_at(m.effect_pp / 100.0, 0.296, 540, 540), 0.80, 1e-6);
    const double sim = simulated_power(0.296, 0.296 + m.effect_pp / 100.0, 540, 100000, 42);
    EXPECT_NEAR(sim, 0.80, 0.01);
}

TEST(Mde, Scaling) {
    const double a = min_detectable_effect(2000, 2000, 0.3).effect_pp;
    const double b = min_detectable_effect(4000, 4000, 0.3).effect_pp;
    EXPECT_NEAR(b / a, 1.0 / std::sqrt(2.0), 0.02);
    EXPECT_LT(min_detectable_effect(1e9, 1e9, 0.3).effect_pp, 0.01);
    EXPECT_THROW(min_detectable_effect(10, 10, 0.0), InputError);
}

TEST(Pearson, Cases) {
    const std::vector<double> x = {1, 2, 3, 4};
    std::vector<double> neg = {-1, -2, -3, -4};
    EXPECT_NEAR(pearson(x, x).value(), 1.0, 1e-15);
    EXPECT_NEAR(pearson(x, neg).value(), -1.0, 1e-15);
    const std::vector<double> a = {1, 2, 3}, b = {2, 1, 3};
    EXPECT_NEAR(pearson(a, b).value(), 0.5, 1e-15);
    std::vector<double> a2 = {7, 12, 17}, b2 = {0.2, 0.1, 0.3};
    EXPECT_NEAR(pearson(a2, b2).value(), 0.5, 1e-12);
    const std::vector<double> flat = {1, 1, 1};
    EXPECT_FALSE(pearson(a, flat).has_value());
    EXPECT_FALSE(pearson(std::vector<double>{1}, std::vector<double>{2}).has_value());
}

TEST(Budget, Products) {
    EXPECT_EQ(budget_product({"SP4", 14, 0.80}), 11.2);
    EXPECT_EQ(budget_product({"noDeep", 11, 1.00}), 11.0);
    EXPECT_EQ(budget_product({"x", 1, 11.2}), 11.2);
    const std::vector<BudgetRecord> r = {{"SP4", 14, 0.80}, {"noDeep", 11, 1.00}};
    const auto rep = budget_analysis(r);
    EXPECT_EQ(rep.products, (std::vector<double>{11.2, 11.0}));
    EXPECT_LT(rep.max_relative_spread, 0.02);
    EXPECT_NEAR(rep.mean, 11.1, 1e-12);
    EXPECT_THROW(budget_analysis(std::span<const BudgetRecord>{}), InputError);
}

TEST(EvalCsv, ModesAndErrors) {
    std::istringstream counts("subject,n,correct_base,correct_edit\nNT,540,160,213\n");
    const auto c = parse_eval_counts(counts);
    ASSERT_EQ(c.size(), 1u);
    EXPECT_EQ(c[0].correct_edit, 213);
    const auto snapped = published_counts_from_csv();
    EXPECT_EQ(snapped[1].correct_base, 158);  // 0.333 * 474 = 157.84
    EXPECT_EQ(snapped[1].correct_edit, 196);
    std::istringstream bad("subject,n,correct_base,correct_edit\nNT,540,600,1\n");
    EXPECT_THROW(parse_eval_counts(bad), InputError);
    std::istringstream bad_acc("subject,n,acc_base,acc_edit\nNT,540,29.6,39.4\n");
    EXPECT_THROW(parse_eval_counts(bad_acc), InputError);
    std::istringstream bad_header("a,b,c\n");
    EXPECT_THROW(parse_eval_counts(bad_header), InputError);
    std::ostringstream out;
    write_eval_counts(c, out);
    std::istringstream again(out.str());
    EXPECT_EQ(parse_eval_counts(again)[0].correct_base, 160);
}
