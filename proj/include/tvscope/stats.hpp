// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

// Significance testing for base-vs-edited accuracy comparisons.
//
// Two-sample proportion z-test with unpooled standard errors:
//   SE_x = sqrt(p_x (1 - p_x) / n_x)
//   z    = (p_edit - p_base) / sqrt(SE_edit^2 + SE_base^2)
//   p    = 2 (1 - Phi(|z|)) = erfc(|z| / sqrt(2))

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tvscope::stats {

inline constexpr double kSignificanceZ = 1.96;

struct EvalCounts {
    std::string subject;
    std::int64_t n = 0;
    std::int64_t correct_base = 0;
    std::int64_t correct_edit = 0;
};

enum class ZKind { finite, plus_infinity, minus_infinity };

struct ZResult {
    double z = 0.0;
    double p_two_sided = 1.0;
    bool significant = false;  // |z| >= 1.96
    double se_base = 0.0;
    double se_edit = 0.0;
    ZKind kind = ZKind::finite;
};

// Throws InputError unless n > 0 and both counts lie in [0, n].
void validate(const EvalCounts& c);

ZResult ztest(const EvalCounts& counts);
// Same test from proportions; both SEs zero with equal proportions gives z = 0.
ZResult ztest_proportions(double p_base, double p_edit, double n_base, double n_edit);

double normal_cdf(double x);
// Inverse of normal_cdf on (0, 1), by bisection to full double precision.
double normal_quantile(double p);
double pvalue_from_z(double z);

struct MdeResult {
    double effect_pp = 0.0;  // percentage points; +inf when unreachable below p = 1
    double power = 0.80;
    double alpha_level = 0.05;
    bool reachable = true;
};

// Power of the two-sided unpooled test to detect an increase of delta over p_base.
double power_at(double delta, double p_base, double n_base, double n_edit, double alpha_level = 0.05);
// Smallest increase with power >= target, bisected to 0.01 pp or finer.
MdeResult min_detectable_effect(double n_base, double n_edit, double p_base, double power = 0.80,
                                double alpha_level = 0.05);

// Sample correlation; nullopt when lengths differ, n < 2, or either side has zero variance.
std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys);

struct BudgetRecord {
    std::string name;
    std::int64_t n_layers = 0;
    double alpha_opt = 0.0;
};

// n_layers * alpha, rounded to 1e-10 so grid alphas like 0.80 give the decimal product (11.2).
double budget_product(const BudgetRecord& r);

struct BudgetReport {
    std::vector<double> products;
    double mean = 0.0;
    double max_relative_spread = 0.0;  // (max - min) / mean
};

BudgetReport budget_analysis(std::span<const BudgetRecord> records);

// CSV `subject,n,correct_base,correct_edit` or `subject,n,acc_base,acc_edit` (accuracies as
// fractions in [0, 1], snapped to the nearest whole count).
std::vector<EvalCounts> parse_eval_counts(std::istream& in);
std::vector<EvalCounts> load_eval_counts(const std::filesystem::path& path);
void write_eval_counts(std::span<const EvalCounts> counts, std::ostream& out);

}  // namespace tvscope::stats
