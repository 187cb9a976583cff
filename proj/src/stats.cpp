// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvscope/stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>

#include "tvscope/error.hpp"

namespace tvscope::stats {

void validate(const EvalCounts& c) {
    if (c.n <= 0) throw InputError("subject '" + c.subject + "': n must be positive");
    if (c.correct_base < 0 || c.correct_base > c.n || c.correct_edit < 0 || c.correct_edit > c.n) {
        throw InputError("subject '" + c.subject + "': correct counts must lie in [0, n]");
    }
}

ZResult ztest_proportions(double p_base, double p_edit, double n_base, double n_edit) {
    if (!(n_base > 0) || !(n_edit > 0)) throw InputError("sample sizes must be positive");
    if (!(p_base >= 0 && p_base <= 1) || !(p_edit >= 0 && p_edit <= 1)) {
        throw InputError("proportions must lie in [0, 1]");
    }
    ZResult r;
    r.se_base = std::sqrt(p_base * (1.0 - p_base) / n_base);
    r.se_edit = std::sqrt(p_edit * (1.0 - p_edit) / n_edit);
    const double se = std::sqrt(r.se_edit * r.se_edit + r.se_base * r.se_base);
    const double diff = p_edit - p_base;
    if (se == 0.0) {
        if (diff == 0.0) {
            r.z = 0.0;
        } else {
            r.kind = diff > 0 ? ZKind::plus_infinity : ZKind::minus_infinity;
            r.z = diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        }
    } else {
        r.z = diff / se;
    }
    r.p_two_sided = r.kind == ZKind::finite ? pvalue_from_z(r.z) : 0.0;
    r.significant = std::fabs(r.z) >= kSignificanceZ;
    return r;
}

ZResult ztest(const EvalCounts& c) {
    validate(c);
    const double n = static_cast<double>(c.n);
    return ztest_proportions(static_cast<double>(c.correct_base) / n, static_cast<double>(c.correct_edit) / n, n, n);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw InputError("normal_quantile needs p in (0, 1)");
    double lo = -40.0;
    double hi = 40.0;
    for (int i = 0; i < 200 && hi - lo > 0.0; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (mid == lo || mid == hi) break;
        (normal_cdf(mid) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

double pvalue_from_z(double z) {
    if (std::isnan(z)) throw InputError("z is NaN");
    if (std::isinf(z)) return 0.0;
    return std::erfc(std::fabs(z) / std::numbers::sqrt2);
}

double power_at(double delta, double p_base, double n_base, double n_edit, double alpha_level) {
    const double p_edit = p_base + delta;
    const double se = std::sqrt(p_base * (1.0 - p_base) / n_base + p_edit * (1.0 - p_edit) / n_edit);
    const double zc = normal_quantile(1.0 - alpha_level / 2.0);
    if (se == 0.0) return delta == 0.0 ? alpha_level : 1.0;
    return normal_cdf(delta / se - zc) + normal_cdf(-delta / se - zc);
}

MdeResult min_detectable_effect(double n_base, double n_edit, double p_base, double power, double alpha_level) {
    if (!(p_base > 0.0 && p_base < 1.0)) throw InputError("p_base must lie in (0, 1)");
    if (!(n_base > 0) || !(n_edit > 0)) throw InputError("sample sizes must be positive");
    if (!(power > 0.0 && power < 1.0) || !(alpha_level > 0.0 && alpha_level < 1.0)) {
        throw InputError("power and alpha level must lie in (0, 1)");
    }
    MdeResult r;
    r.power = power;
    r.alpha_level = alpha_level;
    double lo = 0.0;
    double hi = 1.0 - p_base;
    if (power_at(hi, p_base, n_base, n_edit, alpha_level) < power) {
        r.reachable = false;
        r.effect_pp = std::numeric_limits<double>::infinity();
        return r;
    }
    while (hi - lo > 1e-7) {
        const double mid = 0.5 * (lo + hi);
        (power_at(mid, p_base, n_base, n_edit, alpha_level) >= power ? hi : lo) = mid;
    }
    r.effect_pp = 100.0 * hi;
    return r;
}

std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2) return std::nullopt;
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double budget_product(const BudgetRecord& r) {
    return std::round(static_cast<double>(r.n_layers) * r.alpha_opt * 1e10) / 1e10;
}

BudgetReport budget_analysis(std::span<const BudgetRecord> records) {
    if (records.empty()) throw InputError("budget analysis needs at least one record");
    BudgetReport out;
    for (const auto& r : records) {
        if (r.n_layers < 1 || !(r.alpha_opt > 0)) throw InputError("budget record '" + r.name + "' is invalid");
        out.products.push_back(budget_product(r));
    }
    out.mean = std::accumulate(out.products.begin(), out.products.end(), 0.0) / static_cast<double>(out.products.size());
    const auto [mn, mx] = std::minmax_element(out.products.begin(), out.products.end());
    out.max_relative_spread = (*mx - *mn) / out.mean;
    return out;
}

namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    for (;;) {
        const auto comma = line.find(',');
        out.push_back(line.substr(0, comma));
        if (comma == std::string_view::npos) break;
        line.remove_prefix(comma + 1);
    }
    return out;
}

template <typename T>
T parse_number(std::string_view s, std::size_t line_no) {
    T v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw InputError("eval counts line " + std::to_string(line_no) + ": bad number '" + std::string(s) + "'");
    }
    return v;
}

}  // namespace

std::vector<EvalCounts> parse_eval_counts(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw InputError("eval counts file is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    bool accuracy_mode = false;
    if (line == "subject,n,acc_base,acc_edit") {
        accuracy_mode = true;
    } else if (line != "subject,n,correct_base,correct_edit") {
        throw InputError("eval counts header must be subject,n,correct_base,correct_edit or subject,n,acc_base,acc_edit");
    }
    std::vector<EvalCounts> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 4 || f[0].empty()) throw InputError("eval counts line " + std::to_string(line_no) + ": expected 4 fields");
        EvalCounts c;
        c.subject = std::string(f[0]);
        c.n = parse_number<std::int64_t>(f[1], line_no);
        if (accuracy_mode) {
            const double ab = parse_number<double>(f[2], line_no);
            const double ae = parse_number<double>(f[3], line_no);
            if (!(ab >= 0 && ab <= 1) || !(ae >= 0 && ae <= 1)) {
                throw InputError("eval counts line " + std::to_string(line_no) + ": accuracies must be fractions in [0, 1]");
            }
            c.correct_base = std::llround(ab * static_cast<double>(c.n));
            c.correct_edit = std::llround(ae * static_cast<double>(c.n));
        } else {
            c.correct_base = parse_number<std::int64_t>(f[2], line_no);
            c.correct_edit = parse_number<std::int64_t>(f[3], line_no);
        }
        validate(c);
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<EvalCounts> load_eval_counts(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path.string() + "'");
    try {
        return parse_eval_counts(in);
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

void write_eval_counts(std::span<const EvalCounts> counts, std::ostream& out) {
    out << "subject,n,correct_base,correct_edit\n";
    for (const auto& c : counts) out << c.subject << ',' << c.n << ',' << c.correct_base << ',' << c.correct_edit << '\n';
}

}  // namespace tvscope::stats
