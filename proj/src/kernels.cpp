// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvscope/kernels.hpp"

#include <cstdint>
#include <stdexcept>

namespace tvscope {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw std::invalid_argument("matrix data size does not match dims");
}

Matrix Matrix::transposed() const {
    Matrix t(cols, rows);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
    return t;
}

namespace kernels {

namespace {

// Below this many elements the fork/join overhead dominates.
constexpr std::int64_t kParallelMin = 1 << 14;

inline double add_scaled_one(double b, double d, double alpha) {
    const double inc = alpha * d;
    return inc == 0.0 ? b : b + inc;
}

void check_same(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw std::invalid_argument(std::string("size mismatch in ") + what);
}

}  // namespace

namespace serial {

void add_scaled(std::span<const double> base, std::span<const double> delta, double alpha,
                std::span<double> out) {
    check_same(base.size(), delta.size(), "add_scaled");
    check_same(base.size(), out.size(), "add_scaled");
    for (std::size_t i = 0; i < base.size(); ++i) out[i] = add_scaled_one(base[i], delta[i], alpha);
}

void subtract(std::span<const double> a, std::span<const double> b, std::span<double> out) {
    check_same(a.size(), b.size(), "subtract");
    check_same(a.size(), out.size(), "subtract");
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
}

void scale_inplace(std::span<double> x, double alpha) {
    for (auto& v : x) v *= alpha;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    check_same(a.cols, b.rows, "matmul");
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.cols; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < a.cols; ++p) s += a(i, p) * b(p, j);
            c(i, j) = s;
        }
    return c;
}

Matrix lowrank_apply_rows(const Matrix& u, const Matrix& v, const Matrix& x) {
    check_same(u.rows, x.rows, "lowrank_apply_rows");
    check_same(v.rows, x.rows, "lowrank_apply_rows");
    check_same(u.cols, v.cols, "lowrank_apply_rows");
    const std::size_t k = u.cols;
    Matrix coef(k, x.cols);
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t c = 0; c < x.cols; ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < x.rows; ++r) s += v(r, j) * x(r, c);
            coef(j, c) = s;
        }
    Matrix out(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t c = 0; c < x.cols; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) s += u(r, j) * coef(j, c);
            out(r, c) = s;
        }
    return out;
}

Matrix lowrank_apply_cols(const Matrix& u, const Matrix& v, const Matrix& x) {
    check_same(u.rows, x.cols, "lowrank_apply_cols");
    check_same(v.rows, x.cols, "lowrank_apply_cols");
    check_same(u.cols, v.cols, "lowrank_apply_cols");
    const std::size_t k = u.cols;
    Matrix coef(x.rows, k);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < x.cols; ++r) s += x(i, r) * v(r, j);
            coef(i, j) = s;
        }
    Matrix out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t c = 0; c < x.cols; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) s += coef(i, j) * u(c, j);
            out(i, c) = s;
        }
    return out;
}

double sum_squares(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return s;
}

std::vector<double> sum_squares_each(std::span<const std::span<const double>> parts) {
    std::vector<double> out(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) out[i] = sum_squares(parts[i]);
    return out;
}

}  // namespace serial

void add_scaled(std::span<const double> base, std::span<const double> delta, double alpha,
                std::span<double> out) {
    check_same(base.size(), delta.size(), "add_scaled");
    check_same(base.size(), out.size(), "add_scaled");
    const auto n = static_cast<std::int64_t>(base.size());
#pragma omp parallel for schedule(static) if (n >= kParallelMin)
    for (std::int64_t i = 0; i < n; ++i) out[i] = add_scaled_one(base[i], delta[i], alpha);
}

void subtract(std::span<const double> a, std::span<const double> b, std::span<double> out) {
    check_same(a.size(), b.size(), "subtract");
    check_same(a.size(), out.size(), "subtract");
    const auto n = static_cast<std::int64_t>(a.size());
#pragma omp parallel for schedule(static) if (n >= kParallelMin)
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void scale_inplace(std::span<double> x, double alpha) {
    const auto n = static_cast<std::int64_t>(x.size());
#pragma omp parallel for schedule(static) if (n >= kParallelMin)
    for (std::int64_t i = 0; i < n; ++i) x[i] *= alpha;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    check_same(a.cols, b.rows, "matmul");
    Matrix c(a.rows, b.cols);
    const auto m = static_cast<std::int64_t>(a.rows);
    const auto work = static_cast<std::int64_t>(a.rows * b.cols * a.cols);
#pragma omp parallel for schedule(static) if (work >= kParallelMin)
    for (std::int64_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < b.cols; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < a.cols; ++p) s += a(i, p) * b(p, j);
            c(i, j) = s;
        }
    return c;
}

Matrix lowrank_apply_rows(const Matrix& u, const Matrix& v, const Matrix& x) {
    check_same(u.rows, x.rows, "lowrank_apply_rows");
    check_same(v.rows, x.rows, "lowrank_apply_rows");
    check_same(u.cols, v.cols, "lowrank_apply_rows");
    const std::size_t k = u.cols;
    const auto ncols = static_cast<std::int64_t>(x.cols);
    const auto nrows = static_cast<std::int64_t>(x.rows);
    const auto work = static_cast<std::int64_t>(x.rows * x.cols * (k + 1));
    Matrix coef(k, x.cols);
    Matrix out(x.rows, x.cols);
#pragma omp parallel if (work >= kParallelMin)
    {
#pragma omp for schedule(static)
        for (std::int64_t c = 0; c < ncols; ++c)
            for (std::size_t j = 0; j < k; ++j) {
                double s = 0.0;
                for (std::size_t r = 0; r < x.rows; ++r) s += v(r, j) * x(r, c);
                coef(j, c) = s;
            }
#pragma omp for schedule(static)
        for (std::int64_t r = 0; r < nrows; ++r)
            for (std::size_t c = 0; c < x.cols; ++c) {
                double s = 0.0;
                for (std::size_t j = 0; j < k; ++j) s += u(r, j) * coef(j, c);
                out(r, c) = s;
            }
    }
    return out;
}

Matrix lowrank_apply_cols(const Matrix& u, const Matrix& v, const Matrix& x) {
    check_same(u.rows, x.cols, "lowrank_apply_cols");
    check_same(v.rows, x.cols, "lowrank_apply_cols");
    check_same(u.cols, v.cols, "lowrank_apply_cols");
    const std::size_t k = u.cols;
    const auto nrows = static_cast<std::int64_t>(x.rows);
    const auto work = static_cast<std::int64_t>(x.rows * x.cols * (k + 1));
    Matrix coef(x.rows, k);
    Matrix out(x.rows, x.cols);
#pragma omp parallel for schedule(static) if (work >= kParallelMin)
    for (std::int64_t i = 0; i < nrows; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < x.cols; ++r) s += x(i, r) * v(r, j);
            coef(i, j) = s;
        }
        for (std::size_t c = 0; c < x.cols; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) s += coef(i, j) * u(c, j);
            out(i, c) = s;
        }
    }
    return out;
}

std::vector<double> sum_squares_each(std::span<const std::span<const double>> parts) {
    std::vector<double> out(parts.size());
    const auto n = static_cast<std::int64_t>(parts.size());
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < n; ++i) out[i] = serial::sum_squares(parts[i]);
    return out;
}

}  // namespace kernels
}  // namespace tvscope
