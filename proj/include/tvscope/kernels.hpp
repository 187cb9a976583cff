// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

// Dense f64 kernels used by the task-vector and edit paths.
//
// Every kernel in tvscope::kernels has a twin in tvscope::kernels::serial. The
// OpenMP versions only split independent output elements across threads; each
// output element is computed with the same operation order as the serial
// version, so results are bit-identical for any thread count.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tvscope {

// Row-major dense matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> values);

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    Matrix transposed() const;
    friend bool operator==(const Matrix&, const Matrix&) = default;
};

namespace kernels {

// out[i] = base[i] + alpha * delta[i]; elements whose increment is exactly zero keep base[i]
// bit-for-bit (so alpha = 0 and absent deltas never flip -0.0 or NaN payloads).
void add_scaled(std::span<const double> base, std::span<const double> delta, double alpha,
                std::span<double> out);
// out[i] = a[i] - b[i]
void subtract(std::span<const double> a, std::span<const double> b, std::span<double> out);
// x[i] *= alpha
void scale_inplace(std::span<double> x, double alpha);
// C = A * B, inner products accumulated in ascending index order.
Matrix matmul(const Matrix& a, const Matrix& b);
// U * (V^T * X): the rank-k map P = U V^T applied to the rows side of X (X is dim x n).
Matrix lowrank_apply_rows(const Matrix& u, const Matrix& v, const Matrix& x);
// (X * V) * U^T: P^T applied from the right (X is m x dim).
Matrix lowrank_apply_cols(const Matrix& u, const Matrix& v, const Matrix& x);
// Sum of squares of each span, sequential ascending within a span; spans run in parallel.
std::vector<double> sum_squares_each(std::span<const std::span<const double>> parts);

namespace serial {
void add_scaled(std::span<const double> base, std::span<const double> delta, double alpha,
                std::span<double> out);
void subtract(std::span<const double> a, std::span<const double> b, std::span<double> out);
void scale_inplace(std::span<double> x, double alpha);
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix lowrank_apply_rows(const Matrix& u, const Matrix& v, const Matrix& x);
Matrix lowrank_apply_cols(const Matrix& u, const Matrix& v, const Matrix& x);
double sum_squares(std::span<const double> x);
std::vector<double> sum_squares_each(std::span<const std::span<const double>> parts);
}  // namespace serial

}  // namespace kernels
}  // namespace tvscope
