// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

// Serial reference kernels against their OpenMP counterparts.
// Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "tvscope/kernels.hpp"

using namespace tvscope;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    std::vector<double> v(n);
    for (double& x : v) x = g(rng);
    return v;
}

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) { return Matrix(r, c, random_values(r * c, seed)); }

template <bool Parallel>
void BM_AddScaled(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_values(n, 1), b = random_values(n, 2);
    std::vector<double> out(n);
    for (auto _ : state) {
        if constexpr (Parallel) kernels::add_scaled(a, b, 0.8, out);
        else kernels::serial::add_scaled(a, b, 0.8, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * n * 3 * sizeof(double)));
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Matrix a = random_matrix(n, n, 3), b = random_matrix(n, n, 4);
    for (auto _ : state) {
        Matrix c = Parallel ? kernels::matmul(a, b) : kernels::serial::matmul(a, b);
        benchmark::DoNotOptimize(c.data.data());
    }
}

template <bool Parallel>
void BM_LowRankRows(benchmark::State& state) {
    const auto d = static_cast<std::size_t>(state.range(0));
    const Matrix u = random_matrix(d, 16, 5), v = random_matrix(d, 16, 6), x = random_matrix(d, 4 * d, 7);
    for (auto _ : state) {
        Matrix y = Parallel ? kernels::lowrank_apply_rows(u, v, x) : kernels::serial::lowrank_apply_rows(u, v, x);
        benchmark::DoNotOptimize(y.data.data());
    }
}

template <bool Parallel>
void BM_SumSquares(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::vector<std::vector<double>> parts;
    for (std::uint64_t k = 0; k < 64; ++k) parts.push_back(random_values(n, 10 + k));
    const std::vector<std::span<const double>> spans(parts.begin(), parts.end());
    for (auto _ : state) {
        auto s = Parallel ? kernels::sum_squares_each(spans) : kernels::serial::sum_squares_each(spans);
        benchmark::DoNotOptimize(s.data());
    }
}

}  // namespace

BENCHMARK(BM_AddScaled<false>)->Name("add_scaled/serial")->RangeMultiplier(16)->Range(1 << 12, 1 << 24);
BENCHMARK(BM_AddScaled<true>)->Name("add_scaled/openmp")->RangeMultiplier(16)->Range(1 << 12, 1 << 24);
BENCHMARK(BM_Matmul<false>)->Name("matmul/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Matmul<true>)->Name("matmul/openmp")->Arg(64)->Arg(256);
BENCHMARK(BM_LowRankRows<false>)->Name("lowrank_rows/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_LowRankRows<true>)->Name("lowrank_rows/openmp")->Arg(256)->Arg(1024);
BENCHMARK(BM_SumSquares<false>)->Name("sum_squares_each/serial")->Arg(1 << 12)->Arg(1 << 16);
BENCHMARK(BM_SumSquares<true>)->Name("sum_squares_each/openmp")->Arg(1 << 12)->Arg(1 << 16);

BENCHMARK_MAIN();
