// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

// Deterministic synthetic bundles with planted ground truth, plus brute-force oracles.
//
// All fixture values sit on a dyadic grid (multiples of 2^-16, magnitude below 2^8), so
// base, fine-tuned and delta tensors are exactly representable in f32 and every
// difference and sum the pipeline forms is exact in f64. No libm calls are involved,
// so a bundle is a pure function of its FixtureSpec on every platform.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tvscope/edit_engine.hpp"
#include "tvscope/kernels.hpp"
#include "tvscope/sae_diagnostics.hpp"
#include "tvscope/task_vector.hpp"
#include "tvscope/tensor_store.hpp"

namespace tvscope::fixtures {

// Counter-based generator: value(i) = splitmix64_mix(seed + stream * kStreamStride + (i + 1) * kGolden).
class CounterRng {
public:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
    static constexpr std::uint64_t kStreamStride = 0xD1B54A32D192ED03ull;

    CounterRng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

    std::uint64_t at(std::uint64_t counter) const;
    std::uint64_t next() { return at(counter_++); }
    // Uniform integer in [lo, hi] (inclusive); multiply-shift reduction.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
};

struct TensorTemplate {
    std::string suffix;
    Shape shape;
};

struct FixtureSpec {
    std::uint64_t seed = 0;
    std::int64_t n_layers = 3;
    std::int64_t d_model = 16;
    std::vector<TensorTemplate> tensors_per_layer;  // empty: standard_tensors(d_model)
    std::int64_t sae_features = 32;
    std::map<std::int64_t, double> planted_sp;
    double planted_delta_scale = 1.0 / 16.0;
    DType dtype = DType::f32;
    double epsilon = kDefaultEpsilon;
    double tau_f = kDefaultTauF;
};

// q/o projections [d, d], up [2d, d], down [d, 2d], layernorm [d].
std::vector<TensorTemplate> standard_tensors(std::int64_t d_model);

struct Bundle {
    TensorMap base;
    TensorMap ft;
    TaskVector planted;  // exactly ft - base
    SaeDecoder decoder;
    ActivationStats stats;
    nlohmann::json manifest;
};

Bundle generate(const FixtureSpec& spec);

// base.safetensors, ft.safetensors, planted_deltas.safetensors, sae_decoder.safetensors,
// activation_stats.csv, manifest.json
void write_bundle(const Bundle& bundle, const std::filesystem::path& dir);

nlohmann::json spec_to_json(const FixtureSpec& spec);

// Literal projection of one delta matrix through the given decoder directions.
//   sum_rank_one: sum_j d_j (d_j^T X) / (d_j^T d_j)  (rows side; columns side mirrors it)
//   orthogonal:   D (D^T D)^{-1} D^T X via an explicit Gram solve (Gaussian elimination)
// Shares no code with the edit engine; intended for dimensions up to 64.
Matrix oracle_project(const Matrix& delta, const std::vector<std::vector<double>>& directions, ProjectionSide side,
                      ProjectionMode mode);

}  // namespace tvscope::fixtures
