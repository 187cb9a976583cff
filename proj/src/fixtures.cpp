// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tvscope/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "tvscope/error.hpp"

namespace tvscope::fixtures {

using nlohmann::json;

namespace {

constexpr double kGrid = 1.0 / 65536.0;  // 2^-16
constexpr std::int64_t kBaseRange = 1 << 20;

enum Stream : std::uint64_t { kBase = 1, kDelta = 2, kDecoder = 3, kStats = 4, kPlantedFeature = 5 };

std::string layer_tensor_name(std::int64_t layer, const std::string& suffix) {
    return "model.layers." + std::to_string(layer) + "." + suffix;
}

}  // namespace

std::uint64_t CounterRng::at(std::uint64_t counter) const {
    std::uint64_t z = seed_ + stream_ * kStreamStride + (counter + 1) * kGolden;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::int64_t CounterRng::uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<unsigned __int128>(hi - lo) + 1;
    const auto r = static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * span) >> 64);
    return lo + static_cast<std::int64_t>(r);
}

std::vector<TensorTemplate> standard_tensors(std::int64_t d) {
    return {{"input_layernorm.weight", {d}},
            {"mlp.down_proj.weight", {d, 2 * d}},
            {"mlp.up_proj.weight", {2 * d, d}},
            {"self_attn.o_proj.weight", {d, d}},
            {"self_attn.q_proj.weight", {d, d}}};
}

json spec_to_json(const FixtureSpec& spec) {
    json planted = json::object();
    for (const auto& [l, s] : spec.planted_sp) planted[std::to_string(l)] = s;
    json templates = json::array();
    const auto tmpl = spec.tensors_per_layer.empty() ? standard_tensors(spec.d_model) : spec.tensors_per_layer;
    for (const auto& t : tmpl) templates.push_back({{"suffix", t.suffix}, {"shape", t.shape}});
    return {{"seed", spec.seed},
            {"n_layers", spec.n_layers},
            {"d_model", spec.d_model},
            {"tensors_per_layer", templates},
            {"sae_features", spec.sae_features},
            {"planted_sp", planted},
            {"planted_delta_scale", spec.planted_delta_scale},
            {"dtype", dtype_name(spec.dtype)},
            {"epsilon", spec.epsilon},
            {"tau_f", spec.tau_f}};
}

Bundle generate(const FixtureSpec& spec) {
    if (spec.d_model < 2) throw InputError("fixture d_model must be >= 2");
    if (spec.n_layers < 1 || spec.sae_features < 1) throw InputError("fixture needs at least one layer and feature");
    if (!(spec.planted_delta_scale >= 0) || spec.planted_delta_scale > 1) {
        throw InputError("planted_delta_scale must lie in [0, 1]");
    }
    for (const auto& [l, s] : spec.planted_sp) {
        if (l < 0 || l >= spec.n_layers || !(s >= 0)) throw InputError("invalid planted SP entry");
    }

    Bundle b;
    const auto tmpl = spec.tensors_per_layer.empty() ? standard_tensors(spec.d_model) : spec.tensors_per_layer;
    std::vector<std::pair<std::string, Shape>> layout;
    layout.emplace_back("model.embed_tokens.weight", Shape{16, spec.d_model});
    layout.emplace_back("model.norm.weight", Shape{spec.d_model});
    for (std::int64_t l = 0; l < spec.n_layers; ++l)
        for (const auto& t : tmpl) layout.emplace_back(layer_tensor_name(l, t.suffix), t.shape);
    std::sort(layout.begin(), layout.end());

    // Weights and deltas.
    CounterRng base_rng(spec.seed, kBase);
    CounterRng delta_rng(spec.seed, kDelta);
    const auto delta_range = static_cast<std::int64_t>(std::llround(spec.planted_delta_scale * 65536.0));
    const LayerAssigner assigner;
    json delta_norms = json::object();
    for (const auto& [name, shape] : layout) {
        const auto n = static_cast<std::size_t>(element_count(shape));
        std::vector<double> w(n), d(n), f(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto kb = base_rng.uniform_int(-kBaseRange, kBaseRange);
            const auto kd = delta_range == 0 ? 0 : delta_rng.uniform_int(-delta_range, delta_range);
            w[i] = static_cast<double>(kb) * kGrid;
            d[i] = static_cast<double>(kd) * kGrid;
            f[i] = static_cast<double>(kb + kd) * kGrid;
        }
        b.base.entries.emplace(name, DenseTensor::from_f64(spec.dtype, shape, w));
        b.ft.entries.emplace(name, DenseTensor::from_f64(spec.dtype, shape, f));
        b.planted.insert(name, Delta{shape, std::move(d)}, assigner.classify(name));
    }
    json layer_norms = json::object();
    for (const auto& [layer, norm] : layer_frobenius_norms(b.planted)) layer_norms[layer_label(layer)] = norm;

    // SAE decoders: D x d_model, entries on a 2^-10 grid in [-1, 1].
    CounterRng dec_rng(spec.seed, kDecoder);
    for (std::int64_t l = 0; l < spec.n_layers; ++l) {
        Matrix m(static_cast<std::size_t>(spec.sae_features), static_cast<std::size_t>(spec.d_model));
        for (auto& x : m.data) x = static_cast<double>(dec_rng.uniform_int(-1024, 1024)) / 1024.0;
        b.decoder.directions.emplace(LayerId{l}, std::move(m));
    }

    // Activation statistics with planted specificity ratios.
    CounterRng stats_rng(spec.seed, kStats);
    CounterRng feat_rng(spec.seed, kPlantedFeature);
    json sp_truth = json::object();
    json count_truth = json::object();
    json feature_truth = json::object();
    for (std::int64_t l = 0; l < spec.n_layers; ++l) {
        const auto planted = spec.planted_sp.find(l);
        const std::int64_t argmax = feat_rng.uniform_int(0, spec.sae_features - 1);
        double best = 0.0;
        std::int64_t count = 0;
        std::vector<std::int64_t> features;
        for (std::int64_t j = 0; j < spec.sae_features; ++j) {
            const auto k = stats_rng.uniform_int(0, 999);
            double ratio;
            if (planted != spec.planted_sp.end()) {
                ratio = j == argmax ? planted->second : planted->second * static_cast<double>(k) / 1000.0;
            } else {
                ratio = 1.5 * static_cast<double>(k) / 1000.0;
            }
            if (std::fabs(ratio - spec.tau_f) < 1e-9) ratio = spec.tau_f - 1e-3;
            const double other = static_cast<double>(64 + stats_rng.uniform_int(0, 64)) / 4096.0;
            ActivationRow row{LayerId{l}, j, ratio * (other + spec.epsilon), other};
            b.stats.rows.push_back(row);
            best = std::max(best, ratio);
            if (ratio > spec.tau_f) {
                ++count;
                features.push_back(j);
            }
        }
        b.stats.feature_width[LayerId{l}] = spec.sae_features;
        sp_truth[std::to_string(l)] = best;
        count_truth[std::to_string(l)] = count;
        feature_truth[std::to_string(l)] = features;
    }

    b.manifest = {{"fixture_spec", spec_to_json(spec)},
                  {"files",
                   {{"base", "base.safetensors"},
                    {"ft", "ft.safetensors"},
                    {"planted_deltas", "planted_deltas.safetensors"},
                    {"sae_decoder", "sae_decoder.safetensors"},
                    {"activation_stats", "activation_stats.csv"}}},
                  {"layer_pattern", kDefaultLayerPattern},
                  {"planted",
                   {{"delta_layer_norms", layer_norms},
                    {"delta_global_norm", frobenius_norm(b.planted)},
                    {"sp", sp_truth},
                    {"feature_counts", count_truth},
                    {"domain_features", feature_truth}}}};
    return b;
}

void write_bundle(const Bundle& bundle, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_checkpoint(bundle.base, dir / "base.safetensors");
    write_checkpoint(bundle.ft, dir / "ft.safetensors");
    write_checkpoint(to_tensor_map(bundle.planted), dir / "planted_deltas.safetensors");
    write_checkpoint(to_tensor_map(bundle.decoder), dir / "sae_decoder.safetensors");
    {
        std::ofstream out(dir / "activation_stats.csv", std::ios::binary | std::ios::trunc);
        write_activation_stats(bundle.stats, out);
    }
    std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
    out << bundle.manifest.dump(2) << '\n';
}

// Oracle ----------------------------------------------------------------------

namespace {

// Solves G X = R in place for square G (k x k) and R (k x m) by Gaussian elimination
// with partial pivoting.
std::vector<std::vector<double>> gram_solve(std::vector<std::vector<double>> g, std::vector<std::vector<double>> r) {
    const std::size_t k = g.size();
    for (std::size_t col = 0; col < k; ++col) {
        std::size_t piv = col;
        for (std::size_t i = col + 1; i < k; ++i)
            if (std::fabs(g[i][col]) > std::fabs(g[piv][col])) piv = i;
        if (g[piv][col] == 0.0) throw std::runtime_error("oracle Gram matrix is singular");
        std::swap(g[col], g[piv]);
        std::swap(r[col], r[piv]);
        for (std::size_t i = col + 1; i < k; ++i) {
            const double f = g[i][col] / g[col][col];
            for (std::size_t j = col; j < k; ++j) g[i][j] -= f * g[col][j];
            for (std::size_t j = 0; j < r[i].size(); ++j) r[i][j] -= f * r[col][j];
        }
    }
    for (std::size_t ii = k; ii-- > 0;) {
        for (std::size_t j = 0; j < r[ii].size(); ++j) {
            double s = r[ii][j];
            for (std::size_t p = ii + 1; p < k; ++p) s -= g[ii][p] * r[p][j];
            r[ii][j] = s / g[ii][ii];
        }
    }
    return r;
}

// Rows-side projection of X (dim x n).
Matrix oracle_rows(const Matrix& x, const std::vector<std::vector<double>>& dirs, ProjectionMode mode) {
    const std::size_t dim = x.rows;
    Matrix out(x.rows, x.cols);
    if (dirs.empty()) return out;
    if (mode == ProjectionMode::sum_rank_one) {
        for (const auto& d : dirs) {
            double dd = 0.0;
            for (std::size_t i = 0; i < dim; ++i) dd += d[i] * d[i];
            for (std::size_t c = 0; c < x.cols; ++c) {
                double coef = 0.0;
                for (std::size_t i = 0; i < dim; ++i) coef += d[i] * x(i, c);
                for (std::size_t r = 0; r < dim; ++r) out(r, c) += d[r] * coef / dd;
            }
        }
        return out;
    }
    const std::size_t k = dirs.size();
    std::vector<std::vector<double>> g(k, std::vector<double>(k, 0.0));
    std::vector<std::vector<double>> rhs(k, std::vector<double>(x.cols, 0.0));
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b2 = 0; b2 < k; ++b2)
            for (std::size_t i = 0; i < dim; ++i) g[a][b2] += dirs[a][i] * dirs[b2][i];
        for (std::size_t c = 0; c < x.cols; ++c)
            for (std::size_t i = 0; i < dim; ++i) rhs[a][c] += dirs[a][i] * x(i, c);
    }
    const auto coef = gram_solve(std::move(g), std::move(rhs));
    for (std::size_t r = 0; r < dim; ++r)
        for (std::size_t c = 0; c < x.cols; ++c)
            for (std::size_t a = 0; a < k; ++a) out(r, c) += dirs[a][r] * coef[a][c];
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
    return t;
}

}  // namespace

Matrix oracle_project(const Matrix& delta, const std::vector<std::vector<double>>& directions, ProjectionSide side,
                      ProjectionMode mode) {
    if (side == ProjectionSide::output_rows) return oracle_rows(delta, directions, mode);
    // X P = (P X^T)^T for symmetric P.
    return transpose(oracle_rows(transpose(delta), directions, mode));
}

}  // namespace tvscope::fixtures
