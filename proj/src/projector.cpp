// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

#include <Eigen/Dense>

#include "tvscope/edit_engine.hpp"
#include "tvscope/error.hpp"
#include "tvscope/kernels.hpp"
#include "tvscope/log.hpp"

namespace tvscope {

ProjectionMode parse_projection_mode(const std::string& s) {
    if (s == "sum_rank_one" || s == "sum-rank-one" || s == "rank1") return ProjectionMode::sum_rank_one;
    if (s == "orthogonal") return ProjectionMode::orthogonal;
    throw InputError("unknown projection mode '" + s + "'");
}

ProjectionSide parse_projection_side(const std::string& s) {
    if (s == "output_rows" || s == "rows") return ProjectionSide::output_rows;
    if (s == "input_columns" || s == "columns") return ProjectionSide::input_columns;
    throw InputError("unknown projection side '" + s + "'");
}

std::string to_string(ProjectionMode m) { return m == ProjectionMode::orthogonal ? "orthogonal" : "sum_rank_one"; }
std::string to_string(ProjectionSide s) { return s == ProjectionSide::output_rows ? "output_rows" : "input_columns"; }

Matrix LayerProjector::dense() const {
    Matrix p(dim, dim);
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < rank(); ++k) s += u(i, k) * v(j, k);
            p(i, j) = s;
        }
    return p;
}

LayerProjector build_layer_projector(const Matrix& directions, const std::vector<std::int64_t>& features,
                                     ProjectionMode mode) {
    LayerProjector p;
    p.mode = mode;
    p.dim = directions.cols;

    std::vector<std::vector<double>> columns;
    for (auto j : features) {
        if (j < 0 || static_cast<std::size_t>(j) >= directions.rows) {
            throw InputError("feature " + std::to_string(j) + " outside decoder width " + std::to_string(directions.rows));
        }
        std::vector<double> d(directions.data.begin() + static_cast<std::ptrdiff_t>(j * directions.cols),
                              directions.data.begin() + static_cast<std::ptrdiff_t>((j + 1) * directions.cols));
        double nn = 0.0;
        for (double x : d) nn += x * x;
        if (nn == 0.0) {
            p.dropped.push_back(j);
            continue;
        }
        p.features.push_back(j);
        columns.push_back(std::move(d));
    }
    if (!p.dropped.empty()) {
        log::warn("dropped " + std::to_string(p.dropped.size()) + " all-zero decoder column(s) from projector");
    }

    const std::size_t m = columns.size();
    if (mode == ProjectionMode::sum_rank_one) {
        p.u = Matrix(p.dim, m);
        p.v = Matrix(p.dim, m);
        for (std::size_t k = 0; k < m; ++k) {
            double nn = 0.0;
            for (double x : columns[k]) nn += x * x;
            for (std::size_t i = 0; i < p.dim; ++i) {
                p.u(i, k) = columns[k][i];
                p.v(i, k) = columns[k][i] / nn;
            }
        }
        return p;
    }

    if (m == 0) {
        p.u = Matrix(p.dim, 0);
        p.v = Matrix(p.dim, 0);
        return p;
    }
    Eigen::MatrixXd d(static_cast<Eigen::Index>(p.dim), static_cast<Eigen::Index>(m));
    for (std::size_t k = 0; k < m; ++k)
        for (std::size_t i = 0; i < p.dim; ++i) d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = columns[k][i];
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d);
    qr.setThreshold(kRankDropTolerance);
    const auto rank = static_cast<std::size_t>(qr.rank());
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d.rows(), static_cast<Eigen::Index>(rank));
    p.u = Matrix(p.dim, rank);
    for (std::size_t i = 0; i < p.dim; ++i)
        for (std::size_t k = 0; k < rank; ++k) p.u(i, k) = q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    p.v = p.u;
    return p;
}

ProjectorSet build_projector(const SaeDecoder& decoder, const std::map<LayerId, std::vector<std::int64_t>>& features,
                             ProjectionMode mode) {
    ProjectorSet out;
    for (const auto& [layer, fs] : features) {
        const auto it = decoder.directions.find(layer);
        if (it == decoder.directions.end()) throw InputError("no SAE decoder for " + layer_label(layer));
        out.emplace(layer, build_layer_projector(it->second, fs, mode));
    }
    return out;
}

ProjectionResult project_task_vector(const TaskVector& tv, const ProjectorSet& projectors, ProjectionSide side) {
    ProjectionResult r;
    for (const auto& [name, d] : tv.deltas) {
        const LayerId layer = tv.layer_of(name);
        const auto pit = projectors.find(layer);
        if (pit == projectors.end()) continue;
        const LayerProjector& p = pit->second;

        if (d.shape.size() == 1 && static_cast<std::size_t>(d.shape[0]) == p.dim) {
            const Matrix x(p.dim, 1, d.values);
            r.projected.insert(name, Delta{d.shape, kernels::lowrank_apply_rows(p.u, p.v, x).data}, layer);
            continue;
        }
        if (d.shape.size() == 2) {
            const auto rows = static_cast<std::size_t>(d.shape[0]);
            const auto cols = static_cast<std::size_t>(d.shape[1]);
            const Matrix x(rows, cols, d.values);
            if (side == ProjectionSide::output_rows && rows == p.dim) {
                r.projected.insert(name, Delta{d.shape, kernels::lowrank_apply_rows(p.u, p.v, x).data}, layer);
                continue;
            }
            // P is symmetric in both modes, so dW * P = (dW V) U^T.
            if (side == ProjectionSide::input_columns && cols == p.dim) {
                r.projected.insert(name, Delta{d.shape, kernels::lowrank_apply_cols(p.u, p.v, x).data}, layer);
                continue;
            }
        }
        r.excluded.push_back(name);
    }
    if (!r.excluded.empty()) {
        log::warn(std::to_string(r.excluded.size()) + " tensor(s) zeroed by projection: no dimension matches d_model on the " +
                  to_string(side) + " side (first: " + r.excluded.front() + ")");
    }
    return r;
}

}  // namespace tvscope
