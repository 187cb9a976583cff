// Copyright 2026 The tvscope Authors
// SPDX-License-Identifier: Apache-2.0

// Applying task vectors to checkpoints.
//
//   W_new(l) = W_base(l) + alpha * dW(l)   for l in the selection
//   W_new(l) = W_base(l)                   otherwise (bytes untouched)
//
// plus dual-vector injection, SAE-subspace projection of dW, and the
// energy-retention / overlap measurements that go with them.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tvscope/kernels.hpp"
#include "tvscope/sae_diagnostics.hpp"
#include "tvscope/task_vector.hpp"
#include "tvscope/tensor_store.hpp"

namespace tvscope {

enum class ProjectionMode { sum_rank_one, orthogonal };
// output_rows: dW <- P * dW (dW is [d_out, d_in] with d_out = d_model).
// input_columns: dW <- dW * P (d_in = d_model).
enum class ProjectionSide { output_rows, input_columns };

ProjectionMode parse_projection_mode(const std::string& s);
ProjectionSide parse_projection_side(const std::string& s);
std::string to_string(ProjectionMode m);
std::string to_string(ProjectionSide s);

// P = u * v^T on a dim-dimensional activation space.
//   sum_rank_one: u = [d_j], v = [d_j / (d_j . d_j)]  (literal sum of rank-1 maps)
//   orthogonal:   u = v = Q, an orthonormal basis of span{d_j} from pivoted QR
struct LayerProjector {
    ProjectionMode mode = ProjectionMode::orthogonal;
    std::size_t dim = 0;
    Matrix u;
    Matrix v;
    std::vector<std::int64_t> features;  // features that contributed
    std::vector<std::int64_t> dropped;   // zero decoder columns

    std::size_t rank() const { return u.cols; }
    Matrix dense() const;
};

using ProjectorSet = std::map<LayerId, LayerProjector>;

// Relative pivot tolerance for the orthogonal basis; smaller pivots are treated as rank loss.
inline constexpr double kRankDropTolerance = 1e-10;

LayerProjector build_layer_projector(const Matrix& directions, const std::vector<std::int64_t>& features,
                                     ProjectionMode mode);
ProjectorSet build_projector(const SaeDecoder& decoder,
                             const std::map<LayerId, std::vector<std::int64_t>>& features, ProjectionMode mode);

struct ProjectionResult {
    TaskVector projected;
    std::vector<std::string> excluded;  // tensors zeroed because no dim matched the projector
};

// Only layers with a projector appear in the result; excluded tensors are zero (absent).
ProjectionResult project_task_vector(const TaskVector& tv, const ProjectorSet& projectors, ProjectionSide side);

// Plans -------------------------------------------------------------------

enum class PlanMode { raw, projected, dual };

struct EditPlan {
    LayerSelection selection;
    double alpha = 1.0;
    PlanMode mode = PlanMode::raw;
    ProjectionSide side = ProjectionSide::output_rows;
    ProjectionMode projection = ProjectionMode::sum_rank_one;
    double tau_f = kDefaultTauF;
    LayerSelection dual_selection;
    double dual_alpha = 0.0;
};

// {"selection": [..], "alpha": a, "mode": "raw"|"projected"|"dual",
//  "projection": {"side": "output_rows"|"input_columns", "mode": "sum_rank_one"|"orthogonal", "tau_f": t},
//  "dual": {"selection": [..], "alpha": a2}}
EditPlan plan_from_json(const nlohmann::json& j);
nlohmann::json plan_to_json(const EditPlan& plan);

struct EditResult {
    TensorMap edited;
    std::vector<std::string> modified;  // tensors whose values were recomputed
    std::int64_t overflow_count = 0;    // finite f64 results that became inf after downcast
};

EditResult inject_raw(const TensorMap& base, const TaskVector& tv, const EditPlan& plan);
EditResult inject_dual(const TensorMap& base, const TaskVector& tv1, const TaskVector& tv2, const EditPlan& plan);

struct ProjectedEdit {
    EditResult edit;
    ProjectionResult projection;
};

// Projects tv through the domain features (spec > plan.tau_f) of each selected layer, then injects.
ProjectedEdit inject_projected(const TensorMap& base, const TaskVector& tv, const SaeDecoder& decoder,
                               const SpecProfile& profile, const EditPlan& plan);

// Measurements ------------------------------------------------------------

struct LayerEnergy {
    double norm = 0.0;
    double projected_norm = 0.0;
    double ratio = 0.0;
    bool zero_norm = false;
};

struct EnergyReport {
    std::map<LayerId, LayerEnergy> layers;
    LayerEnergy global;
    double mean_layer_ratio = 0.0;
};

// ||dW_proj||_F / ||dW||_F per layer and overall. Keys absent from either side are zero.
// When restrict_to is given, only those layers (and never the non-layer bucket) are counted.
EnergyReport energy_retained(const TaskVector& tv, const TaskVector& tv_proj,
                             const std::optional<LayerSelection>& restrict_to = std::nullopt);

struct OverlapReport {
    std::map<LayerId, std::optional<double>> cosine;  // nullopt when either side has zero norm
    std::optional<double> jaccard;                    // nullopt when both selections are empty
};

OverlapReport overlap_metrics(const TaskVector& tv1, const TaskVector& tv2, const LayerSelection& sel1,
                              const LayerSelection& sel2);

}  // namespace tvscope
