#pragma once

// End-to-end segmentation: hierarchy, projection, initialisation, time
// stepping to steady state and postprocessing.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vacseg/fidelity.hpp"
#include "vacseg/mesh.hpp"
#include "vacseg/postprocess.hpp"
#include "vacseg/solver.hpp"

namespace vacseg {

class Segmenter {
public:
    Segmenter(const ImageData& img, const SolverParams& params, std::size_t node_budget = default_node_budget)
        : params_(params), warnings_(params.validate()),
          hierarchy_(build_hierarchy(build_coarsened_grid(img.width, img.height, params.coarsen), params.refinements,
                                     node_budget)),
          node_image_(project_image(img, hierarchy_, ProjectionMode::by_node)),
          data_image_(params.projection == ProjectionMode::by_node ? node_image_
                                                                   : project_image(img, hierarchy_, params.projection)),
          problem_(hierarchy_, data_image_),
          ssc_(std::make_unique<SubspaceCorrection>(hierarchy_, problem_.mass, problem_.stiffness, params.epsilon,
                                                    params.time_step())) {
        ssc_->set_ordering(params.ordering);
        state_ = make_state(problem_, initialize(node_image_, params.components, params.seed, params.init));
    }

    Segmenter(const Segmenter&) = delete;
    Segmenter& operator=(const Segmenter&) = delete;

    /// Replace the current phase field (e.g. a custom initialisation).
    void reset(PhaseField u0) { state_ = make_state(problem_, std::move(u0)); }

    StepRecord step() { return time_step(state_, problem_, *ssc_, params_); }

    /// Step until the max-norm change per step drops below steady_tol or the
    /// step limit is hit. Returns true on reaching the steady state.
    bool run(const std::function<void(const StepRecord&)>& on_step = {}) {
        for (int s = 0; s < params_.max_time_steps; ++s) {
            double unorm = 0.0;
            for (double v : state_.u_prev_step.data()) unorm = std::max(unorm, std::abs(v));
            const auto rec = step();
            if (on_step) on_step(rec);
            if (rec.change <= params_.steady_tol * std::max(unorm, 1e-300)) return true;
        }
        return false;
    }

    SegmentationResult result() const { return postprocess(state_.u_current, state_.c, node_image_, problem_.mass); }

    double energy() const {
        return discrete_energy(state_.u_current, problem_.stiffness, problem_.mass, state_.load, params_.epsilon,
                               params_.lambda);
    }

    const SolverParams& params() const { return params_; }
    const std::vector<std::string>& warnings() const { return warnings_; }
    const GridHierarchy& hierarchy() const { return hierarchy_; }
    const Triangulation& finest() const { return hierarchy_.finest(); }
    const MeshImage& node_image() const { return node_image_; }
    const MeshImage& data_image() const { return data_image_; }
    const Problem& problem() const { return problem_; }
    const SolverState& state() const { return state_; }
    SolverState& state() { return state_; }
    SubspaceCorrection& ssc() { return *ssc_; }

private:
    SolverParams params_;
    std::vector<std::string> warnings_;
    GridHierarchy hierarchy_;
    MeshImage node_image_;
    MeshImage data_image_;
    Problem problem_;
    std::unique_ptr<SubspaceCorrection> ssc_;
    SolverState state_;
};

struct RunResult {
    SegmentationResult segmentation;
    std::vector<StepRecord> steps;
    SolverDiagnostics diagnostics;
    bool steady = false;
    std::vector<std::string> warnings;
};

inline RunResult run(const ImageData& img, const SolverParams& params,
                     const std::function<void(const StepRecord&)>& on_step = {}) {
    Segmenter seg(img, params);
    RunResult out;
    out.warnings = seg.warnings();
    out.steady = seg.run([&](const StepRecord& r) {
        out.steps.push_back(r);
        if (on_step) on_step(r);
    });
    out.segmentation = seg.result();
    out.diagnostics = seg.state().diagnostics;
    return out;
}

}  // namespace vacseg
