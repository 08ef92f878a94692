#pragma once

// Full run from a RunConfig: acquire the image, segment it and write the
// rasters, metrics and resolved configuration to the output directory.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vacseg/config.hpp"
#include "vacseg/imageio.hpp"
#include "vacseg/postprocess.hpp"
#include "vacseg/segment.hpp"

namespace vacseg {

/// Error raised by a pipeline stage; `stage` names the failing step.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& what)
        : std::runtime_error(what), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct PipelineInput {
    ImageData image;
    std::optional<SynthImage> synth;  // ground truth when synthesised
};

inline PipelineInput acquire_input(const RunConfig& cfg) {
    PipelineInput in;
    switch (cfg.synth) {
        case SynthKind::none:
            try {
                in.image = load(cfg.input);
            } catch (const std::exception& e) {
                throw StageError("load", e.what());
            }
            return in;
        default: break;
    }
    try {
        if (cfg.synth == SynthKind::circles)
            in.synth = synth_circles(cfg.size, {0.25, 0.95, 0.55, 0.75}, 0.1, cfg.noise, cfg.solver.seed);
        else if (cfg.synth == SynthKind::step)
            in.synth = synth_step_signal(cfg.size, {0.2, 0.8}, cfg.noise, cfg.solver.seed);
        else
            in.synth = synth_composite(cfg.size, cfg.noise, cfg.solver.seed);
    } catch (const std::exception& e) {
        throw StageError("synth", e.what());
    }
    in.image = in.synth->image;
    return in;
}

namespace detail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string join(const std::vector<double>& v) {
    std::string s;
    for (double x : v) s += (s.empty() ? "" : " ") + fmt(x);
    return s;
}

inline ImageData offset_encoded(const std::vector<double>& signed_values, int channels, int width, int height) {
    ImageData img(width, height, channels);
    for (std::size_t k = 0; k < signed_values.size(); ++k) img.values[k] = std::clamp(0.5 + 0.5 * signed_values[k], 0.0, 1.0);
    return img;
}

inline ImageData clipped(ImageData img) {
    for (double& v : img.values) v = std::clamp(v, 0.0, 1.0);
    return img;
}

}  // namespace detail

/// Line-oriented "key value" metrics followed by the table of region averages.
inline void write_metrics(std::ostream& os, const RunConfig& cfg, const ImageData& img, const Segmenter& seg,
                          const RunResult& run, const SegmentationMetrics& m) {
    using detail::fmt;
    using detail::join;
    const auto& d = run.diagnostics;
    const auto& res = run.segmentation;
    int sweeps_total = 0, sweeps_max = 0;
    for (int s : d.sweeps) {
        sweeps_total += s;
        sweeps_max = std::max(sweeps_max, s);
    }
    os << "width " << img.width << "\n";
    os << "height " << img.height << "\n";
    os << "channels " << img.channels << "\n";
    os << "components " << cfg.solver.components << "\n";
    os << "levels " << seg.hierarchy().num_levels() << "\n";
    os << "finest_nodes " << seg.finest().num_nodes() << "\n";
    os << "finest_triangles " << seg.finest().num_triangles() << "\n";
    os << "time_steps " << run.steps.size() << "\n";
    os << "steady " << (run.steady ? "true" : "false") << "\n";
    os << "energy_initial " << fmt(d.energy_before.empty() ? seg.energy() : d.energy_before.front()) << "\n";
    os << "energy_final " << fmt(d.energy_after.empty() ? seg.energy() : d.energy_after.back()) << "\n";
    os << "last_change " << fmt(d.change.empty() ? 0.0 : d.change.back()) << "\n";
    os << "sweeps_total " << sweeps_total << "\n";
    os << "sweeps_max_per_step " << sweeps_max << "\n";
    os << "unconverged_steps " << d.unconverged_steps << "\n";
    os << "updates " << d.updates << "\n";
    os << "gibbs_corrections " << d.gibbs_corrections << "\n";
    os << "gibbs_skips " << d.gibbs_skips << "\n";
    os << "gibbs_max_passes " << d.max_gibbs_passes << "\n";
    os << "descent_fallbacks " << d.descent_fallbacks << "\n";
    os << "admissibility_violations " << d.admissibility_violations << "\n";
    os << "worst_sum_error " << fmt(d.worst_sum_error) << "\n";
    os << "composite_l2 " << join(m.composite_l2) << "\n";
    os << "rounded_l2 " << join(m.rounded_l2) << "\n";
    os << "remainder_l2 " << join(res.remainder.norms.l2) << "\n";
    os << "remainder_linf " << join(res.remainder.norms.linf) << "\n";
    os << "remainder_min " << fmt(res.remainder.min) << "\n";
    os << "remainder_max " << fmt(res.remainder.max) << "\n";
    if (m.misclassification) os << "misclassification " << fmt(*m.misclassification) << "\n";
    os << "c_table";
    for (int j = 0; j < res.averages.channels; ++j) os << " c" << j;
    os << "\n";
    for (std::size_t i = 0; i < res.averages.components; ++i) {
        os << i;
        for (int j = 0; j < res.averages.channels; ++j) os << " " << fmt(res.averages(i, j));
        os << "\n";
    }
}

/// Runs every stage and writes the outputs. Returns 0 on success; on failure
/// the stage-tagged message goes to `err` and the result is nonzero.
inline int run_pipeline(const RunConfig& cfg, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    namespace fs = std::filesystem;
    try {
        const auto input = acquire_input(cfg);
        const ImageData& img = input.image;
        if (img.width % cfg.solver.coarsen != 0 || img.height % cfg.solver.coarsen != 0)
            throw StageError("mesh", "coarsen factor " + std::to_string(cfg.solver.coarsen) + " does not divide the " +
                                         std::to_string(img.width) + "x" + std::to_string(img.height) + " image");

        std::unique_ptr<Segmenter> seg;
        try {
            seg = std::make_unique<Segmenter>(img, cfg.solver);
        } catch (const std::exception& e) {
            throw StageError("mesh", e.what());
        }
        for (const auto& w : seg->warnings()) err << "warning: " << w << "\n";
        log << "mesh: " << seg->hierarchy().num_levels() << " levels, " << seg->finest().num_nodes() << " finest nodes\n";

        try {
            fs::create_directories(cfg.out);
        } catch (const std::exception& e) {
            throw StageError("write", e.what());
        }
        const fs::path dir(cfg.out);
        std::ofstream diag_file;
        if (cfg.emit.diagnostics) {
            diag_file.open(dir / "diagnostics.jsonl");
            if (!diag_file) throw StageError("write", "cannot create " + (dir / "diagnostics.jsonl").string());
        }

        RunResult run;
        try {
            run.warnings = seg->warnings();
            run.steady = seg->run([&](const StepRecord& r) {
                run.steps.push_back(r);
                if (!r.converged) err << "warning: step " << r.step << " reached the sweep limit\n";
                if (diag_file.is_open()) {
                    nlohmann::json j;
                    j["step"] = r.step;
                    j["energy"] = r.energy;
                    j["sweeps"] = r.sweeps;
                    j["max_correction"] = r.max_correction;
                    j["change"] = r.change;
                    j["converged"] = r.converged;
                    j["mass"] = r.mass;
                    j["c"] = r.c.values;
                    diag_file << j.dump() << "\n";
                }
            });
            run.diagnostics = seg->state().diagnostics;
        } catch (const std::exception& e) {
            throw StageError("solve", e.what());
        }
        log << "solve: " << run.steps.size() << " steps, " << (run.steady ? "steady" : "step limit reached") << "\n";
        if (!run.steady) err << "warning: no steady state within " << cfg.solver.max_time_steps << " steps\n";

        SegmentationMetrics metrics;
        try {
            run.segmentation = seg->result();
            std::vector<std::uint32_t> truth;
            if (input.synth) truth = project_labels(input.synth->labels, seg->finest());
            metrics = segmentation_errors(run.segmentation, seg->node_image(), seg->problem().mass, truth,
                                          input.synth ? input.synth->regions : 0);
        } catch (const std::exception& e) {
            throw StageError("postprocess", e.what());
        }

        try {
            const auto& fine = seg->finest();
            const auto& res = run.segmentation;
            const int C = img.channels;
            const std::string ext = cfg.format == "png" ? ".png" : (C == 1 ? ".pgm" : ".ppm");
            const auto put = [&](const std::string& name, const ImageData& raster) { save((dir / (name + ext)).string(), raster); };
            if (cfg.emit.components) {
                const std::size_t N = res.components.components();
                for (std::size_t i = 0; i < N; ++i) {
                    std::vector<double> field(res.components.nodes());
                    for (std::size_t n = 0; n < field.size(); ++n) field[n] = res.components(n, i);
                    put("component_" + std::to_string(i), detail::clipped(node_field_image(field, 1, fine)));
                }
            }
            if (cfg.emit.composite) put("composite", detail::clipped(node_field_image(res.composite, C, fine)));
            if (cfg.emit.rounded) put("rounded", detail::clipped(node_field_image(res.rounded_composite, C, fine)));
            if (cfg.emit.remainder) {
                put("remainder", detail::offset_encoded(res.remainder.values, C, static_cast<int>(fine.grid_cols()),
                                                        static_cast<int>(fine.grid_rows())));
                put("remainder_pixels",
                    detail::offset_encoded(downsample_to_pixels(res.remainder.values, C, fine), C, img.width, img.height));
            }
            std::ofstream mf(dir / "metrics.txt");
            write_metrics(mf, cfg, img, *seg, run, metrics);
            std::ofstream cf(dir / "config.json");
            cf << to_json(cfg).dump(2) << "\n";
            if (!mf || !cf) throw std::runtime_error("cannot write metrics or config to " + dir.string());
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError("write", e.what());
        }
        log << "write: outputs in " << dir.string() << "\n";
        return 0;
    } catch (const StageError& e) {
        err << "error [" << e.stage() << "] " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error [unknown] " << e.what() << "\n";
        return 1;
    }
}

}  // namespace vacseg
