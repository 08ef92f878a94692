#pragma once

// Segmentation outputs from a phase field: composite, rounded composite,
// remainder and error metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "vacseg/fem.hpp"
#include "vacseg/fidelity.hpp"
#include "vacseg/simplex.hpp"

namespace vacseg {

/// Per-node, per-channel field, node-major.
using NodeImage = std::vector<double>;

/// sum_i c_ij u_i at every node.
inline NodeImage composite(const PhaseField& u, const RegionAverages& c) {
    if (u.components() != c.components) throw std::invalid_argument("component count mismatch");
    const int C = c.channels;
    NodeImage out(u.nodes() * static_cast<std::size_t>(C), 0.0);
    for (std::size_t n = 0; n < u.nodes(); ++n)
        for (std::size_t i = 0; i < u.components(); ++i) {
            const double w = u(n, i);
            if (w == 0.0) continue;
            for (int j = 0; j < C; ++j) out[n * C + j] += w * c(i, j);
        }
    return out;
}

struct RoundedComponents {
    std::vector<std::uint32_t> labels;
    PhaseField one_hot;
};

/// Argmax per node, ties to the smallest component index.
inline RoundedComponents round_components(const PhaseField& u) {
    RoundedComponents r;
    r.labels.resize(u.nodes());
    r.one_hot = PhaseField(u.nodes(), u.components(), 0.0);
    for (std::size_t n = 0; n < u.nodes(); ++n) {
        const auto v = u.at(n);
        const auto best = static_cast<std::uint32_t>(std::max_element(v.begin(), v.end()) - v.begin());
        r.labels[n] = best;
        r.one_hot(n, best) = 1.0;
    }
    return r;
}

struct ChannelNorms {
    std::vector<double> l2;    // mass-weighted RMS per channel
    std::vector<double> linf;
};

/// RMS (weighted by `weights`, or uniform when empty) and max norm per channel.
inline ChannelNorms channel_norms(std::span<const double> field, int channels, std::span<const double> weights = {}) {
    ChannelNorms out;
    out.l2.assign(static_cast<std::size_t>(channels), 0.0);
    out.linf.assign(static_cast<std::size_t>(channels), 0.0);
    const std::size_t n = field.size() / static_cast<std::size_t>(channels);
    double wsum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double w = weights.empty() ? 1.0 : weights[k];
        wsum += w;
        for (int j = 0; j < channels; ++j) {
            const double v = field[k * channels + j];
            out.l2[j] += w * v * v;
            out.linf[j] = std::max(out.linf[j], std::abs(v));
        }
    }
    for (auto& v : out.l2) v = wsum > 0.0 ? std::sqrt(v / wsum) : 0.0;
    return out;
}

struct Remainder {
    NodeImage values;
    ChannelNorms norms;
    double min = 0.0;
    double max = 0.0;
};

/// Pointwise difference between the mesh-projected input and a reconstruction.
inline Remainder remainder(std::span<const double> projected_input, std::span<const double> rounded, int channels,
                           std::span<const double> weights = {}) {
    if (projected_input.size() != rounded.size()) throw std::invalid_argument("remainder: shape mismatch");
    Remainder r;
    r.values.resize(rounded.size());
    for (std::size_t k = 0; k < rounded.size(); ++k) r.values[k] = projected_input[k] - rounded[k];
    r.norms = channel_norms(r.values, channels, weights);
    if (!r.values.empty()) {
        const auto [lo, hi] = std::minmax_element(r.values.begin(), r.values.end());
        r.min = *lo;
        r.max = *hi;
    }
    return r;
}

struct SegmentationResult {
    PhaseField components;
    RegionAverages averages;
    NodeImage composite;
    NodeImage rounded_composite;
    std::vector<std::uint32_t> labels;
    Remainder remainder;
};

/// `projected_input` is the by-node projection of the data on the finest mesh.
inline SegmentationResult postprocess(const PhaseField& u, const RegionAverages& c, const MeshImage& projected_input,
                                      const DiagonalMatrix& mass) {
    if (projected_input.mode != ProjectionMode::by_node) throw std::invalid_argument("postprocess needs node samples");
    SegmentationResult res;
    res.components = u;
    res.averages = c;
    res.composite = composite(u, c);
    auto rounded = round_components(u);
    res.labels = std::move(rounded.labels);
    res.rounded_composite = composite(rounded.one_hot, c);
    res.remainder = remainder(projected_input.values, res.rounded_composite, c.channels, mass.entries);
    return res;
}

struct SegmentationMetrics {
    std::vector<double> composite_l2;
    std::vector<double> rounded_l2;
    std::optional<double> misclassification;       // fraction of nodes
    std::vector<std::uint32_t> component_to_region; // best matching when ground truth given
};

namespace detail {

/// Assignment of components to regions maximising agreement. Exhaustive for
/// small counts, greedy on the confusion matrix otherwise.
inline std::vector<std::uint32_t> match_labels(std::span<const std::uint32_t> labels, std::span<const std::uint32_t> truth,
                                               std::size_t components, std::size_t regions) {
    const std::size_t K = std::max(components, regions);
    std::vector<double> confusion(K * K, 0.0);
    for (std::size_t n = 0; n < labels.size(); ++n) confusion[labels[n] * K + truth[n]] += 1.0;
    std::vector<std::uint32_t> perm(K);
    std::iota(perm.begin(), perm.end(), 0u);
    if (K <= 8) {
        std::vector<std::uint32_t> best = perm;
        double best_score = -1.0;
        do {
            double s = 0.0;
            for (std::size_t i = 0; i < K; ++i) s += confusion[i * K + perm[i]];
            if (s > best_score) {
                best_score = s;
                best = perm;
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
        return best;
    }
    std::vector<bool> used_c(K, false), used_r(K, false);
    for (std::size_t round = 0; round < K; ++round) {
        double best = -1.0;
        std::size_t bi = 0, br = 0;
        for (std::size_t i = 0; i < K; ++i)
            for (std::size_t r = 0; r < K; ++r)
                if (!used_c[i] && !used_r[r] && confusion[i * K + r] > best) {
                    best = confusion[i * K + r];
                    bi = i;
                    br = r;
                }
        used_c[bi] = used_r[br] = true;
        perm[bi] = static_cast<std::uint32_t>(br);
    }
    return perm;
}

}  // namespace detail

inline SegmentationMetrics segmentation_errors(const SegmentationResult& res, const MeshImage& projected_input,
                                               const DiagonalMatrix& mass,
                                               std::span<const std::uint32_t> ground_truth = {},
                                               std::size_t regions = 0) {
    SegmentationMetrics m;
    const int C = res.averages.channels;
    NodeImage diff(res.composite.size());
    for (std::size_t k = 0; k < diff.size(); ++k) diff[k] = projected_input.values[k] - res.composite[k];
    m.composite_l2 = channel_norms(diff, C, mass.entries).l2;
    for (std::size_t k = 0; k < diff.size(); ++k) diff[k] = projected_input.values[k] - res.rounded_composite[k];
    m.rounded_l2 = channel_norms(diff, C, mass.entries).l2;
    if (!ground_truth.empty()) {
        if (ground_truth.size() != res.labels.size()) throw std::invalid_argument("ground truth size mismatch");
        if (regions == 0) regions = *std::max_element(ground_truth.begin(), ground_truth.end()) + 1;
        m.component_to_region = detail::match_labels(res.labels, ground_truth, res.averages.components, regions);
        std::size_t wrong = 0;
        for (std::size_t n = 0; n < res.labels.size(); ++n)
            if (m.component_to_region[res.labels[n]] != ground_truth[n]) ++wrong;
        m.misclassification = static_cast<double>(wrong) / static_cast<double>(res.labels.size());
    }
    return m;
}

/// Average of a node field over the finest nodes owned by each pixel (same
/// tie rule as the by-node projection), giving one value per pixel.
inline std::vector<double> downsample_to_pixels(std::span<const double> node_field, int channels, const Triangulation& fine) {
    const std::size_t pixels = static_cast<std::size_t>(fine.width) * static_cast<std::size_t>(fine.height);
    std::vector<double> sum(pixels * channels, 0.0);
    std::vector<double> count(pixels, 0.0);
    for (std::size_t n = 0; n < fine.num_nodes(); ++n) {
        const auto px = node_pixel(fine, n);
        count[px] += 1.0;
        for (int j = 0; j < channels; ++j) sum[px * channels + j] += node_field[n * channels + j];
    }
    for (std::size_t p = 0; p < pixels; ++p)
        for (int j = 0; j < channels; ++j) sum[p * channels + j] /= std::max(count[p], 1.0);
    return sum;
}

/// Pixels within `radius` (centre to centre, in pixels) of a pixel carrying a
/// different label.
inline std::vector<bool> near_label_boundary(std::span<const std::uint32_t> labels, int width, int height, double radius) {
    if (labels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
        throw std::invalid_argument("label image size mismatch");
    const int reach = static_cast<int>(std::floor(radius));
    std::vector<bool> near(labels.size(), false);
    for (int row = 0; row < height; ++row)
        for (int col = 0; col < width; ++col) {
            const auto own = labels[static_cast<std::size_t>(row) * width + col];
            bool found = false;
            for (int dr = -reach; dr <= reach && !found; ++dr)
                for (int dc = -reach; dc <= reach && !found; ++dc) {
                    const int r = row + dr, c = col + dc;
                    if (r < 0 || r >= height || c < 0 || c >= width) continue;
                    if (dr * dr + dc * dc > radius * radius) continue;
                    found = labels[static_cast<std::size_t>(r) * width + c] != own;
                }
            near[static_cast<std::size_t>(row) * width + col] = found;
        }
    return near;
}

}  // namespace vacseg
