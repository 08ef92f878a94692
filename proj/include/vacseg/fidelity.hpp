#pragma once

// Image data on the mesh: pixel-to-mesh projection without interpolation,
// per-component channel averages and the fitting terms.

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vacseg/fem.hpp"
#include "vacseg/mesh.hpp"
#include "vacseg/simplex.hpp"

namespace vacseg {

/// Piecewise-constant pixel data, row-major, channels interleaved.
struct ImageData {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<double> values;

    ImageData() = default;
    ImageData(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), values(static_cast<std::size_t>(w) * h * c, fill) {
        if (w < 1 || h < 1 || c < 1) throw std::invalid_argument("image dimensions must be positive");
    }

    std::size_t pixels() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
    double& at(int row, int col, int ch = 0) {
        return values[(static_cast<std::size_t>(row) * width + col) * channels + ch];
    }
    double at(int row, int col, int ch = 0) const {
        return values[(static_cast<std::size_t>(row) * width + col) * channels + ch];
    }
};

enum class ProjectionMode { by_node, by_simplex };

inline const char* to_string(ProjectionMode m) { return m == ProjectionMode::by_node ? "node" : "simplex"; }

/// Image values carried by the finest mesh: one sample per node (by_node) or
/// per triangle (by_simplex).
struct MeshImage {
    ProjectionMode mode = ProjectionMode::by_node;
    int channels = 1;
    std::vector<double> values;          // site-major
    std::vector<std::uint32_t> pixel;    // source pixel of each site (row * width + col)

    std::size_t sites() const { return channels == 0 ? 0 : values.size() / static_cast<std::size_t>(channels); }
    double operator()(std::size_t site, int ch) const { return values[site * channels + ch]; }
};

namespace detail {

/// Pixel index along one axis for an exact scaled coordinate; points on a
/// pixel boundary go to the lower-index pixel.
inline int owning_pixel(std::int64_t coord, std::int64_t scale, int extent) {
    std::int64_t p = coord % scale == 0 ? coord / scale - 1 : coord / scale;
    return static_cast<int>(std::clamp<std::int64_t>(p, 0, extent - 1));
}

}  // namespace detail

/// Pixel owning a node of `t` under the smallest-(row, column) tie rule.
inline std::uint32_t node_pixel(const Triangulation& t, std::size_t node) {
    const int col = detail::owning_pixel(t.nodes[node].x, t.scale, t.width);
    const int row = detail::owning_pixel(t.nodes[node].y, t.scale, t.height);
    return static_cast<std::uint32_t>(row * t.width + col);
}

/// Pixel containing a triangle's barycentre.
inline std::uint32_t triangle_pixel(const Triangulation& t, const Triangle& tri) {
    const std::int64_t bx = t.nodes[tri[0]].x + t.nodes[tri[1]].x + t.nodes[tri[2]].x;
    const std::int64_t by = t.nodes[tri[0]].y + t.nodes[tri[1]].y + t.nodes[tri[2]].y;
    const auto col = std::clamp<std::int64_t>(bx / (3 * t.scale), 0, t.width - 1);
    const auto row = std::clamp<std::int64_t>(by / (3 * t.scale), 0, t.height - 1);
    return static_cast<std::uint32_t>(row * t.width + col);
}

inline MeshImage project_image(const ImageData& img, const Triangulation& fine, ProjectionMode mode) {
    if (img.width != fine.width || img.height != fine.height) {
        throw std::invalid_argument("image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                    " but the mesh covers " + std::to_string(fine.width) + "x" +
                                    std::to_string(fine.height) + " pixels");
    }
    MeshImage m;
    m.mode = mode;
    m.channels = img.channels;
    const std::size_t sites = mode == ProjectionMode::by_node ? fine.num_nodes() : fine.num_triangles();
    m.pixel.resize(sites);
    m.values.resize(sites * static_cast<std::size_t>(img.channels));
    for (std::size_t s = 0; s < sites; ++s) {
        const auto px = mode == ProjectionMode::by_node ? node_pixel(fine, s) : triangle_pixel(fine, fine.triangles[s]);
        m.pixel[s] = px;
        for (int c = 0; c < img.channels; ++c) m.values[s * img.channels + c] = img.values[px * img.channels + c];
    }
    return m;
}

inline MeshImage project_image(const ImageData& img, const GridHierarchy& h, ProjectionMode mode) {
    return project_image(img, h.finest(), mode);
}

/// c(i, j): average of channel j over component i.
struct RegionAverages {
    std::size_t components = 0;
    int channels = 0;
    std::vector<double> values;

    RegionAverages() = default;
    RegionAverages(std::size_t n, int ch, double fill = 0.0)
        : components(n), channels(ch), values(n * static_cast<std::size_t>(ch), fill) {}

    double& operator()(std::size_t i, int j) { return values[i * channels + j]; }
    double operator()(std::size_t i, int j) const { return values[i * channels + j]; }

    friend bool operator==(const RegionAverages&, const RegionAverages&) = default;
};

/// Relative mass below which a component counts as vanished.
inline constexpr double vanished_mass_fraction = 1e-14;

/// Mass-weighted channel averages per component. By node the numerator is
/// sum_n M_n u_in I_n; by simplex it is the exact integral of u_i I with I
/// constant per triangle. Vanished components keep `previous` (or fall back
/// to the global channel mean).
inline RegionAverages region_averages(const PhaseField& u, const MeshImage& img, const Triangulation& fine,
                                      const DiagonalMatrix& mass, const RegionAverages* previous = nullptr) {
    const std::size_t N = u.components();
    const int C = img.channels;
    if (u.nodes() != fine.num_nodes() || mass.size() != fine.num_nodes())
        throw std::invalid_argument("phase field does not match the mesh");
    std::vector<double> num(N * C, 0.0), den(N, 0.0), total(C, 0.0);
    double area = 0.0;
    for (std::size_t n = 0; n < u.nodes(); ++n) {
        area += mass[n];
        for (std::size_t i = 0; i < N; ++i) den[i] += mass[n] * u(n, i);
    }
    if (img.mode == ProjectionMode::by_node) {
        for (std::size_t n = 0; n < u.nodes(); ++n)
            for (int j = 0; j < C; ++j) {
                const double mi = mass[n] * img(n, j);
                total[j] += mi;
                for (std::size_t i = 0; i < N; ++i) num[i * C + j] += mi * u(n, i);
            }
    } else {
        for (std::size_t t = 0; t < fine.num_triangles(); ++t) {
            const auto& tri = fine.triangles[t];
            const double third = fine.area(tri) / 3.0;
            for (std::size_t i = 0; i < N; ++i) {
                const double ui = third * (u(tri[0], i) + u(tri[1], i) + u(tri[2], i));
                for (int j = 0; j < C; ++j) num[i * C + j] += ui * img(t, j);
            }
            for (int j = 0; j < C; ++j) total[j] += 3.0 * third * img(t, j);
        }
    }
    RegionAverages c(N, C);
    for (std::size_t i = 0; i < N; ++i) {
        const bool vanished = den[i] < vanished_mass_fraction * area;
        for (int j = 0; j < C; ++j) {
            if (!vanished)
                c(i, j) = num[i * C + j] / den[i];
            else if (previous != nullptr && previous->components == N && previous->channels == C)
                c(i, j) = (*previous)(i, j);
            else
                c(i, j) = total[j] / area;
        }
    }
    return c;
}

/// F_i at every site of the mesh image: sum over channels of (I_j - c_ij)^2.
struct FittingField {
    ProjectionMode mode = ProjectionMode::by_node;
    std::size_t components = 0;
    std::vector<double> values;  // site-major

    double operator()(std::size_t site, std::size_t i) const { return values[site * components + i]; }
};

inline FittingField fitting_values(const MeshImage& img, const RegionAverages& c) {
    if (c.channels != img.channels) throw std::invalid_argument("channel count mismatch between image and averages");
    FittingField f;
    f.mode = img.mode;
    f.components = c.components;
    const std::size_t sites = img.sites();
    f.values.assign(sites * c.components, 0.0);
    for (std::size_t s = 0; s < sites; ++s)
        for (std::size_t i = 0; i < c.components; ++i) {
            double sum = 0.0;
            for (int j = 0; j < img.channels; ++j) {
                const double d = img(s, j) - c(i, j);
                sum += d * d;
            }
            f.values[s * c.components + i] = sum;
        }
    return f;
}

/// Load vector l_ni = integral of F_i times the nodal basis function eta_n.
inline std::vector<double> fitting_load(const FittingField& f, const Triangulation& fine, const DiagonalMatrix& mass) {
    const std::size_t N = f.components;
    std::vector<double> load(fine.num_nodes() * N, 0.0);
    if (f.mode == ProjectionMode::by_node) {
        for (std::size_t n = 0; n < fine.num_nodes(); ++n)
            for (std::size_t i = 0; i < N; ++i) load[n * N + i] = mass[n] * f(n, i);
    } else {
        for (std::size_t t = 0; t < fine.num_triangles(); ++t) {
            const auto& tri = fine.triangles[t];
            const double third = fine.area(tri) / 3.0;
            for (auto v : tri)
                for (std::size_t i = 0; i < N; ++i) load[v * N + i] += third * f(t, i);
        }
    }
    return load;
}

}  // namespace vacseg
