#pragma once

// P1 finite element operators: lumped mass and stiffness.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vacseg/mesh.hpp"

namespace vacseg {

struct DiagonalMatrix {
    std::vector<double> entries;

    std::size_t size() const { return entries.size(); }
    double operator[](std::size_t i) const { return entries[i]; }
};

/// Compressed-row symmetric matrix; every row stores its diagonal and the
/// off-diagonal entries of its mesh neighbours, columns sorted.
struct SymmetricSparseMatrix {
    std::vector<std::size_t> row_offsets;
    std::vector<std::uint32_t> columns;
    std::vector<double> values;

    std::size_t rows() const { return row_offsets.empty() ? 0 : row_offsets.size() - 1; }

    double diagonal(std::size_t i) const {
        for (auto e = row_offsets[i]; e < row_offsets[i + 1]; ++e)
            if (columns[e] == i) return values[e];
        return 0.0;
    }

    double at(std::size_t i, std::size_t j) const {
        for (auto e = row_offsets[i]; e < row_offsets[i + 1]; ++e)
            if (columns[e] == j) return values[e];
        return 0.0;
    }
};

/// Element stiffness of a linear triangle with vertices given in pixels.
inline std::array<std::array<double, 3>, 3> element_stiffness(const std::array<double, 2>& p0,
                                                              const std::array<double, 2>& p1,
                                                              const std::array<double, 2>& p2) {
    const double area2 = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]);
    if (area2 == 0.0) throw std::invalid_argument("degenerate triangle in stiffness assembly");
    // Gradient of barycentric coordinate k is the rotated opposite edge over 2|T|.
    const std::array<std::array<double, 2>, 3> g = {{
        {p1[1] - p2[1], p2[0] - p1[0]},
        {p2[1] - p0[1], p0[0] - p2[0]},
        {p0[1] - p1[1], p1[0] - p0[0]},
    }};
    const double area = 0.5 * std::abs(area2);
    std::array<std::array<double, 3>, 3> k{};
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) k[a][b] = (g[a][0] * g[b][0] + g[a][1] * g[b][1]) / (area2 * area2) * area;
    return k;
}

inline DiagonalMatrix assemble_lumped_mass(const Triangulation& t) {
    DiagonalMatrix m;
    m.entries.assign(t.num_nodes(), 0.0);
    for (const auto& tri : t.triangles) {
        const double third = t.area(tri) / 3.0;
        for (auto v : tri) m.entries[v] += third;
    }
    return m;
}

inline SymmetricSparseMatrix assemble_stiffness(const Triangulation& t) {
    const std::size_t n = t.num_nodes();
    std::vector<std::vector<std::uint32_t>> adj(n);
    for (std::uint32_t i = 0; i < n; ++i) adj[i].push_back(i);
    for (const auto& tri : t.triangles)
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                if (a != b) adj[tri[a]].push_back(tri[b]);

    SymmetricSparseMatrix A;
    A.row_offsets.reserve(n + 1);
    A.row_offsets.push_back(0);
    for (auto& row : adj) {
        std::sort(row.begin(), row.end());
        row.erase(std::unique(row.begin(), row.end()), row.end());
        A.columns.insert(A.columns.end(), row.begin(), row.end());
        A.row_offsets.push_back(A.columns.size());
    }
    A.values.assign(A.columns.size(), 0.0);

    const auto slot = [&](std::uint32_t i, std::uint32_t j) -> double& {
        const auto first = A.columns.begin() + static_cast<std::ptrdiff_t>(A.row_offsets[i]);
        const auto last = A.columns.begin() + static_cast<std::ptrdiff_t>(A.row_offsets[i + 1]);
        return A.values[static_cast<std::size_t>(std::lower_bound(first, last, j) - A.columns.begin())];
    };

    for (const auto& tri : t.triangles) {
        if (t.signed_area2_scaled(tri) <= 0) throw std::invalid_argument("degenerate or inverted triangle in stiffness assembly");
        const auto k = element_stiffness({t.x(tri[0]), t.y(tri[0])}, {t.x(tri[1]), t.y(tri[1])}, {t.x(tri[2]), t.y(tri[2])});
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) slot(tri[a], tri[b]) += k[a][b];
    }
    return A;
}

inline void multiply(const SymmetricSparseMatrix& A, std::span<const double> x, std::span<double> y) {
    if (x.size() != A.rows() || y.size() != A.rows()) throw std::invalid_argument("dimension mismatch in sparse product");
    for (std::size_t i = 0; i < A.rows(); ++i) {
        double s = 0.0;
        for (auto e = A.row_offsets[i]; e < A.row_offsets[i + 1]; ++e) s += A.values[e] * x[A.columns[e]];
        y[i] = s;
    }
}

/// x^T A y, summed over the stored entries.
inline double quadratic_form(const SymmetricSparseMatrix& A, std::span<const double> x, std::span<const double> y) {
    if (x.size() != A.rows() || y.size() != A.rows())
        throw std::invalid_argument("dimension mismatch: matrix has " + std::to_string(A.rows()) + " rows");
    double s = 0.0;
    for (std::size_t i = 0; i < A.rows(); ++i) {
        double row = 0.0;
        for (auto e = A.row_offsets[i]; e < A.row_offsets[i + 1]; ++e) row += A.values[e] * y[A.columns[e]];
        s += x[i] * row;
    }
    return s;
}

inline double quadratic_form(const DiagonalMatrix& M, std::span<const double> x, std::span<const double> y) {
    if (x.size() != M.size() || y.size() != M.size())
        throw std::invalid_argument("dimension mismatch: matrix has " + std::to_string(M.size()) + " rows");
    double s = 0.0;
    for (std::size_t i = 0; i < M.size(); ++i) s += x[i] * M.entries[i] * y[i];
    return s;
}

}  // namespace vacseg
