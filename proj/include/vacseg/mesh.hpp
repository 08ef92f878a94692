#pragma once

// Pixel-aligned triangulations, uniform refinement and the nested grid
// hierarchy used by the subspace-correction solver.
//
// Node coordinates are stored as integers in units of 1/scale pixels, so
// nesting between levels can be checked exactly. Nodes on every level are
// numbered lexicographically by (y, x); x runs along image columns and y
// along image rows.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace vacseg {

struct Node {
    std::int64_t x = 0;
    std::int64_t y = 0;

    friend bool operator==(const Node&, const Node&) = default;
};

using Triangle = std::array<std::uint32_t, 3>;

class Triangulation {
public:
    std::vector<Node> nodes;
    std::vector<Triangle> triangles;
    std::int64_t scale = 1;   // integer units per pixel
    int level = 0;            // index inside a hierarchy, coarsest = 0
    int width = 0;            // image extent in pixels
    int height = 0;

    std::size_t num_nodes() const { return nodes.size(); }
    std::size_t num_triangles() const { return triangles.size(); }

    double x(std::size_t i) const { return static_cast<double>(nodes[i].x) / static_cast<double>(scale); }
    double y(std::size_t i) const { return static_cast<double>(nodes[i].y) / static_cast<double>(scale); }

    /// Twice the signed area in integer units (exact).
    std::int64_t signed_area2_scaled(const Triangle& t) const {
        const Node& a = nodes[t[0]];
        const Node& b = nodes[t[1]];
        const Node& c = nodes[t[2]];
        return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    }

    /// Signed area in square pixels.
    double area(const Triangle& t) const {
        const double s = static_cast<double>(scale);
        return 0.5 * static_cast<double>(signed_area2_scaled(t)) / (s * s);
    }

    double total_area() const {
        double sum = 0.0;
        for (const auto& t : triangles) sum += area(t);
        return sum;
    }

    /// Max triangle diameter in pixels.
    double h() const {
        std::int64_t best = 0;
        for (const auto& t : triangles) {
            for (int e = 0; e < 3; ++e) {
                const Node& a = nodes[t[e]];
                const Node& b = nodes[t[(e + 1) % 3]];
                const std::int64_t dx = a.x - b.x;
                const std::int64_t dy = a.y - b.y;
                best = std::max(best, dx * dx + dy * dy);
            }
        }
        return std::sqrt(static_cast<double>(best)) / static_cast<double>(scale);
    }

    /// Node columns/rows of the underlying structured grid.
    std::size_t grid_cols() const {
        if (nodes.empty()) return 0;
        std::size_t cols = 1;
        while (cols < nodes.size() && nodes[cols].y == nodes[0].y) ++cols;
        return cols;
    }
    std::size_t grid_rows() const {
        const std::size_t cols = grid_cols();
        return cols == 0 ? 0 : nodes.size() / cols;
    }
};

namespace detail {

inline std::uint64_t edge_key(std::uint32_t a, std::uint32_t b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | b;
}

/// Permutation sorting nodes by (y, x); returns new index of every old node.
inline std::vector<std::uint32_t> lexicographic_renumbering(const std::vector<Node>& nodes) {
    std::vector<std::uint32_t> order(nodes.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (nodes[a].y != nodes[b].y) return nodes[a].y < nodes[b].y;
        return nodes[a].x < nodes[b].x;
    });
    std::vector<std::uint32_t> new_index(nodes.size());
    for (std::uint32_t k = 0; k < order.size(); ++k) new_index[order[k]] = k;
    return new_index;
}

}  // namespace detail

/// Grid of cols x rows square cells of side `cell` pixels. Every cell is
/// split along the diagonal joining (x, y) and (x + cell, y + cell).
inline Triangulation build_cell_grid(int cols, int rows, int cell) {
    if (cols < 1 || rows < 1 || cell < 1) {
        throw std::invalid_argument("grid dimensions must be positive, got " + std::to_string(cols) + "x" +
                                    std::to_string(rows) + " cells of size " + std::to_string(cell));
    }
    Triangulation t;
    t.width = cols * cell;
    t.height = rows * cell;
    t.scale = 1;
    t.nodes.reserve(static_cast<std::size_t>(cols + 1) * static_cast<std::size_t>(rows + 1));
    for (int j = 0; j <= rows; ++j)
        for (int i = 0; i <= cols; ++i) t.nodes.push_back({static_cast<std::int64_t>(i) * cell, static_cast<std::int64_t>(j) * cell});
    const auto id = [cols](int i, int j) { return static_cast<std::uint32_t>(j * (cols + 1) + i); };
    t.triangles.reserve(static_cast<std::size_t>(2) * cols * rows);
    for (int j = 0; j < rows; ++j) {
        for (int i = 0; i < cols; ++i) {
            const auto a = id(i, j), b = id(i + 1, j), c = id(i, j + 1), d = id(i + 1, j + 1);
            t.triangles.push_back({a, b, d});
            t.triangles.push_back({a, d, c});
        }
    }
    return t;
}

/// One node per pixel corner, two triangles per pixel.
inline Triangulation build_pixel_grid(int width, int height) { return build_cell_grid(width, height, 1); }

/// Pixel grid coarsened by an integer factor; both dimensions must divide.
inline Triangulation build_coarsened_grid(int width, int height, int factor) {
    if (factor < 1) throw std::invalid_argument("coarsening factor must be >= 1");
    if (width < 1 || height < 1) throw std::invalid_argument("image dimensions must be positive");
    if (width % factor != 0 || height % factor != 0) {
        throw std::invalid_argument("coarsening factor " + std::to_string(factor) + " does not divide image size " +
                                    std::to_string(width) + "x" + std::to_string(height));
    }
    return build_cell_grid(width / factor, height / factor, factor);
}

/// Origin of a node created by refinement: a surviving node (a == b) or the
/// midpoint of edge (a, b), indices on the coarser level.
struct NodeParent {
    std::uint32_t a = 0;
    std::uint32_t b = 0;
    bool is_node() const { return a == b; }
};

struct Refinement {
    Triangulation fine;
    std::vector<NodeParent> parents;           // per fine node
    std::vector<std::uint32_t> coarse_to_fine; // per coarse node
};

/// Red refinement: every triangle is split into four by its edge midpoints.
inline Refinement refine_with_parents(const Triangulation& coarse) {
    Refinement r;
    Triangulation& f = r.fine;
    f.scale = coarse.scale * 2;
    f.level = coarse.level + 1;
    f.width = coarse.width;
    f.height = coarse.height;

    std::vector<Node> nodes;
    std::vector<NodeParent> parents;
    nodes.reserve(coarse.nodes.size() * 4);
    parents.reserve(coarse.nodes.size() * 4);
    for (std::uint32_t i = 0; i < coarse.nodes.size(); ++i) {
        nodes.push_back({coarse.nodes[i].x * 2, coarse.nodes[i].y * 2});
        parents.push_back({i, i});
    }
    std::unordered_map<std::uint64_t, std::uint32_t> midpoint;
    midpoint.reserve(coarse.triangles.size() * 2);
    const auto mid = [&](std::uint32_t a, std::uint32_t b) {
        auto [it, inserted] = midpoint.try_emplace(detail::edge_key(a, b), static_cast<std::uint32_t>(nodes.size()));
        if (inserted) {
            nodes.push_back({coarse.nodes[a].x + coarse.nodes[b].x, coarse.nodes[a].y + coarse.nodes[b].y});
            parents.push_back({std::min(a, b), std::max(a, b)});
        }
        return it->second;
    };
    std::vector<Triangle> tris;
    tris.reserve(coarse.triangles.size() * 4);
    for (const auto& t : coarse.triangles) {
        const auto m01 = mid(t[0], t[1]);
        const auto m12 = mid(t[1], t[2]);
        const auto m20 = mid(t[2], t[0]);
        tris.push_back({t[0], m01, m20});
        tris.push_back({m01, t[1], m12});
        tris.push_back({m20, m12, t[2]});
        tris.push_back({m01, m12, m20});
    }

    const auto perm = detail::lexicographic_renumbering(nodes);
    f.nodes.resize(nodes.size());
    r.parents.resize(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        f.nodes[perm[i]] = nodes[i];
        r.parents[perm[i]] = parents[i];
    }
    for (auto& t : tris)
        for (auto& v : t) v = perm[v];
    f.triangles = std::move(tris);
    r.coarse_to_fine.resize(coarse.nodes.size());
    for (std::uint32_t i = 0; i < coarse.nodes.size(); ++i) r.coarse_to_fine[i] = perm[i];
    return r;
}

inline Triangulation refine_uniform(const Triangulation& t) { return refine_with_parents(t).fine; }

/// Coefficients of the level-l nodal basis in terms of the level l+1 basis:
/// the node itself with weight 1 and each incident edge midpoint with 1/2.
struct Prolongation {
    std::vector<std::uint32_t> offsets;  // per coarse node, into entries
    std::vector<std::uint32_t> fine;
    std::vector<double> weight;
};

class GridHierarchy {
public:
    std::vector<Triangulation> levels;                     // coarsest first
    std::vector<std::vector<NodeParent>> parents;          // parents[l] describes level l+1
    std::vector<std::vector<std::uint32_t>> coarse_to_fine;// coarse_to_fine[l]: level l -> l+1
    std::vector<Prolongation> prolongations;               // prolongations[l]: level l -> l+1

    std::size_t num_levels() const { return levels.size(); }
    const Triangulation& finest() const { return levels.back(); }
    const Triangulation& coarsest() const { return levels.front(); }

    /// Index of a level-l node on the finest level.
    std::uint32_t to_finest(int level, std::uint32_t node) const {
        for (std::size_t l = static_cast<std::size_t>(level); l + 1 < levels.size(); ++l) node = coarse_to_fine[l][node];
        return node;
    }
};

inline constexpr std::size_t default_node_budget = 40'000'000;

/// Node count after `refinements` uniform refinements, from Euler-style
/// counting (nodes += edges, edges = 2 edges + 3 triangles, triangles *= 4).
inline double predicted_node_count(const Triangulation& base, int refinements) {
    double n = static_cast<double>(base.num_nodes());
    double t = static_cast<double>(base.num_triangles());
    std::unordered_map<std::uint64_t, int> edges;
    for (const auto& tri : base.triangles)
        for (int e = 0; e < 3; ++e) edges[detail::edge_key(tri[e], tri[(e + 1) % 3])]++;
    double e = static_cast<double>(edges.size());
    for (int k = 0; k < refinements; ++k) {
        n += e;
        e = 2.0 * e + 3.0 * t;
        t *= 4.0;
    }
    return n;
}

inline Prolongation build_prolongation(std::size_t coarse_nodes, const std::vector<NodeParent>& parents,
                                       const std::vector<std::uint32_t>& coarse_to_fine) {
    std::vector<std::vector<std::pair<std::uint32_t, double>>> cols(coarse_nodes);
    for (std::uint32_t i = 0; i < coarse_nodes; ++i) cols[i].push_back({coarse_to_fine[i], 1.0});
    for (std::uint32_t f = 0; f < parents.size(); ++f) {
        const auto& p = parents[f];
        if (p.is_node()) continue;
        cols[p.a].push_back({f, 0.5});
        cols[p.b].push_back({f, 0.5});
    }
    Prolongation pr;
    pr.offsets.reserve(coarse_nodes + 1);
    pr.offsets.push_back(0);
    for (auto& c : cols) {
        std::sort(c.begin(), c.end());
        for (const auto& [idx, w] : c) {
            pr.fine.push_back(idx);
            pr.weight.push_back(w);
        }
        pr.offsets.push_back(static_cast<std::uint32_t>(pr.fine.size()));
    }
    return pr;
}

inline GridHierarchy build_hierarchy(const Triangulation& base, int extra_levels,
                                     std::size_t node_budget = default_node_budget) {
    if (extra_levels < 0) throw std::invalid_argument("number of refinements must be >= 0");
    const double predicted = predicted_node_count(base, extra_levels);
    if (predicted > static_cast<double>(node_budget)) {
        throw std::length_error("finest level would have " + std::to_string(static_cast<long long>(predicted)) +
                                " nodes, exceeding the budget of " + std::to_string(node_budget));
    }
    GridHierarchy h;
    h.levels.push_back(base);
    h.levels.back().level = 0;
    for (int k = 0; k < extra_levels; ++k) {
        auto r = refine_with_parents(h.levels.back());
        h.prolongations.push_back(build_prolongation(h.levels.back().num_nodes(), r.parents, r.coarse_to_fine));
        h.levels.push_back(std::move(r.fine));
        h.parents.push_back(std::move(r.parents));
        h.coarse_to_fine.push_back(std::move(r.coarse_to_fine));
    }
    return h;
}

/// A coarse basis function sampled at the finest-level nodes of its support.
struct BasisFootprint {
    int level = 0;
    std::uint32_t node = 0;
    std::vector<std::uint32_t> fine;   // sorted finest-level node indices
    std::vector<double> coefficient;   // in (0, 1]
};

namespace detail {

/// Sparse workspace for repeatedly prolongating unit vectors.
class FootprintBuilder {
public:
    explicit FootprintBuilder(const GridHierarchy& h) : h_(h) {
        std::size_t n = 0;
        for (const auto& lvl : h.levels) n = std::max(n, lvl.num_nodes());
        dense_.assign(n, 0.0);
    }

    void build(int level, std::uint32_t node, std::vector<std::uint32_t>& idx, std::vector<double>& coef) {
        idx.assign(1, node);
        coef.assign(1, 1.0);
        for (std::size_t l = static_cast<std::size_t>(level); l + 1 < h_.levels.size(); ++l) {
            const auto& pr = h_.prolongations[l];
            touched_.clear();
            for (std::size_t k = 0; k < idx.size(); ++k) {
                for (auto e = pr.offsets[idx[k]]; e < pr.offsets[idx[k] + 1]; ++e) {
                    const auto f = pr.fine[e];
                    if (dense_[f] == 0.0) touched_.push_back(f);
                    dense_[f] += coef[k] * pr.weight[e];
                }
            }
            std::sort(touched_.begin(), touched_.end());
            idx.clear();
            coef.clear();
            for (auto f : touched_) {
                idx.push_back(f);
                coef.push_back(dense_[f]);
                dense_[f] = 0.0;
            }
        }
    }

private:
    const GridHierarchy& h_;
    std::vector<double> dense_;
    std::vector<std::uint32_t> touched_;
};

}  // namespace detail

inline BasisFootprint basis_footprint(const GridHierarchy& h, int level, std::uint32_t node) {
    if (level < 0 || static_cast<std::size_t>(level) >= h.num_levels())
        throw std::out_of_range("level " + std::to_string(level) + " outside hierarchy");
    if (node >= h.levels[static_cast<std::size_t>(level)].num_nodes())
        throw std::out_of_range("node " + std::to_string(node) + " outside level " + std::to_string(level));
    BasisFootprint fp;
    fp.level = level;
    fp.node = node;
    detail::FootprintBuilder builder(h);
    builder.build(level, node, fp.fine, fp.coefficient);
    return fp;
}

/// Footprints of every basis function on every non-finest level, stored flat.
class FootprintTable {
public:
    struct Level {
        std::vector<std::size_t> offsets;  // per node
        std::vector<std::uint32_t> fine;
        std::vector<double> coefficient;

        std::size_t size() const { return offsets.empty() ? 0 : offsets.size() - 1; }
    };

    explicit FootprintTable(const GridHierarchy& h) {
        detail::FootprintBuilder builder(h);
        std::vector<std::uint32_t> idx;
        std::vector<double> coef;
        levels_.resize(h.num_levels());
        for (std::size_t l = 0; l + 1 < h.num_levels(); ++l) {
            auto& lv = levels_[l];
            const auto n = h.levels[l].num_nodes();
            lv.offsets.reserve(n + 1);
            lv.offsets.push_back(0);
            for (std::uint32_t i = 0; i < n; ++i) {
                builder.build(static_cast<int>(l), i, idx, coef);
                lv.fine.insert(lv.fine.end(), idx.begin(), idx.end());
                lv.coefficient.insert(lv.coefficient.end(), coef.begin(), coef.end());
                lv.offsets.push_back(lv.fine.size());
            }
        }
        // The finest level is the identity and is not stored.
    }

    const Level& level(std::size_t l) const { return levels_[l]; }
    std::size_t num_levels() const { return levels_.size(); }

private:
    std::vector<Level> levels_;
};

}  // namespace vacseg
