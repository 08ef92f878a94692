#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <random>
#include <set>

#include "vacseg/fidelity.hpp"

using namespace vacseg;

namespace {

ImageData random_image(int w, int h, int c, std::uint64_t seed) {
    ImageData img(w, h, c);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (double& v : img.values) v = dist(rng);
    return img;
}

PhaseField random_field(std::size_t nodes, std::size_t N, std::uint64_t seed) {
    PhaseField u(nodes, N);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (std::size_t n = 0; n < nodes; ++n) {
        double s = 0.0;
        for (std::size_t i = 0; i < N; ++i) s += (u(n, i) = dist(rng));
        for (std::size_t i = 0; i < N; ++i) u(n, i) /= s;
    }
    return u;
}

double golden_section(const std::function<double(double)>& f, double lo, double hi) {
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - g * (b - a), d = a + g * (b - a);
    for (int it = 0; it < 200; ++it) {
        if (f(c) < f(d))
            b = d;
        else
            a = c;
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    return 0.5 * (a + b);
}

}  // namespace

TEST(Projection, SinglePixelEverywhere) {
    ImageData img(1, 1, 1, 0.42);
    const auto h = build_hierarchy(build_pixel_grid(1, 1), 3);
    for (auto mode : {ProjectionMode::by_node, ProjectionMode::by_simplex}) {
        const auto m = project_image(img, h, mode);
        EXPECT_EQ(m.sites(), mode == ProjectionMode::by_node ? h.finest().num_nodes() : h.finest().num_triangles());
        for (double v : m.values) EXPECT_EQ(v, 0.42);
    }
}

TEST(Projection, TwoPixelsBySimplex) {
    ImageData img(2, 1, 1);
    img.at(0, 0) = 0.2;
    img.at(0, 1) = 0.7;
    const auto h = build_hierarchy(build_pixel_grid(2, 1), 1);
    const auto& f = h.finest();
    const auto m = project_image(img, h, ProjectionMode::by_simplex);
    std::set<double> values;
    for (std::size_t t = 0; t < f.num_triangles(); ++t) {
        double bx = 0.0;
        for (auto v : f.triangles[t]) bx += f.x(v) / 3.0;
        EXPECT_EQ(m(t, 0), bx < 1.0 ? 0.2 : 0.7);
        values.insert(m(t, 0));
    }
    EXPECT_EQ(values, (std::set<double>{0.2, 0.7}));
}

TEST(Projection, ByNodeTieBreaksToSmallestRowColumn) {
    ImageData img(2, 2, 1);
    img.at(0, 0) = 0.1;
    img.at(0, 1) = 0.2;
    img.at(1, 0) = 0.3;
    img.at(1, 1) = 0.4;
    const auto h = build_hierarchy(build_pixel_grid(2, 2), 1);
    const auto& f = h.finest();
    const auto m = project_image(img, h, ProjectionMode::by_node);
    const auto value_at = [&](double x, double y) {
        for (std::size_t n = 0; n < f.num_nodes(); ++n)
            if (f.x(n) == x && f.y(n) == y) return m(n, 0);
        return -1.0;
    };
    EXPECT_EQ(value_at(1.0, 1.0), 0.1);  // shared by all four pixels
    EXPECT_EQ(value_at(1.0, 0.5), 0.1);  // between (0,0) and (0,1)
    EXPECT_EQ(value_at(1.5, 1.0), 0.2);  // between (0,1) and (1,1)
    EXPECT_EQ(value_at(0.5, 1.0), 0.1);
    EXPECT_EQ(value_at(1.5, 1.5), 0.4);  // pixel interior
    EXPECT_EQ(value_at(2.0, 2.0), 0.4);  // outer corner clamps
    EXPECT_EQ(value_at(0.0, 0.0), 0.1);
}

TEST(Projection, NoNewValues) {
    const auto img = random_image(5, 3, 2, 1);
    const auto h = build_hierarchy(build_pixel_grid(5, 3), 2);
    std::set<double> source(img.values.begin(), img.values.end());
    for (auto mode : {ProjectionMode::by_node, ProjectionMode::by_simplex}) {
        const auto m = project_image(img, h, mode);
        for (double v : m.values) EXPECT_TRUE(source.count(v));
        for (std::size_t s = 0; s < m.sites(); ++s)
            for (int c = 0; c < 2; ++c) EXPECT_EQ(m(s, c), img.values[m.pixel[s] * 2 + c]);
    }
}

TEST(Projection, DimensionMismatchRejected) {
    const auto h = build_hierarchy(build_pixel_grid(4, 4), 1);
    EXPECT_THROW(project_image(ImageData(4, 3, 1), h, ProjectionMode::by_node), std::invalid_argument);
}

TEST(RegionAverages, ConstantImage) {
    const auto h = build_hierarchy(build_pixel_grid(3, 3), 1);
    const auto M = assemble_lumped_mass(h.finest());
    const auto u = random_field(h.finest().num_nodes(), 3, 2);
    for (auto mode : {ProjectionMode::by_node, ProjectionMode::by_simplex}) {
        const auto m = project_image(ImageData(3, 3, 2, 0.6), h, mode);
        const auto c = region_averages(u, m, h.finest(), M);
        for (double v : c.values) EXPECT_NEAR(v, 0.6, 1e-14);
    }
}

TEST(RegionAverages, LeftHalfIndicator) {
    ImageData img(2, 1, 1);
    img.at(0, 0) = 0.25;
    img.at(0, 1) = 0.75;
    const auto h = build_hierarchy(build_pixel_grid(2, 1), 0);
    const auto& f = h.finest();
    const auto M = assemble_lumped_mass(f);
    const auto m = project_image(img, h, ProjectionMode::by_node);
    // u_0 is 1 on the nodes carrying the left value
    PhaseField u(f.num_nodes(), 2);
    for (std::size_t n = 0; n < f.num_nodes(); ++n) {
        const bool left = m(n, 0) == 0.25;
        u(n, 0) = left ? 1.0 : 0.0;
        u(n, 1) = left ? 0.0 : 1.0;
    }
    const auto c = region_averages(u, m, f, M);
    EXPECT_DOUBLE_EQ(c(0, 0), 0.25);
    EXPECT_DOUBLE_EQ(c(1, 0), 0.75);
}

TEST(RegionAverages, GlobalMeanDecomposition) {
    const auto img = random_image(4, 3, 3, 5);
    const auto h = build_hierarchy(build_pixel_grid(4, 3), 2);
    const auto M = assemble_lumped_mass(h.finest());
    const auto m = project_image(img, h, ProjectionMode::by_node);
    const auto u = random_field(h.finest().num_nodes(), 4, 6);
    const auto c = region_averages(u, m, h.finest(), M);
    for (int j = 0; j < 3; ++j) {
        double lhs = 0.0, rhs = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            double mass = 0.0;
            for (std::size_t n = 0; n < u.nodes(); ++n) mass += M[n] * u(n, i);
            lhs += mass * c(i, j);
        }
        for (std::size_t n = 0; n < u.nodes(); ++n) rhs += M[n] * m(n, j);
        EXPECT_NEAR(lhs, rhs, 1e-12);
    }
}

TEST(RegionAverages, MinimiseWeightedSquaresGoldenSection) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto img = random_image(3, 4, 1, 100 + seed);
        const auto h = build_hierarchy(build_pixel_grid(3, 4), 1);
        const auto& f = h.finest();
        const auto M = assemble_lumped_mass(f);
        const auto u = random_field(f.num_nodes(), 3, 200 + seed);
        for (auto mode : {ProjectionMode::by_node, ProjectionMode::by_simplex}) {
            const auto m = project_image(img, h, mode);
            const auto c = region_averages(u, m, f, M);
            for (std::size_t i = 0; i < 3; ++i) {
                // sum of u_i (I - c)^2 under the quadrature used for each mode
                const auto objective = [&](double cc) {
                    double s = 0.0;
                    if (mode == ProjectionMode::by_node) {
                        for (std::size_t n = 0; n < f.num_nodes(); ++n) s += M[n] * u(n, i) * (m(n, 0) - cc) * (m(n, 0) - cc);
                    } else {
                        for (std::size_t t = 0; t < f.num_triangles(); ++t) {
                            const auto& tri = f.triangles[t];
                            const double ui = (u(tri[0], i) + u(tri[1], i) + u(tri[2], i)) / 3.0;
                            s += f.area(tri) * ui * (m(t, 0) - cc) * (m(t, 0) - cc);
                        }
                    }
                    return s;
                };
                EXPECT_NEAR(c(i, 0), golden_section(objective, 0.0, 1.0), 1e-8);
                EXPECT_GE(c(i, 0), *std::min_element(img.values.begin(), img.values.end()));
                EXPECT_LE(c(i, 0), *std::max_element(img.values.begin(), img.values.end()));
            }
        }
    }
}

TEST(RegionAverages, VanishedComponentKeepsPrevious) {
    const auto img = random_image(2, 2, 1, 8);
    const auto h = build_hierarchy(build_pixel_grid(2, 2), 1);
    const auto M = assemble_lumped_mass(h.finest());
    const auto m = project_image(img, h, ProjectionMode::by_node);
    PhaseField u(h.finest().num_nodes(), 3);
    for (std::size_t n = 0; n < u.nodes(); ++n) {
        u(n, 0) = 0.5;
        u(n, 1) = 0.5;
    }
    RegionAverages prev(3, 1);
    prev(2, 0) = 0.123;
    const auto c = region_averages(u, m, h.finest(), M, &prev);
    EXPECT_EQ(c(2, 0), 0.123);
    const auto fresh = region_averages(u, m, h.finest(), M);
    EXPECT_NEAR(fresh(2, 0), fresh(0, 0), 1e-15);  // falls back to the global mean
}

TEST(RegionAverages, ModesAgreeForInteriorIndicators) {
    // A nodal indicator that is 1 exactly on the nodes strictly inside pixel 0
    // sees a single pixel value in both modes.
    ImageData img(2, 2, 1);
    img.values = {0.1, 0.4, 0.6, 0.9};
    const auto h = build_hierarchy(build_pixel_grid(2, 2), 3);
    const auto& f = h.finest();
    const auto M = assemble_lumped_mass(f);
    PhaseField u(f.num_nodes(), 2);
    for (std::size_t n = 0; n < f.num_nodes(); ++n) {
        const bool inside = f.x(n) > 0.0 && f.x(n) < 1.0 && f.y(n) > 0.0 && f.y(n) < 1.0;
        u(n, 0) = inside ? 1.0 : 0.0;
        u(n, 1) = inside ? 0.0 : 1.0;
    }
    const auto cn = region_averages(u, project_image(img, h, ProjectionMode::by_node), f, M);
    const auto cs = region_averages(u, project_image(img, h, ProjectionMode::by_simplex), f, M);
    EXPECT_NEAR(cn(0, 0), 0.1, 1e-15);
    EXPECT_NEAR(cs(0, 0), 0.1, 1e-15);
}

TEST(Fitting, Examples) {
    MeshImage m;
    m.channels = 1;
    m.values = {0.9};
    RegionAverages c(2, 1);
    c(0, 0) = 0.1;
    c(1, 0) = 0.9;
    const auto f = fitting_values(m, c);
    EXPECT_NEAR(f(0, 0), 0.64, 1e-15);
    EXPECT_EQ(f(0, 1), 0.0);

    MeshImage rgb;
    rgb.channels = 3;
    rgb.values = {1.0, 0.0, 0.0};
    RegionAverages zero(1, 3);
    EXPECT_EQ(fitting_values(rgb, zero)(0, 0), 1.0);
}

TEST(Fitting, ChannelPermutationInvariant) {
    const auto img = random_image(3, 3, 3, 21);
    const auto h = build_hierarchy(build_pixel_grid(3, 3), 1);
    const auto m = project_image(img, h, ProjectionMode::by_node);
    RegionAverages c(2, 3);
    c.values = {0.1, 0.5, 0.9, 0.3, 0.2, 0.7};
    auto mp = m;
    auto cp = c;
    for (std::size_t s = 0; s < m.sites(); ++s) std::swap(mp.values[s * 3], mp.values[s * 3 + 2]);
    for (std::size_t i = 0; i < 2; ++i) std::swap(cp.values[i * 3], cp.values[i * 3 + 2]);
    const auto f = fitting_values(m, c), fp = fitting_values(mp, cp);
    for (std::size_t k = 0; k < f.values.size(); ++k) EXPECT_NEAR(f.values[k], fp.values[k], 1e-15);
}

TEST(Fitting, LoadMatchesQuadrature) {
    const auto img = random_image(3, 2, 1, 4);
    const auto h = build_hierarchy(build_pixel_grid(3, 2), 2);
    const auto& f = h.finest();
    const auto M = assemble_lumped_mass(f);
    RegionAverages c(2, 1);
    c.values = {0.2, 0.8};
    const auto by_node = fitting_load(fitting_values(project_image(img, h, ProjectionMode::by_node), c), f, M);
    for (std::size_t n = 0; n < f.num_nodes(); ++n) {
        const double I = img.values[node_pixel(f, n)];
        EXPECT_NEAR(by_node[n * 2 + 1], M[n] * (I - 0.8) * (I - 0.8), 1e-15);
    }
    const auto ms = project_image(img, h, ProjectionMode::by_simplex);
    const auto by_simplex = fitting_load(fitting_values(ms, c), f, M);
    // integral of F over the domain is the load summed over nodes
    double total = 0.0, direct = 0.0;
    for (std::size_t n = 0; n < f.num_nodes(); ++n) total += by_simplex[n * 2];
    for (std::size_t t = 0; t < f.num_triangles(); ++t) direct += f.area(f.triangles[t]) * (ms(t, 0) - 0.2) * (ms(t, 0) - 0.2);
    EXPECT_NEAR(total, direct, 1e-13);
}
