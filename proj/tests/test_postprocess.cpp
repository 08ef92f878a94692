#include <gtest/gtest.h>

#include <random>

#include "vacseg/imageio.hpp"
#include "vacseg/postprocess.hpp"

using namespace vacseg;

namespace {

PhaseField random_field(std::size_t nodes, std::size_t N, std::uint64_t seed) {
    PhaseField u(nodes, N);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(0.0, 1.0);
    for (std::size_t k = 0; k < nodes; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < N; ++i) s += (u(k, i) = d(rng));
        for (std::size_t i = 0; i < N; ++i) u(k, i) /= s;
    }
    return u;
}

RegionAverages random_averages(std::size_t N, int C, std::uint64_t seed) {
    RegionAverages c(N, C);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(0.0, 1.0);
    for (double& v : c.values) v = d(rng);
    return c;
}

}  // namespace

TEST(Composite, Examples) {
    PhaseField u(2, 2);
    u(0, 0) = 0.5;
    u(0, 1) = 0.5;
    u(1, 0) = 1.0;
    RegionAverages c(2, 1);
    c(0, 0) = 0.2;
    c(1, 0) = 0.8;
    const auto out = composite(u, c);
    EXPECT_DOUBLE_EQ(out[0], 0.5);
    EXPECT_DOUBLE_EQ(out[1], 0.2);
    EXPECT_THROW(composite(u, RegionAverages(3, 1)), std::invalid_argument);
}

TEST(Composite, LinearInPhaseField) {
    const auto c = random_averages(3, 3, 1);
    const auto a = random_field(20, 3, 2), b = random_field(20, 3, 3);
    PhaseField mix(20, 3);
    for (std::size_t k = 0; k < mix.data().size(); ++k) mix.data()[k] = 0.3 * a.data()[k] + 0.7 * b.data()[k];
    const auto ca = composite(a, c), cb = composite(b, c), cm = composite(mix, c);
    for (std::size_t k = 0; k < cm.size(); ++k) EXPECT_NEAR(cm[k], 0.3 * ca[k] + 0.7 * cb[k], 1e-15);
}

TEST(Composite, StaysInConvexHullOfAverages) {
    const auto c = random_averages(4, 1, 4);
    const auto u = random_field(200, 4, 5);
    const auto [lo, hi] = std::minmax_element(c.values.begin(), c.values.end());
    for (double v : composite(u, c)) {
        EXPECT_GE(v, *lo - 1e-15);
        EXPECT_LE(v, *hi + 1e-15);
    }
}

TEST(Rounding, ArgmaxWithSmallestIndexTie) {
    PhaseField u(3, 3);
    u(0, 0) = 0.2, u(0, 1) = 0.5, u(0, 2) = 0.3;
    u(1, 0) = 0.4, u(1, 1) = 0.4, u(1, 2) = 0.2;
    u(2, 0) = 0.0, u(2, 1) = 0.5, u(2, 2) = 0.5;
    const auto r = round_components(u);
    EXPECT_EQ(r.labels, (std::vector<std::uint32_t>{1, 0, 1}));
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(r.one_hot(k, i), i == r.labels[k] ? 1.0 : 0.0);
}

TEST(Rounding, Idempotent) {
    const auto u = random_field(100, 5, 6);
    const auto once = round_components(u);
    const auto twice = round_components(once.one_hot);
    EXPECT_EQ(once.labels, twice.labels);
    EXPECT_EQ(once.one_hot.data(), twice.one_hot.data());
}

TEST(Remainder, Examples) {
    const std::vector<double> input = {0.5, 0.2, 0.9}, rounded = {0.2, 0.2, 1.0};
    const auto r = remainder(input, rounded, 1);
    EXPECT_NEAR(r.values[0], 0.3, 1e-15);
    EXPECT_EQ(r.values[1], 0.0);
    EXPECT_NEAR(r.values[2], -0.1, 1e-15);
    EXPECT_NEAR(r.min, -0.1, 1e-15);
    EXPECT_NEAR(r.max, 0.3, 1e-15);
    EXPECT_NEAR(r.norms.linf[0], 0.3, 1e-15);
    EXPECT_NEAR(r.norms.l2[0], std::sqrt((0.09 + 0.01) / 3.0), 1e-15);
    const std::vector<double> w = {1.0, 0.0, 0.0};
    EXPECT_NEAR(remainder(input, rounded, 1, w).norms.l2[0], 0.3, 1e-15);
    EXPECT_THROW(remainder(input, std::vector<double>{0.0}, 1), std::invalid_argument);
}

TEST(Postprocess, ExactPiecewiseConstantReconstruction) {
    const auto s = synth_circles(8, {0.7}, 0.2, 0.0, 0);
    const auto h = build_hierarchy(build_pixel_grid(8, 8), 1);
    const auto& fine = h.finest();
    const auto m = project_image(s.image, h, ProjectionMode::by_node);
    const auto M = assemble_lumped_mass(fine);
    const auto truth = project_labels(s.labels, fine);
    PhaseField u(fine.num_nodes(), 2);
    for (std::size_t k = 0; k < u.nodes(); ++k) u(k, 1 - truth[k]) = 1.0;  // components swapped on purpose
    RegionAverages c(2, 1);
    c(0, 0) = 0.7;
    c(1, 0) = 0.2;
    const auto res = postprocess(u, c, m, M);
    for (double v : res.remainder.values) EXPECT_NEAR(v, 0.0, 1e-15);
    EXPECT_EQ(res.composite, res.rounded_composite);
    const auto metrics = segmentation_errors(res, m, M, truth, s.regions);
    ASSERT_TRUE(metrics.misclassification.has_value());
    EXPECT_EQ(*metrics.misclassification, 0.0);
    EXPECT_EQ(metrics.component_to_region, (std::vector<std::uint32_t>{1, 0}));
    EXPECT_NEAR(metrics.composite_l2[0], 0.0, 1e-15);
    EXPECT_FALSE(segmentation_errors(res, m, M).misclassification.has_value());
}

TEST(Postprocess, MisclassificationCountsWrongNodes) {
    const std::vector<std::uint32_t> truth = {0, 0, 1, 1, 2, 2, 2, 2};
    SegmentationResult res;
    res.labels = {2, 2, 0, 1, 1, 1, 1, 1};
    res.averages = RegionAverages(3, 1);
    res.composite.assign(8, 0.0);
    res.rounded_composite.assign(8, 0.0);
    MeshImage m;
    m.values.assign(8, 0.0);
    DiagonalMatrix M;
    M.entries.assign(8, 1.0);
    const auto metrics = segmentation_errors(res, m, M, truth, 3);
    EXPECT_EQ(metrics.component_to_region, (std::vector<std::uint32_t>{1, 2, 0}));
    EXPECT_DOUBLE_EQ(*metrics.misclassification, 1.0 / 8.0);
}

TEST(Downsample, AveragesOwnedNodes) {
    const auto h = build_hierarchy(build_pixel_grid(2, 1), 1);
    const auto& fine = h.finest();
    std::vector<double> field(fine.num_nodes());
    for (std::size_t n = 0; n < field.size(); ++n) field[n] = fine.x(n);
    const auto px = downsample_to_pixels(field, 1, fine);
    ASSERT_EQ(px.size(), 2u);
    // pixel 0 owns x in {0, 0.5, 1}, pixel 1 owns x in {1.5, 2}
    EXPECT_NEAR(px[0], 0.5, 1e-15);
    EXPECT_NEAR(px[1], 1.75, 1e-15);
}

TEST(LabelBoundary, RadiusIsCentreToCentre) {
    // 5x1 strip, label change between columns 2 and 3
    const std::vector<std::uint32_t> labels = {0, 0, 0, 1, 1};
    const auto r1 = near_label_boundary(labels, 5, 1, 1.0);
    EXPECT_EQ(r1, (std::vector<bool>{false, false, true, true, false}));
    const auto r2 = near_label_boundary(labels, 5, 1, 2.0);
    EXPECT_EQ(r2, (std::vector<bool>{false, true, true, true, true}));
    const auto r0 = near_label_boundary(labels, 5, 1, 0.5);
    EXPECT_EQ(r0, std::vector<bool>(5, false));
    EXPECT_THROW(near_label_boundary(labels, 4, 1, 1.0), std::invalid_argument);
}

TEST(LabelBoundary, DiagonalNeighbourNeedsSqrtTwo) {
    const std::vector<std::uint32_t> labels = {0, 0, 0, 0, 0, 0, 0, 0, 1};
    EXPECT_FALSE(near_label_boundary(labels, 3, 3, 1.0)[4]);
    EXPECT_TRUE(near_label_boundary(labels, 3, 3, 1.5)[4]);
}
