#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "vacseg/imageio.hpp"

using namespace vacseg;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
    fs::create_directories(VACSEG_TEST_TMP);
    return (fs::path(VACSEG_TEST_TMP) / name).string();
}

void write_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out << bytes;
}

ImageData gradient(int w, int h, int c) {
    ImageData img(w, h, c);
    for (std::size_t k = 0; k < img.values.size(); ++k) img.values[k] = static_cast<double>(k % 257) / 256.0;
    return img;
}

}  // namespace

TEST(Pnm, GreyMaxvalMapsToOne) {
    const auto path = tmp_path("white.pgm");
    write_bytes(path, std::string("P5\n# comment\n2 1\n255\n") + '\xff' + '\x00');
    const auto img = load(path);
    EXPECT_EQ(img.width, 2);
    EXPECT_EQ(img.height, 1);
    EXPECT_EQ(img.channels, 1);
    EXPECT_EQ(img.values, (std::vector<double>{1.0, 0.0}));
}

TEST(Pnm, ColourSamples) {
    const auto path = tmp_path("rgb.ppm");
    write_bytes(path, std::string("P6 1 1 255\n") + '\x00' + '\x80' + '\xff');
    const auto img = load_pnm(path);
    EXPECT_EQ(img.channels, 3);
    EXPECT_EQ(img.values[0], 0.0);
    EXPECT_DOUBLE_EQ(img.values[1], 128.0 / 255.0);
    EXPECT_EQ(img.values[2], 1.0);
}

TEST(Pnm, RejectsCorruptInput) {
    const std::vector<std::pair<std::string, std::string>> cases = {
        {"ascii.pgm", "P2\n1 1\n255\n0\n"},
        {"truncated.pgm", "P5\n4 4\n255\n\x01\x02"},
        {"zero.pgm", "P5\n0 4\n255\n"},
        {"huge.pgm", "P5\n2000000000 2000000000\n255\n"},
        {"maxval.pgm", "P5\n1 1\n70000\n\x01"},
        {"over.pgm", std::string("P5\n1 1\n10\n") + '\x0b'},
        {"header.pgm", "P5\n1"},
    };
    for (const auto& [name, bytes] : cases) {
        const auto path = tmp_path(name);
        write_bytes(path, bytes);
        EXPECT_THROW(load(path), ImageIOError) << name;
    }
    EXPECT_THROW(load(tmp_path("does_not_exist.pgm")), ImageIOError);
    write_bytes(tmp_path("text.txt"), "hello");
    EXPECT_THROW(load(tmp_path("text.txt")), ImageIOError);
}

TEST(RoundTrip, AllFormatsAndDepths) {
    for (int c : {1, 3})
        for (int depth : {8, 16})
            for (const std::string ext : {"png", c == 1 ? "pgm" : "ppm"}) {
                const auto img = gradient(7, 5, c);
                const auto path = tmp_path("round." + std::to_string(c) + "." + std::to_string(depth) + "." + ext);
                save(path, img, depth);
                const auto back = load(path);
                ASSERT_EQ(back.width, 7);
                ASSERT_EQ(back.height, 5);
                ASSERT_EQ(back.channels, c);
                const double step = depth == 8 ? 255.0 : 65535.0;
                for (std::size_t k = 0; k < img.values.size(); ++k)
                    EXPECT_NEAR(back.values[k], img.values[k], 0.5 / step + 1e-12) << ext << " depth " << depth;
                // quantised values survive a second round trip exactly
                save(path, back, depth);
                EXPECT_EQ(load(path).values, back.values);
            }
}

TEST(RoundTrip, ClampsOutOfRange) {
    ImageData img(2, 1, 1);
    img.values = {-0.5, 1.5};
    const auto path = tmp_path("clamp.pgm");
    save(path, img);
    EXPECT_EQ(load(path).values, (std::vector<double>{0.0, 1.0}));
}

TEST(Save, RejectsBadRequests) {
    EXPECT_THROW(save(tmp_path("x.bmp"), ImageData(1, 1, 1)), ImageIOError);
    EXPECT_THROW(save(tmp_path("x.pgm"), ImageData(1, 1, 2)), ImageIOError);
    EXPECT_THROW(save(tmp_path("x.png"), ImageData(1, 1, 1), 12), ImageIOError);
}

TEST(Synth, CirclesRegionStatistics) {
    const auto s = synth_circles(128, {0.25, 0.95, 0.55, 0.75}, 0.1, 0.05, 7);
    EXPECT_EQ(s.regions, 5u);
    const double expected[5] = {0.1, 0.25, 0.95, 0.55, 0.75};
    std::vector<double> sum(5, 0.0), count(5, 0.0);
    for (std::size_t p = 0; p < s.labels.size(); ++p) {
        sum[s.labels[p]] += s.image.values[p];
        count[s.labels[p]] += 1.0;
        EXPECT_EQ(s.clean.values[p], expected[s.labels[p]]);
        EXPECT_LE(std::abs(s.noise[p]), 0.05 + 1e-15);
        EXPECT_DOUBLE_EQ(s.image.values[p], s.clean.values[p] + s.noise[p]);
    }
    for (int r = 0; r < 5; ++r) {
        ASSERT_GT(count[r], 100.0);
        EXPECT_NEAR(sum[r] / count[r], expected[r], 0.01) << "region " << r;
    }
    // the centre belongs to the innermost disc, the corner to the background
    EXPECT_EQ(s.labels[64 * 128 + 64], 4u);
    EXPECT_EQ(s.labels[0], 0u);
}

TEST(Synth, ZeroAmplitudeIsClean) {
    const auto s = synth_circles(32, {0.3}, 0.1, 0.0, 3);
    EXPECT_EQ(s.image.values, s.clean.values);
    for (double n : s.noise) EXPECT_EQ(n, 0.0);
}

TEST(Synth, DeterministicInSeed) {
    EXPECT_EQ(synth_circles(40, {0.5}, 0.1, 0.05, 1).image.values, synth_circles(40, {0.5}, 0.1, 0.05, 1).image.values);
    EXPECT_NE(synth_circles(40, {0.5}, 0.1, 0.05, 1).image.values, synth_circles(40, {0.5}, 0.1, 0.05, 2).image.values);
    EXPECT_EQ(synth_composite(40, 0.05, 4).image.values, synth_composite(40, 0.05, 4).image.values);
}

TEST(Synth, StepSignal) {
    const auto s = synth_step_signal(256, {0.2, 0.8}, 0.1, 5);
    EXPECT_EQ(s.image.width, 256);
    EXPECT_EQ(s.image.height, 1);
    EXPECT_EQ(s.regions, 2u);
    for (int x = 0; x < 256; ++x) EXPECT_EQ(s.labels[x], x < 128 ? 0u : 1u);
    // the segment mean of uniform noise stays within 3 amp / sqrt(L)
    for (int seg = 0; seg < 2; ++seg) {
        double mean = 0.0;
        for (int x = seg * 128; x < (seg + 1) * 128; ++x) mean += s.noise[x];
        mean /= 128.0;
        EXPECT_LE(std::abs(mean), 3.0 * 0.1 / std::sqrt(128.0));
    }
    const auto odd = synth_step_signal(5, {0.1, 0.5, 0.9}, 0.0);
    EXPECT_EQ(odd.labels, (std::vector<std::uint32_t>{0, 0, 1, 1, 2}));
}

TEST(Synth, CompositeHasAllRegions) {
    const auto s = synth_composite(128, 0.0, 0);
    std::vector<int> seen(5, 0);
    for (auto l : s.labels) ++seen[l];
    for (int r = 0; r < 5; ++r) EXPECT_GT(seen[r], 100) << "region " << r;
}

TEST(Synth, RejectsBadArguments) {
    EXPECT_THROW(synth_circles(0), std::invalid_argument);
    EXPECT_THROW(synth_circles(16, {}), std::invalid_argument);
    EXPECT_THROW(synth_circles(16, {1.2}), std::invalid_argument);
    EXPECT_THROW(synth_step_signal(0), std::invalid_argument);
}

TEST(NodeFieldImage, ShapeFollowsNodeGrid) {
    const auto t = build_pixel_grid(3, 2);
    std::vector<double> field(t.num_nodes() * 2, 0.25);
    const auto img = node_field_image(field, 2, t);
    EXPECT_EQ(img.width, 4);
    EXPECT_EQ(img.height, 3);
    EXPECT_THROW(node_field_image(field, 1, t), std::invalid_argument);
}
