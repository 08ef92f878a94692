#pragma once

// Raster input/output (binary PGM/PPM, PNG) and synthetic test images.

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vacseg/fidelity.hpp"

namespace vacseg {

class ImageIOError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline constexpr std::uint64_t max_image_pixels = 1ull << 28;

inline void check_dimensions(long long w, long long h, const std::string& path) {
    if (w < 1 || h < 1) throw ImageIOError(path + ": invalid dimensions");
    if (static_cast<unsigned long long>(w) * static_cast<unsigned long long>(h) > max_image_pixels)
        throw ImageIOError(path + ": image dimensions overflow the supported size");
}

inline std::string extension(const std::string& path) {
    const auto dot = path.find_last_of('.');
    if (dot == std::string::npos) return {};
    std::string ext = path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext;
}

/// Next whitespace-delimited header token, skipping '#' comments.
inline std::string pnm_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {}
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

inline long long pnm_number(std::istream& in, const std::string& path) {
    const auto tok = pnm_token(in);
    if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
        throw ImageIOError(path + ": corrupt PNM header");
    if (tok.size() > 9) throw ImageIOError(path + ": image dimensions overflow the supported size");
    return std::stoll(tok);
}

inline std::uint16_t quantize(double v, unsigned maxval) {
    return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
}

}  // namespace detail

inline ImageData load_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageIOError(path + ": cannot open");
    const auto magic = detail::pnm_token(in);
    int channels;
    if (magic == "P5")
        channels = 1;
    else if (magic == "P6")
        channels = 3;
    else
        throw ImageIOError(path + ": unsupported PNM variant '" + magic + "' (expected P5 or P6)");
    const long long w = detail::pnm_number(in, path);
    const long long h = detail::pnm_number(in, path);
    const long long maxval = detail::pnm_number(in, path);
    detail::check_dimensions(w, h, path);
    if (maxval < 1 || maxval > 65535) throw ImageIOError(path + ": invalid maxval");
    ImageData img(static_cast<int>(w), static_cast<int>(h), channels);
    const std::size_t samples = img.values.size();
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(samples * static_cast<std::size_t>(bytes));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw ImageIOError(path + ": truncated pixel data");
    for (std::size_t s = 0; s < samples; ++s) {
        const unsigned v = bytes == 2 ? (static_cast<unsigned>(raw[2 * s]) << 8) | raw[2 * s + 1] : raw[s];
        if (v > static_cast<unsigned>(maxval)) throw ImageIOError(path + ": sample exceeds maxval");
        img.values[s] = static_cast<double>(v) / static_cast<double>(maxval);
    }
    return img;
}

inline void save_pnm(const std::string& path, const ImageData& img, int bit_depth = 8) {
    if (img.channels != 1 && img.channels != 3) throw ImageIOError(path + ": PNM needs 1 or 3 channels");
    if (bit_depth != 8 && bit_depth != 16) throw ImageIOError(path + ": bit depth must be 8 or 16");
    const unsigned maxval = bit_depth == 8 ? 255u : 65535u;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageIOError(path + ": cannot open for writing");
    out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << '\n' << maxval << '\n';
    std::vector<unsigned char> raw;
    raw.reserve(img.values.size() * (bit_depth / 8));
    for (double v : img.values) {
        const auto q = detail::quantize(v, maxval);
        if (bit_depth == 16) raw.push_back(static_cast<unsigned char>(q >> 8));
        raw.push_back(static_cast<unsigned char>(q & 0xff));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw ImageIOError(path + ": write failed");
}

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void png_error_handler(png_structp png, png_const_charp msg) {
    auto* err = static_cast<std::string*>(png_get_error_ptr(png));
    if (err) *err = msg;
    png_longjmp(png, 1);
}
inline void png_warning_handler(png_structp, png_const_charp) {}

}  // namespace detail

inline ImageData load_png(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw ImageIOError(path + ": cannot open");
    std::array<unsigned char, 8> sig{};
    if (std::fread(sig.data(), 1, 8, fp.get()) != 8 || png_sig_cmp(sig.data(), 0, 8) != 0)
        throw ImageIOError(path + ": not a PNG file");

    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_handler, detail::png_warning_handler);
    if (!png) throw ImageIOError(path + ": libpng initialisation failed");
    png_infop info = png_create_info_struct(png);
    ImageData img;
    std::vector<unsigned char> buffer;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageIOError(path + ": corrupt PNG (" + err + ")");
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const auto w = png_get_image_width(png, info);
    const auto h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (w == 0 || h == 0 || static_cast<unsigned long long>(w) * h > detail::max_image_pixels) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageIOError(path + ": image dimensions overflow the supported size");
    }
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if ((color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    const bool transparency = png_get_valid(png, info, PNG_INFO_tRNS) != 0;
    if (transparency) png_set_tRNS_to_alpha(png);
    if ((color & PNG_COLOR_MASK_ALPHA) || transparency) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int channels = png_get_channels(png, info);
    const int out_depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    buffer.resize(rowbytes * h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = buffer.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (channels != 1 && channels != 3) throw ImageIOError(path + ": unsupported PNG channel layout");
    img = ImageData(static_cast<int>(w), static_cast<int>(h), channels);
    const double maxval = out_depth == 16 ? 65535.0 : 255.0;
    for (png_uint_32 y = 0; y < h; ++y)
        for (std::size_t s = 0; s < static_cast<std::size_t>(w) * channels; ++s) {
            const unsigned v = out_depth == 16 ? (static_cast<unsigned>(rows[y][2 * s]) << 8) | rows[y][2 * s + 1] : rows[y][s];
            img.values[y * static_cast<std::size_t>(w) * channels + s] = v / maxval;
        }
    return img;
}

inline void save_png(const std::string& path, const ImageData& img, int bit_depth = 8) {
    if (img.channels != 1 && img.channels != 3) throw ImageIOError(path + ": PNG output needs 1 or 3 channels");
    if (bit_depth != 8 && bit_depth != 16) throw ImageIOError(path + ": bit depth must be 8 or 16");
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw ImageIOError(path + ": cannot open for writing");
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_handler, detail::png_warning_handler);
    if (!png) throw ImageIOError(path + ": libpng initialisation failed");
    png_infop info = png_create_info_struct(png);
    const unsigned maxval = bit_depth == 8 ? 255u : 65535u;
    const std::size_t rowbytes = static_cast<std::size_t>(img.width) * img.channels * (bit_depth / 8);
    std::vector<unsigned char> buffer(rowbytes * img.height);
    for (std::size_t s = 0; s < img.values.size(); ++s) {
        const auto q = detail::quantize(img.values[s], maxval);
        if (bit_depth == 16) {
            buffer[2 * s] = static_cast<unsigned char>(q >> 8);
            buffer[2 * s + 1] = static_cast<unsigned char>(q & 0xff);
        } else {
            buffer[s] = static_cast<unsigned char>(q);
        }
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) rows[y] = buffer.data() + static_cast<std::size_t>(y) * rowbytes;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ImageIOError(path + ": PNG write failed (" + err + ")");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), bit_depth,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

/// Load by content: PNG signature or P5/P6 magic.
inline ImageData load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageIOError(path + ": cannot open");
    std::array<char, 2> head{};
    in.read(head.data(), 2);
    if (in.gcount() == 2 && static_cast<unsigned char>(head[0]) == 0x89 && head[1] == 'P') return load_png(path);
    if (in.gcount() == 2 && head[0] == 'P') return load_pnm(path);
    throw ImageIOError(path + ": unsupported format (expected PGM, PPM or PNG)");
}

/// Save by extension: .png, or .pgm/.ppm/.pnm (binary).
inline void save(const std::string& path, const ImageData& img, int bit_depth = 8) {
    const auto ext = detail::extension(path);
    if (ext == "png") return save_png(path, img, bit_depth);
    if (ext == "pgm" || ext == "ppm" || ext == "pnm") return save_pnm(path, img, bit_depth);
    throw ImageIOError(path + ": unsupported output extension");
}

// ---------------------------------------------------------------------------
// Synthetic inputs

struct SynthImage {
    ImageData image;
    ImageData clean;
    std::vector<std::uint32_t> labels;  // per pixel, region index
    std::vector<double> noise;          // image - clean, per sample
    std::size_t regions = 0;
};

namespace detail {

/// Uniform in [-amp, amp], portable given the 64-bit engine output.
inline double symmetric_noise(std::mt19937_64& rng, double amp) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return amp * (2.0 * u - 1.0);
}

inline void add_noise(SynthImage& s, double amp, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    s.image = s.clean;
    s.noise.assign(s.image.values.size(), 0.0);
    for (std::size_t k = 0; k < s.image.values.size(); ++k) {
        const double v = amp > 0.0 ? std::clamp(s.clean.values[k] + symmetric_noise(rng, amp), 0.0, 1.0) : s.clean.values[k];
        s.image.values[k] = v;
        s.noise[k] = v - s.clean.values[k];
    }
}

inline void check_levels(const std::vector<double>& levels) {
    if (levels.empty()) throw std::invalid_argument("at least one intensity level is required");
    for (double v : levels)
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("intensity levels must lie in [0, 1]");
}

}  // namespace detail

inline constexpr double circles_outer_radius_fraction = 0.45;

/// Concentric annuli of equal radial width centred in a size x size frame.
/// Region 0 is the background; region k >= 1 takes levels[k - 1], outermost first.
inline SynthImage synth_circles(int size, const std::vector<double>& levels = {0.25, 0.95, 0.55, 0.75},
                                double background = 0.1, double noise_amp = 0.05, std::uint64_t seed = 0,
                                double outer_radius_fraction = circles_outer_radius_fraction) {
    if (size < 1) throw std::invalid_argument("size must be positive");
    detail::check_levels(levels);
    detail::check_levels({background});
    SynthImage s;
    s.clean = ImageData(size, size, 1);
    s.labels.resize(static_cast<std::size_t>(size) * size);
    s.regions = levels.size() + 1;
    const double R = outer_radius_fraction * size;
    const double ring = R / static_cast<double>(levels.size());
    const double c = 0.5 * size;
    for (int row = 0; row < size; ++row)
        for (int col = 0; col < size; ++col) {
            const double r = std::hypot(col + 0.5 - c, row + 0.5 - c);
            std::uint32_t label = 0;
            if (r <= R) {
                const double ring_from_center = std::clamp(std::ceil(r / ring) - 1.0, 0.0, static_cast<double>(levels.size() - 1));
                label = static_cast<std::uint32_t>(levels.size() - static_cast<std::size_t>(ring_from_center));
            }
            s.labels[static_cast<std::size_t>(row) * size + col] = label;
            s.clean.at(row, col) = label == 0 ? background : levels[label - 1];
        }
    detail::add_noise(s, noise_amp, seed);
    return s;
}

/// 1 x length strip of equal-length constant segments.
inline SynthImage synth_step_signal(int length, const std::vector<double>& levels = {0.2, 0.8}, double noise_amp = 0.1,
                                    std::uint64_t seed = 0) {
    if (length < 1) throw std::invalid_argument("length must be positive");
    detail::check_levels(levels);
    SynthImage s;
    s.clean = ImageData(length, 1, 1);
    s.labels.resize(static_cast<std::size_t>(length));
    s.regions = levels.size();
    for (int x = 0; x < length; ++x) {
        const auto seg = std::min<std::size_t>(levels.size() - 1, static_cast<std::size_t>(x) * levels.size() / length);
        s.labels[x] = static_cast<std::uint32_t>(seg);
        s.clean.at(0, x) = levels[seg];
    }
    detail::add_noise(s, noise_amp, seed);
    return s;
}

/// Overlapping geometric primitives (rectangle, disc, triangle) over a
/// chequered background. Regions: 0/1 chequer squares, 2 rectangle, 3 disc,
/// 4 triangle; later primitives overwrite earlier ones.
inline SynthImage synth_composite(int size, double noise_amp = 0.05, std::uint64_t seed = 0, int checks = 8) {
    if (size < 1) throw std::invalid_argument("size must be positive");
    if (checks < 1) throw std::invalid_argument("checks must be positive");
    const std::array<double, 5> level = {0.15, 0.35, 0.6, 0.85, 0.95};
    SynthImage s;
    s.clean = ImageData(size, size, 1);
    s.labels.resize(static_cast<std::size_t>(size) * size);
    s.regions = level.size();
    const double S = size;
    for (int row = 0; row < size; ++row)
        for (int col = 0; col < size; ++col) {
            const double x = (col + 0.5) / S, y = (row + 0.5) / S;
            std::uint32_t label = ((col * checks / size) + (row * checks / size)) % 2;
            if (x > 0.15 && x < 0.6 && y > 0.2 && y < 0.55) label = 2;
            if (std::hypot(x - 0.62, y - 0.6) < 0.22) label = 3;
            // triangle with vertices (0.2,0.9), (0.5,0.45), (0.55,0.9)
            const auto side = [&](double ax, double ay, double bx, double by) { return (bx - ax) * (y - ay) - (by - ay) * (x - ax); };
            const double d1 = side(0.2, 0.9, 0.5, 0.45), d2 = side(0.5, 0.45, 0.55, 0.9), d3 = side(0.55, 0.9, 0.2, 0.9);
            if ((d1 < 0 && d2 < 0 && d3 < 0) || (d1 > 0 && d2 > 0 && d3 > 0)) label = 4;
            s.labels[static_cast<std::size_t>(row) * size + col] = label;
            s.clean.at(row, col) = level[label];
        }
    detail::add_noise(s, noise_amp, seed);
    return s;
}

/// Pixel labels carried to the finest nodes with the by-node tie rule.
inline std::vector<std::uint32_t> project_labels(const std::vector<std::uint32_t>& pixel_labels, const Triangulation& fine) {
    std::vector<std::uint32_t> out(fine.num_nodes());
    for (std::size_t n = 0; n < fine.num_nodes(); ++n) out[n] = pixel_labels[node_pixel(fine, n)];
    return out;
}

/// Node field on a structured finest grid as a raster with one pixel per node.
inline ImageData node_field_image(const std::vector<double>& field, int channels, const Triangulation& fine) {
    const auto cols = static_cast<int>(fine.grid_cols());
    const auto rows = static_cast<int>(fine.grid_rows());
    if (static_cast<std::size_t>(cols) * rows * channels != field.size())
        throw std::invalid_argument("field does not match the node grid");
    ImageData img(cols, rows, channels);
    img.values = field;
    return img;
}

}  // namespace vacseg
