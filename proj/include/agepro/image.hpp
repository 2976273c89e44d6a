#pragma once

#include <agepro/error.hpp>

#include <Eigen/Dense>
#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace agepro {

/// 8-bit interleaved RGB raster as decoded from disk.
struct Rgb8Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // row-major, 3 channels per pixel

    Rgb8Image() = default;
    Rgb8Image(int w, int h) : width(w), height(h), data(std::size_t(w) * h * 3, 0) {}

    std::uint8_t& at(int x, int y, int c) { return data[(std::size_t(y) * width + x) * 3 + c]; }
    std::uint8_t at(int x, int y, int c) const { return data[(std::size_t(y) * width + x) * 3 + c]; }
    bool operator==(const Rgb8Image&) const = default;
};

/// Real-valued RGB raster, channels nominally in [0,1]. The pixel buffer is
/// an Eigen vector in the same interleaved layout as Rgb8Image, so a raster
/// doubles as a face vector without copying.
struct Image {
    int width = 0;
    int height = 0;
    Eigen::VectorXd pixels;

    Image() = default;
    Image(int w, int h) : width(w), height(h), pixels(Eigen::VectorXd::Zero(Eigen::Index(w) * h * 3)) {}
    Image(int w, int h, Eigen::VectorXd values) : width(w), height(h), pixels(std::move(values)) {
        if (pixels.size() != Eigen::Index(w) * h * 3)
            throw ShapeError("pixel vector length does not match raster size");
    }

    Eigen::Index size() const { return pixels.size(); }
    Eigen::Index index(int x, int y, int c) const { return (Eigen::Index(y) * width + x) * 3 + c; }
    double& at(int x, int y, int c) { return pixels[index(x, y, c)]; }
    double at(int x, int y, int c) const { return pixels[index(x, y, c)]; }
    bool same_frame(const Image& o) const { return width == o.width && height == o.height; }
};

inline Image to_real(const Rgb8Image& img) {
    Image out(img.width, img.height);
    for (std::size_t i = 0; i < img.data.size(); ++i) out.pixels[Eigen::Index(i)] = img.data[i] / 255.0;
    return out;
}

/// Clamps to [0,1] and rounds to the nearest 8-bit level.
inline Rgb8Image to_rgb8(const Image& img) {
    Rgb8Image out(img.width, img.height);
    for (Eigen::Index i = 0; i < img.pixels.size(); ++i) {
        const double v = std::clamp(img.pixels[i], 0.0, 1.0);
        out.data[std::size_t(i)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Rgb8Image decode_png(const std::vector<std::uint8_t>& bytes, const std::string& name) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size()))
        throw IoError("cannot decode PNG " + name + ": " + png.message);
    png.format = PNG_FORMAT_RGB;  // gray input is replicated into all channels
    Rgb8Image out(int(png.width), int(png.height));
    if (!png_image_finish_read(&png, nullptr, out.data.data(), 0, nullptr)) {
        png_image_free(&png);
        throw IoError("cannot decode PNG " + name + ": " + png.message);
    }
    return out;
}

class PnmReader {
public:
    PnmReader(const std::vector<std::uint8_t>& bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

    Rgb8Image read() {
        if (bytes_.size() < 2 || bytes_[0] != 'P') fail("missing netpbm magic");
        const char kind = char(bytes_[1]);
        pos_ = 2;
        if (kind != '2' && kind != '3' && kind != '5' && kind != '6') fail("unsupported netpbm variant");
        const bool color = kind == '3' || kind == '6';
        const bool binary = kind == '5' || kind == '6';
        const long w = next_int(), h = next_int(), maxval = next_int();
        if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) fail("bad header (only 8-bit channels are supported)");
        Rgb8Image out{int(w), int(h)};
        const std::size_t count = std::size_t(w) * std::size_t(h) * (color ? 3 : 1);
        std::vector<long> samples(count);
        if (binary) {
            ++pos_;  // single whitespace byte after maxval
            if (bytes_.size() < pos_ + count) fail("truncated pixel data");
            for (std::size_t i = 0; i < count; ++i) samples[i] = bytes_[pos_ + i];
        } else {
            for (auto& s : samples) s = next_int();
        }
        for (std::size_t p = 0; p < std::size_t(w) * std::size_t(h); ++p) {
            for (int c = 0; c < 3; ++c) {
                const long v = color ? samples[p * 3 + c] : samples[p];
                if (v > maxval) fail("sample exceeds maxval");
                out.data[p * 3 + c] = std::uint8_t(maxval == 255 ? v : (v * 255 + maxval / 2) / maxval);
            }
        }
        return out;
    }

private:
    [[noreturn]] void fail(const std::string& why) const { throw IoError("cannot decode " + name_ + ": " + why); }

    long next_int() {
        for (;;) {
            while (pos_ < bytes_.size() && std::isspace(bytes_[pos_])) ++pos_;
            if (pos_ < bytes_.size() && bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
                continue;
            }
            break;
        }
        if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) fail("expected integer");
        long v = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            v = v * 10 + (bytes_[pos_] - '0');
            if (v > 1'000'000'000) fail("integer overflow");
            ++pos_;
        }
        return v;
    }

    const std::vector<std::uint8_t>& bytes_;
    std::string name_;
    std::size_t pos_ = 0;
};

}  // namespace detail

/// Decodes PNG or binary/ASCII PGM/PPM into 8-bit RGB. Grayscale sources are
/// promoted by channel replication.
inline Rgb8Image read_image(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    static constexpr std::uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    if (bytes.size() >= 8 && std::equal(std::begin(png_sig), std::end(png_sig), bytes.begin()))
        return detail::decode_png(bytes, path.string());
    if (!bytes.empty() && bytes[0] == 'P') return detail::PnmReader(bytes, path.string()).read();
    throw IoError("unrecognized image format: " + path.string());
}

inline void write_png(const std::filesystem::path& path, const Rgb8Image& img) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = png_uint_32(img.width);
    png.height = png_uint_32(img.height);
    png.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&png, path.string().c_str(), 0, img.data.data(), 0, nullptr))
        throw IoError("cannot write PNG " + path.string() + ": " + png.message);
}

/// Binary PPM (P6).
inline void write_ppm(const std::filesystem::path& path, const Rgb8Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.data.data()), std::streamsize(img.data.size()));
    if (!out) throw IoError("cannot write " + path.string());
}

/// Binary PGM (P5) from the channel mean.
inline void write_pgm(const std::filesystem::path& path, const Rgb8Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    for (std::size_t p = 0; p < std::size_t(img.width) * img.height; ++p) {
        const int sum = img.data[p * 3] + img.data[p * 3 + 1] + img.data[p * 3 + 2];
        out.put(char((sum + 1) / 3));
    }
    if (!out) throw IoError("cannot write " + path.string());
}

/// Chooses the encoder from the extension (.png, .ppm, .pgm).
inline void write_image(const std::filesystem::path& path, const Rgb8Image& img) {
    const auto ext = path.extension().string();
    if (ext == ".ppm") return write_ppm(path, img);
    if (ext == ".pgm") return write_pgm(path, img);
    write_png(path, img);
}

}  // namespace agepro
