#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "mood/errors.hpp"
#include "mood/tensor.hpp"

namespace mood {

// Frames on disk are binary PPM (P6, maxval 255): trivially seekable,
// dependency-free, and lossless for the synthetic corpus. Overlays and plots
// are written as PNG via zlib.

// (H,W,3) tensor in [0,1] -> P6 file.
inline void write_ppm(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.shape[2] != 3)
        throw DataError("write_ppm expects an (H,W,3) tensor: " + path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write image: " + path);
    out << "P6\n" << img.shape[1] << " " << img.shape[0] << "\n255\n";
    std::vector<unsigned char> row(size_t(img.shape[1]) * 3);
    for (int y = 0; y < img.shape[0]; ++y) {
        for (int x = 0; x < img.shape[1]; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(img.at(y, x, c), 0.0, 1.0);
                row[size_t(x) * 3 + size_t(c)] = (unsigned char)std::lround(v * 255.0);
            }
        out.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
}

// P6 file -> (H,W,3) tensor normalized to [0,1] by the format maxval.
inline Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("missing image file: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw DataError("undecodable image (not P6): " + path);
    auto next_int = [&in, &path]() {
        // Skip whitespace and '#' comment lines per the PPM grammar.
        int c = in.peek();
        while (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '#') {
            if (c == '#') {
                std::string line;
                std::getline(in, line);
            } else {
                in.get();
            }
            c = in.peek();
        }
        int v = -1;
        in >> v;
        if (!in || v < 0) throw DataError("undecodable image header: " + path);
        return v;
    };
    const int w = next_int(), h = next_int(), maxval = next_int();
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
        throw DataError("undecodable image header: " + path);
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> buf(size_t(w) * size_t(h) * 3);
    in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (in.gcount() != std::streamsize(buf.size()))
        throw DataError("undecodable image (truncated pixels): " + path);
    Tensor img({h, w, 3});
    for (size_t i = 0; i < buf.size(); ++i) img[int64_t(i)] = double(buf[i]) / maxval;
    return img;
}

// Bilinear resize with half-pixel centers; output values stay inside the
// input range because every sample is a convex combination.
inline Tensor resize_bilinear(const Tensor& img, int out_h, int out_w) {
    if (img.rank() != 3) throw DataError("resize_bilinear expects an (H,W,C) tensor");
    const int h = img.shape[0], w = img.shape[1], c = img.shape[2];
    if (h == out_h && w == out_w) return img;
    Tensor out({out_h, out_w, c});
    const double sy = double(h) / out_h, sx = double(w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(h - 1));
        const int y0 = int(fy), y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(w - 1));
            const int x0 = int(fx), x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < c; ++ch) {
                const double top = img.at(y0, x0, ch) * (1 - wx) + img.at(y0, x1, ch) * wx;
                const double bot = img.at(y1, x0, ch) * (1 - wx) + img.at(y1, x1, ch) * wx;
                out.at(y, x, ch) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

namespace detail {

inline void png_chunk(std::ofstream& out, const char type[4],
                      const std::vector<unsigned char>& data) {
    auto be32 = [&out](uint32_t v) {
        unsigned char b[4] = {(unsigned char)(v >> 24), (unsigned char)(v >> 16),
                              (unsigned char)(v >> 8), (unsigned char)v};
        out.write(reinterpret_cast<const char*>(b), 4);
    };
    be32(uint32_t(data.size()));
    out.write(type, 4);
    if (!data.empty())
        out.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
    uint32_t crc = uint32_t(crc32(0L, Z_NULL, 0));
    crc = uint32_t(crc32(crc, reinterpret_cast<const Bytef*>(type), 4));
    if (!data.empty()) crc = uint32_t(crc32(crc, data.data(), uInt(data.size())));
    be32(crc);
}

}  // namespace detail

// Minimal RGB8 PNG encoder (one IDAT chunk, filter 0 rows, zlib deflate).
inline void write_png(const std::string& path, const std::vector<unsigned char>& rgb, int w,
                      int h) {
    if (int64_t(rgb.size()) != int64_t(w) * h * 3) throw DataError("write_png: bad buffer size");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write image: " + path);
    static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    out.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<unsigned char> ihdr(13);
    auto put32 = [](std::vector<unsigned char>& v, size_t at, uint32_t x) {
        v[at] = (unsigned char)(x >> 24);
        v[at + 1] = (unsigned char)(x >> 16);
        v[at + 2] = (unsigned char)(x >> 8);
        v[at + 3] = (unsigned char)x;
    };
    put32(ihdr, 0, uint32_t(w));
    put32(ihdr, 4, uint32_t(h));
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 2;   // color type RGB
    ihdr[10] = ihdr[11] = ihdr[12] = 0;
    detail::png_chunk(out, "IHDR", ihdr);

    std::vector<unsigned char> raw;
    raw.reserve(size_t(h) * (size_t(w) * 3 + 1));
    for (int y = 0; y < h; ++y) {
        raw.push_back(0);  // filter: none
        raw.insert(raw.end(), rgb.begin() + size_t(y) * w * 3,
                   rgb.begin() + size_t(y + 1) * w * 3);
    }
    uLongf zlen = compressBound(uLong(raw.size()));
    std::vector<unsigned char> zbuf(zlen);
    if (compress2(zbuf.data(), &zlen, raw.data(), uLong(raw.size()), 6) != Z_OK)
        throw DataError("write_png: deflate failed");
    zbuf.resize(zlen);
    detail::png_chunk(out, "IDAT", zbuf);
    detail::png_chunk(out, "IEND", {});
}

// (H,W,3) [0,1] tensor convenience wrapper.
inline void write_png(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.shape[2] != 3) throw DataError("write_png expects (H,W,3)");
    std::vector<unsigned char> rgb(size_t(img.numel()));
    for (int64_t i = 0; i < img.numel(); ++i)
        rgb[size_t(i)] = (unsigned char)std::lround(std::clamp(img[i], 0.0, 1.0) * 255.0);
    write_png(path, rgb, img.shape[1], img.shape[0]);
}

// Blue->red heat colormap used for CAM overlays and confusion heatmaps.
inline void heat_color(double v, double rgb[3]) {
    v = std::clamp(v, 0.0, 1.0);
    rgb[0] = std::clamp(1.5 - std::abs(4.0 * v - 3.0) / 2.0, 0.0, 1.0);
    rgb[1] = std::clamp(1.5 - std::abs(4.0 * v - 2.0) / 2.0, 0.0, 1.0);
    rgb[2] = std::clamp(1.5 - std::abs(4.0 * v - 1.0) / 2.0, 0.0, 1.0);
}

}  // namespace mood
