#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "vtok/error.hpp"

namespace vtok {

struct Rgb {
    double r{0}, g{0}, b{0};
    bool operator==(const Rgb& o) const { return r == o.r && g == o.g && b == o.b; }
};

// Dense clip, frames stored as floats in [0,1], row-major per frame.
struct VideoClip {
    std::size_t T{0}, H{0}, W{0};
    double fps{8.0};
    std::vector<float> pix; // T*H*W*3

    VideoClip() = default;
    VideoClip(std::size_t t, std::size_t h, std::size_t w, double fps_)
        : T(t), H(h), W(w), fps(fps_), pix(t * h * w * 3, 0.0f) {
        if (t < 1) throw ShapeError("VideoClip: T must be >= 1");
        if (fps_ <= 0) throw ConfigError("VideoClip: fps must be positive");
    }

    float* frame(std::size_t t) { return pix.data() + t * H * W * 3; }
    const float* frame(std::size_t t) const { return pix.data() + t * H * W * 3; }

    void set(std::size_t t, std::size_t y, std::size_t x, const Rgb& c) {
        float* p = pix.data() + ((t * H + y) * W + x) * 3;
        p[0] = static_cast<float>(c.r);
        p[1] = static_cast<float>(c.g);
        p[2] = static_cast<float>(c.b);
    }
    Rgb get(std::size_t t, std::size_t y, std::size_t x) const {
        const float* p = pix.data() + ((t * H + y) * W + x) * 3;
        return {p[0], p[1], p[2]};
    }

    // Clip duration used for token budgeting: time from the first frame
    // (the key instant) to the last one.
    double duration_s() const { return static_cast<double>(T - 1) / fps; }
};

// Eight maximally separated colors (RGB cube corners) plus the neutral
// background. Nearest-color classification over this set stays unambiguous
// under mild blur.
struct PaletteEntry {
    const char* name;
    Rgb rgb;
};

inline const std::array<PaletteEntry, 8>& palette() {
    static const std::array<PaletteEntry, 8> p{{
        {"red", {1, 0, 0}},
        {"green", {0, 1, 0}},
        {"blue", {0, 0, 1}},
        {"yellow", {1, 1, 0}},
        {"magenta", {1, 0, 1}},
        {"cyan", {0, 1, 1}},
        {"white", {1, 1, 1}},
        {"black", {0, 0, 0}},
    }};
    return p;
}

inline const Rgb& background_color() {
    static const Rgb bg{0.5, 0.5, 0.5};
    return bg;
}

inline int palette_index(const std::string& name) {
    for (std::size_t i = 0; i < palette().size(); ++i)
        if (name == palette()[i].name) return static_cast<int>(i);
    throw ConfigError("unknown palette color '" + name + "'");
}

// Nearest color over the 8-entry palette plus background; returns 0..7 for
// palette entries, 8 for background.
inline int classify_color(const Rgb& c) {
    int best = 8;
    const Rgb& bg = background_color();
    double best_d = (c.r - bg.r) * (c.r - bg.r) + (c.g - bg.g) * (c.g - bg.g) + (c.b - bg.b) * (c.b - bg.b);
    for (int i = 0; i < 8; ++i) {
        const Rgb& p = palette()[static_cast<std::size_t>(i)].rgb;
        const double d = (c.r - p.r) * (c.r - p.r) + (c.g - p.g) * (c.g - p.g) + (c.b - p.b) * (c.b - p.b);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

// Binary P6 export of one frame, for eyeballing outputs.
inline void write_ppm(const std::string& path, const VideoClip& clip, std::size_t t) {
    if (t >= clip.T) throw IndexError("write_ppm: frame index out of range");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "P6\n" << clip.W << " " << clip.H << "\n255\n";
    const float* f = clip.frame(t);
    std::vector<unsigned char> row(clip.W * 3);
    for (std::size_t y = 0; y < clip.H; ++y) {
        for (std::size_t i = 0; i < clip.W * 3; ++i) {
            float v = f[y * clip.W * 3 + i];
            v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
            row[i] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw IoError("write failed: " + path);
}

// Area-average downsample of one frame to gh x gw (extents must divide).
inline std::vector<double> downsample_frame(const VideoClip& clip, std::size_t t, std::size_t gh, std::size_t gw) {
    if (clip.H % gh != 0 || clip.W % gw != 0)
        throw ShapeError("downsample_frame: target grid must divide the frame extents");
    const std::size_t by = clip.H / gh, bx = clip.W / gw;
    std::vector<double> out(gh * gw * 3, 0.0);
    const float* f = clip.frame(t);
    for (std::size_t y = 0; y < clip.H; ++y)
        for (std::size_t x = 0; x < clip.W; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                out[((y / by) * gw + (x / bx)) * 3 + c] += f[(y * clip.W + x) * 3 + c];
    const double inv = 1.0 / static_cast<double>(by * bx);
    for (double& v : out) v *= inv;
    return out;
}

// Block-replication upsample back to H x W; keeps edges crisp for the
// nearest-palette judge.
inline void upsample_into_frame(VideoClip& clip, std::size_t t, const std::vector<double>& grid, std::size_t gh,
                                std::size_t gw) {
    if (grid.size() != gh * gw * 3) throw ShapeError("upsample_into_frame: grid size mismatch");
    const std::size_t by = clip.H / gh, bx = clip.W / gw;
    float* f = clip.frame(t);
    for (std::size_t y = 0; y < clip.H; ++y)
        for (std::size_t x = 0; x < clip.W; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                double v = grid[((y / by) * gw + (x / bx)) * 3 + c];
                v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
                f[(y * clip.W + x) * 3 + c] = static_cast<float>(v);
            }
}

} // namespace vtok
