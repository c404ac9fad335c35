#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtok/error.hpp"
#include "vtok/video.hpp"

// Symbolic scene descriptions and their deterministic rasterizer. A scene
// is exact ground truth: rendering and judging both derive from it.
namespace vtok {

using Json = nlohmann::ordered_json;

enum class ShapeKind { circle, square, triangle };

inline const char* shape_name(ShapeKind k) {
    switch (k) {
        case ShapeKind::circle: return "circle";
        case ShapeKind::square: return "square";
        case ShapeKind::triangle: return "triangle";
    }
    throw ConfigError("bad shape kind");
}

inline ShapeKind shape_from_name(const std::string& s) {
    if (s == "circle") return ShapeKind::circle;
    if (s == "square") return ShapeKind::square;
    if (s == "triangle") return ShapeKind::triangle;
    throw ConfigError("unknown shape '" + s + "'");
}

// Optional circular trajectory. When present it overrides the linear
// start+t*velocity path: the object orbits (cx,cy) at the given radius,
// starting at phase radians and advancing omega radians per frame.
struct Orbit {
    double cx{0}, cy{0};
    double radius{0};
    double omega{0};
    double phase{0};
};

// Mid-clip attribute change: from frame `frame` onward the object takes
// this color.
struct ColorFlip {
    std::size_t frame{0};
    int color{0}; // palette index
};

struct SceneObject {
    ShapeKind kind{ShapeKind::circle};
    int color{0};     // palette index
    double radius{4}; // half-extent in pixels
    double x{0}, y{0};
    double vx{0}, vy{0};
    std::optional<Orbit> orbit;
    std::optional<ColorFlip> flip;

    // Center position at frame t.
    std::pair<double, double> pos_at(std::size_t t) const {
        if (orbit) {
            const double a = orbit->phase + orbit->omega * static_cast<double>(t);
            return {orbit->cx + orbit->radius * std::cos(a), orbit->cy + orbit->radius * std::sin(a)};
        }
        return {x + vx * static_cast<double>(t), y + vy * static_cast<double>(t)};
    }

    int color_at(std::size_t t) const { return flip && t >= flip->frame ? flip->color : color; }
};

struct SceneProgram {
    std::size_t H{64}, W{64};
    std::size_t T{16};
    double fps{8.0};
    std::uint64_t seed{0}; // generator provenance; keeps splits disjoint
    std::vector<SceneObject> objects;
};

// ---------------------------------------------------------------------------
// rasterizer
// ---------------------------------------------------------------------------

namespace detail {

// Hard-edged membership test at the pixel center.
inline bool covers(const SceneObject& o, double cx, double cy, double px, double py) {
    const double dx = px - cx, dy = py - cy;
    switch (o.kind) {
        case ShapeKind::circle: return dx * dx + dy * dy <= o.radius * o.radius;
        case ShapeKind::square: return std::abs(dx) <= o.radius && std::abs(dy) <= o.radius;
        case ShapeKind::triangle: {
            // upward-pointing triangle inscribed in the radius box
            if (dy < -o.radius || dy > o.radius) return false;
            // width grows linearly from apex (dy=-r) to base (dy=+r)
            const double half_w = o.radius * (dy + o.radius) / (2.0 * o.radius);
            return std::abs(dx) <= half_w;
        }
    }
    return false;
}

} // namespace detail

// Deterministic rasterization: frame t places each object on its path and
// fills pixels whose centers fall inside the shape. Objects leaving the
// canvas are a hard error; the generator is responsible for never
// producing such scenes.
inline VideoClip render_scene(const SceneProgram& scene) {
    if (scene.T < 1) throw GenerationError("render_scene: empty scene duration");
    VideoClip clip(scene.T, scene.H, scene.W, scene.fps);
    const Rgb bg = background_color();
    for (std::size_t t = 0; t < scene.T; ++t) {
        for (std::size_t y = 0; y < scene.H; ++y)
            for (std::size_t x = 0; x < scene.W; ++x) clip.set(t, y, x, bg);
        for (const auto& o : scene.objects) {
            auto [cx, cy] = o.pos_at(t);
            if (cx - o.radius < 0 || cx + o.radius >= static_cast<double>(scene.W) || cy - o.radius < 0 ||
                cy + o.radius >= static_cast<double>(scene.H))
                throw GenerationError("render_scene: object leaves the canvas at frame " + std::to_string(t));
            const Rgb col = palette()[static_cast<std::size_t>(o.color_at(t))].rgb;
            const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(cy - o.radius)));
            const auto y1 = static_cast<std::size_t>(std::min(static_cast<double>(scene.H - 1), std::ceil(cy + o.radius)));
            const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(cx - o.radius)));
            const auto x1 = static_cast<std::size_t>(std::min(static_cast<double>(scene.W - 1), std::ceil(cx + o.radius)));
            for (std::size_t y = y0; y <= y1; ++y)
                for (std::size_t x = x0; x <= x1; ++x)
                    if (detail::covers(o, cx, cy, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5))
                        clip.set(t, y, x, col);
        }
    }
    return clip;
}

// ---------------------------------------------------------------------------
// JSON round-trip
// ---------------------------------------------------------------------------

inline Json scene_to_json(const SceneProgram& s) {
    Json j;
    j["h"] = s.H;
    j["w"] = s.W;
    j["t"] = s.T;
    j["fps"] = s.fps;
    j["seed"] = s.seed;
    j["objects"] = Json::array();
    for (const auto& o : s.objects) {
        Json oj;
        oj["shape"] = shape_name(o.kind);
        oj["color"] = palette()[static_cast<std::size_t>(o.color)].name;
        oj["radius"] = o.radius;
        oj["x"] = o.x;
        oj["y"] = o.y;
        oj["vx"] = o.vx;
        oj["vy"] = o.vy;
        if (o.orbit) {
            oj["orbit"] = Json{{"cx", o.orbit->cx},
                               {"cy", o.orbit->cy},
                               {"radius", o.orbit->radius},
                               {"omega", o.orbit->omega},
                               {"phase", o.orbit->phase}};
        }
        if (o.flip) {
            oj["flip"] = Json{{"frame", o.flip->frame},
                              {"color", palette()[static_cast<std::size_t>(o.flip->color)].name}};
        }
        j["objects"].push_back(std::move(oj));
    }
    return j;
}

inline SceneProgram scene_from_json(const Json& j) {
    SceneProgram s;
    try {
        s.H = j.at("h").get<std::size_t>();
        s.W = j.at("w").get<std::size_t>();
        s.T = j.at("t").get<std::size_t>();
        s.fps = j.at("fps").get<double>();
        s.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& oj : j.at("objects")) {
            SceneObject o;
            o.kind = shape_from_name(oj.at("shape").get<std::string>());
            o.color = palette_index(oj.at("color").get<std::string>());
            o.radius = oj.at("radius").get<double>();
            o.x = oj.at("x").get<double>();
            o.y = oj.at("y").get<double>();
            o.vx = oj.at("vx").get<double>();
            o.vy = oj.at("vy").get<double>();
            if (oj.contains("orbit")) {
                const auto& ob = oj.at("orbit");
                o.orbit = Orbit{ob.at("cx").get<double>(), ob.at("cy").get<double>(), ob.at("radius").get<double>(),
                                ob.at("omega").get<double>(), ob.at("phase").get<double>()};
            }
            if (oj.contains("flip")) {
                const auto& fj = oj.at("flip");
                o.flip = ColorFlip{fj.at("frame").get<std::size_t>(), palette_index(fj.at("color").get<std::string>())};
            }
            s.objects.push_back(std::move(o));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed scene JSON: ") + e.what());
    }
    return s;
}

} // namespace vtok
