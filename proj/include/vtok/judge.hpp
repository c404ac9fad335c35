#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "vtok/error.hpp"
#include "vtok/scene.hpp"
#include "vtok/tasks.hpp"
#include "vtok/video.hpp"

// Two answer oracles. judge_from_program reads the symbolic scene and is
// correct by construction; judge_from_pixels sees only rendered frames and
// is the judge applied to generated videos. Certification (they agree on
// rendered ground truth) happens in tests before the pixel judge is
// trusted.
namespace vtok {

namespace detail_judge {

inline std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ' ') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

inline int choice_index(const std::vector<std::string>& choices, const std::string& text) {
    for (std::size_t i = 0; i < choices.size(); ++i)
        if (choices[i] == text) return static_cast<int>(i);
    return -1;
}

struct Component {
    int color{8};       // palette index of the majority pixel class
    double cx{0}, cy{0}; // centroid
    std::size_t area{0};
};

// 4-connected components of non-background pixels in one frame, area >= 4.
inline std::vector<Component> components_in_frame(const VideoClip& clip, std::size_t t) {
    const std::size_t H = clip.H, W = clip.W;
    std::vector<int> label(H * W);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) label[y * W + x] = classify_color(clip.get(t, y, x));

    std::vector<Component> out;
    std::vector<char> seen(H * W, 0);
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < H * W; ++start) {
        if (seen[start] || label[start] == 8) continue;
        stack.assign(1, start);
        seen[start] = 1;
        std::size_t area = 0;
        double sx = 0, sy = 0;
        std::map<int, std::size_t> votes;
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            const std::size_t y = p / W, x = p % W;
            ++area;
            sx += static_cast<double>(x);
            sy += static_cast<double>(y);
            ++votes[label[p]];
            const std::size_t nbr[4] = {p >= W ? p - W : p, p + W < H * W ? p + W : p, x > 0 ? p - 1 : p,
                                        x + 1 < W ? p + 1 : p};
            for (std::size_t q : nbr) {
                if (q == p || seen[q] || label[q] == 8) continue;
                seen[q] = 1;
                stack.push_back(q);
            }
        }
        if (area < 4) continue;
        Component c;
        c.area = area;
        c.cx = sx / static_cast<double>(area);
        c.cy = sy / static_cast<double>(area);
        std::size_t best = 0;
        for (const auto& [col, n] : votes)
            if (n > best) {
                best = n;
                c.color = col;
            }
        out.push_back(c);
    }
    return out;
}

inline const Component* largest(const std::vector<Component>& cs) {
    const Component* best = nullptr;
    for (const auto& c : cs)
        if (!best || c.area > best->area) best = &c;
    return best;
}

inline const Component* largest_of_color(const std::vector<Component>& cs, int color) {
    const Component* best = nullptr;
    for (const auto& c : cs)
        if (c.color == color && (!best || c.area > best->area)) best = &c;
    return best;
}

inline std::string corner_word(double dx, double dy) {
    return std::string(dy > 0 ? "bottom" : "top") + " " + (dx > 0 ? "right" : "left");
}

} // namespace detail_judge

// Symbolic oracle: answers from the scene program directly.
inline int judge_from_program(const SceneProgram& scene, const std::string& question,
                              const std::vector<std::string>& choices) {
    using namespace detail_judge;
    const Category cat = category_from_question(question);
    switch (cat) {
        case Category::counting: {
            const int idx = choice_index(choices, std::to_string(scene.objects.size()));
            if (idx < 0) throw JudgeError("object count not among choices");
            return idx;
        }
        case Category::direction: {
            const auto& o = scene.objects.at(0);
            return choice_index(choices, corner_word(o.vx, o.vy));
        }
        case Category::rel_position: {
            const auto& a = scene.objects.at(0);
            const auto& b = scene.objects.at(1);
            const double dx = a.x - b.x, dy = a.y - b.y;
            const std::string rel =
                std::abs(dx) >= std::abs(dy) ? (dx < 0 ? "to the left" : "to the right") : (dy < 0 ? "above" : "below");
            return choice_index(choices, rel);
        }
        case Category::rel_size: {
            const SceneObject* big = &scene.objects.at(0);
            for (const auto& o : scene.objects)
                if (o.radius > big->radius) big = &o;
            return choice_index(choices, palette()[static_cast<std::size_t>(big->color)].name);
        }
        case Category::color: {
            return choice_index(choices, palette()[static_cast<std::size_t>(scene.objects.at(0).color)].name);
        }
        case Category::state: {
            const int final_color = scene.objects.at(0).color_at(scene.T - 1);
            return choice_index(choices, palette()[static_cast<std::size_t>(final_color)].name);
        }
        case Category::motion: {
            const auto& o = scene.objects.at(0);
            if (o.orbit) return choice_index(choices, "circle");
            if (o.vx == 0 && o.vy == 0) return choice_index(choices, "still");
            return choice_index(choices, "straight line");
        }
    }
    throw JudgeError("bad category");
}

// Pixel oracle: nearest-palette classification + connected components +
// centroid/area tracking. Returns -1 (abstain) when nothing detectable
// supports an answer; the harness counts abstentions as incorrect.
inline int judge_from_pixels(const VideoClip& clip, const std::string& question,
                             const std::vector<std::string>& choices) {
    using namespace detail_judge;
    const Category cat = category_from_question(question);

    std::vector<std::vector<Component>> per_frame(clip.T);
    for (std::size_t t = 0; t < clip.T; ++t) per_frame[t] = components_in_frame(clip, t);

    switch (cat) {
        case Category::counting: {
            std::vector<std::size_t> counts;
            for (const auto& cs : per_frame) counts.push_back(cs.size());
            std::sort(counts.begin(), counts.end());
            const std::size_t median = counts[counts.size() / 2];
            return choice_index(choices, std::to_string(median));
        }
        case Category::direction: {
            const Component* first = nullptr;
            const Component* last = nullptr;
            for (const auto& cs : per_frame) {
                const Component* c = largest(cs);
                if (!c) continue;
                if (!first) first = c;
                last = c;
            }
            if (!first || !last || first == last) return -1;
            const double dx = last->cx - first->cx, dy = last->cy - first->cy;
            if (std::abs(dx) < 6.0 || std::abs(dy) < 6.0) return -1;
            return choice_index(choices, corner_word(dx, dy));
        }
        case Category::rel_position: {
            const auto words = split_words(question);
            // "where is the <colorA> <shapeA> relative to the <colorB> <shapeB>"
            if (words.size() < 10) return -1;
            const int ca = palette_index(words[3]);
            const int cb = palette_index(words[8]);
            double ax = 0, ay = 0, bx = 0, by = 0;
            std::size_t n = 0;
            for (const auto& cs : per_frame) {
                const Component* a = largest_of_color(cs, ca);
                const Component* b = largest_of_color(cs, cb);
                if (!a || !b) continue;
                ax += a->cx;
                ay += a->cy;
                bx += b->cx;
                by += b->cy;
                ++n;
            }
            if (n == 0) return -1;
            const double dx = (ax - bx) / static_cast<double>(n);
            const double dy = (ay - by) / static_cast<double>(n);
            const std::string rel =
                std::abs(dx) >= std::abs(dy) ? (dx < 0 ? "to the left" : "to the right") : (dy < 0 ? "above" : "below");
            return choice_index(choices, rel);
        }
        case Category::rel_size: {
            int best = -1;
            double best_area = 0;
            for (std::size_t i = 0; i < choices.size(); ++i) {
                int color;
                try {
                    color = palette_index(choices[i]);
                } catch (const ConfigError&) {
                    continue;
                }
                double area = 0;
                std::size_t n = 0;
                for (const auto& cs : per_frame) {
                    const Component* c = largest_of_color(cs, color);
                    if (!c) continue;
                    area += static_cast<double>(c->area);
                    ++n;
                }
                if (n == 0) continue;
                area /= static_cast<double>(n);
                if (area > best_area) {
                    best_area = area;
                    best = static_cast<int>(i);
                }
            }
            return best;
        }
        case Category::color:
        case Category::state: {
            // modal color of the largest component, over the whole clip for
            // `color` and over the closing frames for `state`
            const std::size_t from = cat == Category::state ? (clip.T >= 2 ? clip.T - 2 : 0) : 0;
            std::map<int, std::size_t> votes;
            for (std::size_t t = from; t < clip.T; ++t) {
                const Component* c = largest(per_frame[t]);
                if (c) ++votes[c->color];
            }
            if (votes.empty()) return -1;
            int modal = -1;
            std::size_t best = 0;
            for (const auto& [col, n] : votes)
                if (n > best) {
                    best = n;
                    modal = col;
                }
            return choice_index(choices, palette()[static_cast<std::size_t>(modal)].name);
        }
        case Category::motion: {
            std::vector<std::pair<double, double>> path;
            for (const auto& cs : per_frame) {
                const Component* c = largest(cs);
                if (c) path.emplace_back(c->cx, c->cy);
            }
            if (path.size() < 2) return -1;
            double d_tot = 0;
            for (std::size_t i = 1; i < path.size(); ++i)
                d_tot += std::hypot(path[i].first - path[i - 1].first, path[i].second - path[i - 1].second);
            const double d_net = std::hypot(path.back().first - path.front().first,
                                            path.back().second - path.front().second);
            std::string verdict;
            if (d_tot < 3.0)
                verdict = "still";
            else if (d_net <= 0.5 * d_tot)
                verdict = "circle";
            else
                verdict = "straight line";
            return choice_index(choices, verdict);
        }
    }
    return -1;
}

} // namespace vtok
