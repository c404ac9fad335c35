#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "vtok/error.hpp"
#include "vtok/rng.hpp"
#include "vtok/scene.hpp"

// Task templates for the seven categories, plus the scene generator that
// backs them. Geometry is chosen so the pixel judge cannot be ambiguous:
// objects keep a hard minimum separation, direction clips move diagonally
// with a wide margin, and relative positions have a dominant axis.
namespace vtok {

enum class Category { counting, direction, rel_position, rel_size, color, state, motion };

inline const std::vector<Category>& all_categories() {
    static const std::vector<Category> c{Category::counting, Category::direction, Category::rel_position,
                                         Category::rel_size, Category::color,     Category::state,
                                         Category::motion};
    return c;
}

inline const char* category_name(Category c) {
    switch (c) {
        case Category::counting: return "counting";
        case Category::direction: return "direction";
        case Category::rel_position: return "rel_position";
        case Category::rel_size: return "rel_size";
        case Category::color: return "color";
        case Category::state: return "state";
        case Category::motion: return "motion";
    }
    throw ConfigError("bad category");
}

inline Category category_from_name(const std::string& s) {
    for (Category c : all_categories())
        if (s == category_name(c)) return c;
    throw ConfigError("unknown category '" + s + "'");
}

struct TaskTriplet {
    Category category{Category::counting};
    std::string prompt;
    std::string question;
    std::vector<std::string> choices; // always 4
    int answer{0};                    // index into choices
    SceneProgram scene;
};

namespace detail_tasks {

inline const char* count_word(int n) {
    switch (n) {
        case 2: return "two";
        case 3: return "three";
        case 4: return "four";
        case 5: return "five";
    }
    throw ConfigError("count out of range");
}

inline const char* plural(ShapeKind k) {
    switch (k) {
        case ShapeKind::circle: return "circles";
        case ShapeKind::square: return "squares";
        case ShapeKind::triangle: return "triangles";
    }
    throw ConfigError("bad shape kind");
}

inline std::string color_word(int idx) { return palette()[static_cast<std::size_t>(idx)].name; }

// 3x3 grid of placement slots with ±2 px jitter. Slot spacing keeps any
// two objects at least 16 px apart center-to-center, which with radii <= 7
// leaves a clear background gap between components.
inline std::pair<double, double> slot_pos(int slot, Rng& rng) {
    const double base[3] = {13.0, 32.0, 51.0};
    const double jx = rng.uniform(-2.0, 2.0);
    const double jy = rng.uniform(-2.0, 2.0);
    return {base[slot % 3] + jx, base[slot / 3] + jy};
}

inline ShapeKind random_shape(Rng& rng) {
    return static_cast<ShapeKind>(rng.uniform_int(0, 2));
}

// n distinct palette indices
inline std::vector<int> distinct_colors(int n, Rng& rng) {
    std::vector<int> all{0, 1, 2, 3, 4, 5, 6, 7};
    rng.shuffle(all);
    return {all.begin(), all.begin() + n};
}

// Four choices containing the given required words (deduplicated), padded
// with distractor colors, in shuffled deterministic order. Returns the
// index of `answer_word`.
inline int finish_color_choices(std::vector<std::string>& choices, const std::vector<int>& used_colors,
                                const std::string& answer_word, Rng& rng) {
    std::vector<int> pool{0, 1, 2, 3, 4, 5, 6, 7};
    pool.erase(std::remove_if(pool.begin(), pool.end(),
                              [&](int c) { return std::find(used_colors.begin(), used_colors.end(), c) != used_colors.end(); }),
               pool.end());
    rng.shuffle(pool);
    for (int c : used_colors) choices.push_back(color_word(c));
    for (std::size_t i = 0; choices.size() < 4; ++i) choices.push_back(color_word(pool.at(i)));
    rng.shuffle(choices);
    for (std::size_t i = 0; i < choices.size(); ++i)
        if (choices[i] == answer_word) return static_cast<int>(i);
    throw GenerationError("answer word missing from choices");
}

} // namespace detail_tasks

// Build one task of the given category. Pure function of (category, rng).
inline TaskTriplet sample_task(Category cat, Rng& rng) {
    using namespace detail_tasks;
    TaskTriplet task;
    task.category = cat;
    SceneProgram& s = task.scene;
    s.H = 64;
    s.W = 64;
    s.T = 16;
    s.fps = 8.0;

    switch (cat) {
        case Category::counting: {
            const int n = rng.uniform_int(2, 5);
            const ShapeKind kind = random_shape(rng);
            const int color = distinct_colors(1, rng)[0];
            std::vector<int> slots{0, 1, 2, 3, 4, 5, 6, 7, 8};
            rng.shuffle(slots);
            for (int i = 0; i < n; ++i) {
                SceneObject o;
                o.kind = kind;
                o.color = color;
                o.radius = rng.uniform(4.0, 5.0);
                std::tie(o.x, o.y) = slot_pos(slots[static_cast<std::size_t>(i)], rng);
                s.objects.push_back(o);
            }
            task.prompt = std::string(count_word(n)) + " " + color_word(color) + " " + plural(kind) +
                          " appear on the screen";
            task.question = std::string("how many ") + plural(kind) + " appear";
            task.choices = {"2", "3", "4", "5"};
            task.answer = n - 2;
            break;
        }
        case Category::direction: {
            const ShapeKind kind = random_shape(rng);
            const int color = distinct_colors(1, rng)[0];
            SceneObject o;
            o.kind = kind;
            o.color = color;
            o.radius = rng.uniform(4.0, 5.0);
            const double speed = rng.uniform(1.5, 2.0);
            const int sx = rng.uniform_int(0, 1) ? 1 : -1;
            const int sy = rng.uniform_int(0, 1) ? 1 : -1;
            o.vx = sx * speed;
            o.vy = sy * speed;
            const double travel = speed * static_cast<double>(s.T - 1);
            // start in the corner opposite the travel direction, inset so
            // the whole path stays inside the canvas
            const double lo = o.radius + 2.0;
            const double hi = 61.0 - o.radius - travel;
            o.x = sx > 0 ? rng.uniform(lo, hi) : rng.uniform(lo + travel, 61.0 - o.radius);
            o.y = sy > 0 ? rng.uniform(lo, hi) : rng.uniform(lo + travel, 61.0 - o.radius);
            s.objects.push_back(o);
            const std::string dst = std::string(sy > 0 ? "bottom" : "top") + " " + (sx > 0 ? "right" : "left");
            const std::string src = std::string(sy > 0 ? "top" : "bottom") + " " + (sx > 0 ? "left" : "right");
            task.prompt = "a " + color_word(color) + " " + shape_name(kind) + " moves from the " + src + " to the " + dst;
            task.question = std::string("which corner does the ") + shape_name(kind) + " move toward";
            task.choices = {"top left", "top right", "bottom left", "bottom right"};
            task.answer = (sy > 0 ? 2 : 0) + (sx > 0 ? 1 : 0);
            break;
        }
        case Category::rel_position: {
            const auto colors = distinct_colors(2, rng);
            const ShapeKind ka = random_shape(rng);
            const ShapeKind kb = random_shape(rng);
            const int rel = rng.uniform_int(0, 3); // 0 left, 1 right, 2 above, 3 below
            // pick two slots along the dominant axis (same row or column)
            const int line = rng.uniform_int(0, 2);
            int slot_a, slot_b;
            if (rel <= 1) {
                const int ca = rel == 0 ? 0 : 2;
                slot_a = line * 3 + ca;
                slot_b = line * 3 + (2 - ca);
            } else {
                const int ra = rel == 2 ? 0 : 2;
                slot_a = ra * 3 + line;
                slot_b = (2 - ra) * 3 + line;
            }
            SceneObject a, b;
            a.kind = ka;
            a.color = colors[0];
            a.radius = rng.uniform(4.0, 5.0);
            std::tie(a.x, a.y) = slot_pos(slot_a, rng);
            b.kind = kb;
            b.color = colors[1];
            b.radius = rng.uniform(4.0, 5.0);
            std::tie(b.x, b.y) = slot_pos(slot_b, rng);
            s.objects.push_back(a);
            s.objects.push_back(b);
            static const char* rel_prompt[4] = {"to the left of", "to the right of", "above", "below"};
            static const char* rel_choice[4] = {"to the left", "to the right", "above", "below"};
            task.prompt = "a " + color_word(colors[0]) + " " + shape_name(ka) + " is " + rel_prompt[rel] + " a " +
                          color_word(colors[1]) + " " + shape_name(kb);
            task.question = "where is the " + color_word(colors[0]) + " " + shape_name(ka) + " relative to the " +
                            color_word(colors[1]) + " " + shape_name(kb);
            task.choices = {rel_choice[0], rel_choice[1], rel_choice[2], rel_choice[3]};
            task.answer = rel;
            break;
        }
        case Category::rel_size: {
            const auto colors = distinct_colors(2, rng);
            const ShapeKind kind = random_shape(rng);
            SceneObject big, small;
            big.kind = kind;
            big.color = colors[0];
            big.radius = rng.uniform(6.0, 7.0);
            small.kind = kind;
            small.color = colors[1];
            small.radius = rng.uniform(3.0, 4.0);
            std::vector<int> slots{0, 2, 6, 8}; // corner slots, widest gaps
            rng.shuffle(slots);
            std::tie(big.x, big.y) = slot_pos(slots[0], rng);
            std::tie(small.x, small.y) = slot_pos(slots[1], rng);
            s.objects.push_back(big);
            s.objects.push_back(small);
            task.prompt = "a " + color_word(colors[0]) + " " + shape_name(kind) + " is much larger than a " +
                          color_word(colors[1]) + " " + shape_name(kind);
            task.question = std::string("which ") + shape_name(kind) + " is larger";
            task.answer = finish_color_choices(task.choices, colors, color_word(colors[0]), rng);
            break;
        }
        case Category::color: {
            const int color = distinct_colors(1, rng)[0];
            const ShapeKind kind = random_shape(rng);
            SceneObject o;
            o.kind = kind;
            o.color = color;
            o.radius = rng.uniform(4.0, 6.0);
            std::tie(o.x, o.y) = slot_pos(rng.uniform_int(0, 8), rng);
            s.objects.push_back(o);
            task.prompt = "a " + color_word(color) + " " + shape_name(kind) + " appears on the screen";
            task.question = std::string("what color is the ") + shape_name(kind);
            task.answer = finish_color_choices(task.choices, {color}, color_word(color), rng);
            break;
        }
        case Category::state: {
            const auto colors = distinct_colors(2, rng);
            const ShapeKind kind = random_shape(rng);
            const bool flips = rng.uniform_int(0, 1) == 1;
            SceneObject o;
            o.kind = kind;
            o.color = colors[0];
            o.radius = rng.uniform(4.0, 6.0);
            std::tie(o.x, o.y) = slot_pos(rng.uniform_int(0, 8), rng);
            if (flips) o.flip = ColorFlip{s.T / 2, colors[1]};
            s.objects.push_back(o);
            const int final_color = flips ? colors[1] : colors[0];
            if (flips)
                task.prompt = "a " + color_word(colors[0]) + " " + shape_name(kind) + " turns " +
                              color_word(colors[1]) + " halfway through";
            else
                task.prompt = "a " + color_word(colors[0]) + " " + shape_name(kind) + " keeps its color";
            task.question = std::string("what color is the ") + shape_name(kind) + " at the end";
            task.answer = finish_color_choices(task.choices, colors, color_word(final_color), rng);
            break;
        }
        case Category::motion: {
            const int color = distinct_colors(1, rng)[0];
            const ShapeKind kind = random_shape(rng);
            const int mode = rng.uniform_int(0, 2); // 0 straight, 1 circle, 2 still
            SceneObject o;
            o.kind = kind;
            o.color = color;
            o.radius = rng.uniform(4.0, 5.0);
            if (mode == 0) {
                const double speed = rng.uniform(1.4, 1.9);
                const int sx = rng.uniform_int(0, 1) ? 1 : -1;
                const int sy = rng.uniform_int(0, 1) ? 1 : -1;
                o.vx = sx * speed;
                o.vy = sy * speed;
                const double travel = speed * static_cast<double>(s.T - 1);
                const double lo = o.radius + 2.0;
                const double hi = 61.0 - o.radius - travel;
                o.x = sx > 0 ? rng.uniform(lo, hi) : rng.uniform(lo + travel, 61.0 - o.radius);
                o.y = sy > 0 ? rng.uniform(lo, hi) : rng.uniform(lo + travel, 61.0 - o.radius);
                task.prompt = "a " + color_word(color) + " " + shape_name(kind) + " moves in a straight line";
                task.answer = 0;
            } else if (mode == 1) {
                Orbit orbit;
                orbit.cx = rng.uniform(28.0, 36.0);
                orbit.cy = rng.uniform(28.0, 36.0);
                orbit.radius = rng.uniform(9.0, 12.0);
                orbit.omega = 2.0 * 3.14159265358979323846 / static_cast<double>(s.T);
                orbit.phase = rng.uniform(0.0, 6.28);
                o.orbit = orbit;
                task.prompt = "a " + color_word(color) + " " + shape_name(kind) + " moves in a circle";
                task.answer = 1;
            } else {
                std::tie(o.x, o.y) = slot_pos(rng.uniform_int(0, 8), rng);
                task.prompt = "a " + color_word(color) + " " + shape_name(kind) + " stays still";
                task.answer = 2;
            }
            s.objects.push_back(o);
            task.question = std::string("how does the ") + shape_name(kind) + " move";
            task.choices = {"straight line", "circle", "still", "back and forth"};
            break;
        }
    }
    return task;
}

// Category recovery from the question stem; each template has a distinct
// opening. Unknown stems are a judge error (the judge shares this parser).
inline Category category_from_question(const std::string& q) {
    auto starts = [&](const char* p) { return q.rfind(p, 0) == 0; };
    if (starts("how many")) return Category::counting;
    if (starts("which corner")) return Category::direction;
    if (starts("where is")) return Category::rel_position;
    if (starts("which ")) return Category::rel_size;
    if (starts("what color") && q.find(" at the end") != std::string::npos) return Category::state;
    if (starts("what color")) return Category::color;
    if (starts("how does")) return Category::motion;
    throw JudgeError("unrecognized question template: '" + q + "'");
}

// Recover the correct answer from the prompt text alone. Exercised by
// tests to prove prompts are attribute-complete.
inline int answer_from_prompt(const TaskTriplet& task) {
    const std::string& p = task.prompt;
    auto contains = [&](const std::string& w) { return p.find(w) != std::string::npos; };
    auto index_of = [&](const std::string& w) {
        for (std::size_t i = 0; i < task.choices.size(); ++i)
            if (task.choices[i] == w) return static_cast<int>(i);
        throw JudgeError("prompt attribute '" + w + "' not among choices");
    };
    switch (task.category) {
        case Category::counting: {
            static const char* words[4] = {"two", "three", "four", "five"};
            for (int n = 0; n < 4; ++n)
                if (p.rfind(words[n], 0) == 0) return index_of(std::to_string(n + 2));
            throw JudgeError("counting prompt lacks a count word");
        }
        case Category::direction: {
            const auto to = p.rfind(" to the ");
            if (to == std::string::npos) throw JudgeError("direction prompt lacks a destination");
            return index_of(p.substr(to + 8));
        }
        case Category::rel_position: {
            if (contains(" is to the left of ")) return index_of("to the left");
            if (contains(" is to the right of ")) return index_of("to the right");
            if (contains(" is above ")) return index_of("above");
            if (contains(" is below ")) return index_of("below");
            throw JudgeError("rel_position prompt lacks a relation");
        }
        case Category::rel_size: {
            // "a <color> <shape> is much larger than ..."
            const auto sp = p.find(' ', 2);
            return index_of(p.substr(2, sp - 2));
        }
        case Category::color: {
            const auto sp = p.find(' ', 2);
            return index_of(p.substr(2, sp - 2));
        }
        case Category::state: {
            const auto turns = p.find(" turns ");
            if (turns != std::string::npos) {
                const auto start = turns + 7;
                const auto end = p.find(' ', start);
                return index_of(p.substr(start, end - start));
            }
            const auto sp = p.find(' ', 2);
            return index_of(p.substr(2, sp - 2)); // keeps its color
        }
        case Category::motion: {
            if (contains("straight line")) return index_of("straight line");
            if (contains("in a circle")) return index_of("circle");
            if (contains("stays still")) return index_of("still");
            throw JudgeError("motion prompt lacks a mode");
        }
    }
    throw JudgeError("bad category");
}

} // namespace vtok
