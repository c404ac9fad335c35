#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "vtok/dataset.hpp"
#include "vtok/judge.hpp"
#include "vtok/rng.hpp"
#include "vtok/scene.hpp"
#include "vtok/tasks.hpp"

using namespace vtok;

namespace {

SceneProgram one_circle(double x, double y, double vx = 0, double vy = 0, std::size_t T = 10) {
    SceneProgram s;
    s.T = T;
    SceneObject o;
    o.kind = ShapeKind::circle;
    o.color = 0; // red
    o.radius = 5;
    o.x = x;
    o.y = y;
    o.vx = vx;
    o.vy = vy;
    s.objects.push_back(o);
    return s;
}

std::pair<double, double> frame_centroid(const VideoClip& clip, std::size_t t) {
    double sx = 0, sy = 0;
    std::size_t n = 0;
    for (std::size_t y = 0; y < clip.H; ++y)
        for (std::size_t x = 0; x < clip.W; ++x)
            if (classify_color(clip.get(t, y, x)) != 8) {
                sx += static_cast<double>(x);
                sy += static_cast<double>(y);
                ++n;
            }
    REQUIRE(n > 0);
    return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

} // namespace

TEST_CASE("single static circle renders one foreground region", "[scene]") {
    SceneProgram s = one_circle(32, 32, 0, 0, 1);
    VideoClip clip = render_scene(s);
    REQUIRE(clip.T == 1);
    auto comps = detail_judge::components_in_frame(clip, 0);
    REQUIRE(comps.size() == 1);
    REQUIRE(comps[0].color == 0);
    REQUIRE(comps[0].cx == Catch::Approx(32.0).margin(1.0));
    REQUIRE(comps[0].cy == Catch::Approx(32.0).margin(1.0));
}

TEST_CASE("linear motion displaces the centroid by velocity times frames", "[scene]") {
    SceneProgram s = one_circle(12, 12, 1, 1, 10);
    VideoClip clip = render_scene(s);
    auto [x0, y0] = frame_centroid(clip, 0);
    auto [x9, y9] = frame_centroid(clip, 9);
    REQUIRE(x9 - x0 == Catch::Approx(9.0).margin(1.0));
    REQUIRE(y9 - y0 == Catch::Approx(9.0).margin(1.0));
}

TEST_CASE("color change touches only object pixels", "[scene]") {
    SceneProgram a = one_circle(30, 28, 0.5, -0.25, 8);
    SceneProgram b = a;
    b.objects[0].color = 2; // blue
    VideoClip ca = render_scene(a);
    VideoClip cb = render_scene(b);
    REQUIRE(ca.pix.size() == cb.pix.size());
    const Rgb bg = background_color();
    for (std::size_t t = 0; t < ca.T; ++t)
        for (std::size_t y = 0; y < ca.H; ++y)
            for (std::size_t x = 0; x < ca.W; ++x) {
                const bool differs = !(ca.get(t, y, x) == cb.get(t, y, x));
                if (differs) {
                    // any differing pixel must be an object pixel in both renders
                    REQUIRE(!(ca.get(t, y, x) == bg));
                    REQUIRE(!(cb.get(t, y, x) == bg));
                }
            }
}

TEST_CASE("rendering is pure and objects may not leave the canvas", "[scene]") {
    SceneProgram s = one_circle(20, 20, 1.5, 0, 12);
    VideoClip c1 = render_scene(s);
    VideoClip c2 = render_scene(s);
    REQUIRE(c1.pix == c2.pix);

    SceneProgram bad = one_circle(60, 32, 2, 0, 10); // exits right edge
    REQUIRE_THROWS_AS(render_scene(bad), GenerationError);
}

TEST_CASE("state flips change color at the scheduled frame", "[scene]") {
    SceneProgram s = one_circle(32, 32, 0, 0, 8);
    s.objects[0].flip = ColorFlip{4, 2};
    VideoClip clip = render_scene(s);
    auto before = detail_judge::components_in_frame(clip, 3);
    auto after = detail_judge::components_in_frame(clip, 4);
    REQUIRE(before.at(0).color == 0);
    REQUIRE(after.at(0).color == 2);
}

TEST_CASE("orbit paths stay centered on the orbit center", "[scene]") {
    SceneProgram s;
    s.T = 16;
    SceneObject o;
    o.kind = ShapeKind::square;
    o.color = 3;
    o.radius = 4;
    o.orbit = Orbit{32, 32, 10, 2.0 * 3.14159265358979 / 16.0, 0.7};
    s.objects.push_back(o);
    VideoClip clip = render_scene(s);
    for (std::size_t t = 0; t < s.T; ++t) {
        auto [cx, cy] = frame_centroid(clip, t);
        const double r = std::hypot(cx - 32.0, cy - 32.0);
        REQUIRE(r == Catch::Approx(10.0).margin(1.5));
    }
}

TEST_CASE("task scenes render in-canvas with separated objects", "[tasks]") {
    std::size_t idx = 0;
    for (Category cat : all_categories()) {
        for (int k = 0; k < 30; ++k) {
            Rng rng(1000 + idx++);
            TaskTriplet t = sample_task(cat, rng);
            REQUIRE(t.choices.size() == 4);
            REQUIRE(t.answer >= 0);
            REQUIRE(t.answer < 4);
            REQUIRE_NOTHROW(render_scene(t.scene)); // also enforces canvas bounds
            // pairwise separation at every frame keeps components disjoint
            for (std::size_t f = 0; f < t.scene.T; ++f)
                for (std::size_t i = 0; i < t.scene.objects.size(); ++i)
                    for (std::size_t j = i + 1; j < t.scene.objects.size(); ++j) {
                        auto [xi, yi] = t.scene.objects[i].pos_at(f);
                        auto [xj, yj] = t.scene.objects[j].pos_at(f);
                        const double d = std::hypot(xi - xj, yi - yj);
                        REQUIRE(d >= t.scene.objects[i].radius + t.scene.objects[j].radius + 2.0);
                    }
        }
    }
}

TEST_CASE("category templates carry the queried attribute", "[tasks]") {
    Rng r1(42);
    TaskTriplet counting = sample_task(Category::counting, r1);
    REQUIRE(counting.question.rfind("how many", 0) == 0);
    const std::string count_str = counting.choices[static_cast<std::size_t>(counting.answer)];
    REQUIRE(std::to_string(counting.scene.objects.size()) == count_str);

    Rng r2(43);
    TaskTriplet dir = sample_task(Category::direction, r2);
    REQUIRE(dir.prompt.find(" moves from the ") != std::string::npos);
    const auto& o = dir.scene.objects[0];
    const std::string expect = std::string(o.vy > 0 ? "bottom" : "top") + " " + (o.vx > 0 ? "right" : "left");
    REQUIRE(dir.choices[static_cast<std::size_t>(dir.answer)] == expect);

    Rng r3(44);
    TaskTriplet size = sample_task(Category::rel_size, r3);
    const double r_big = std::max(size.scene.objects[0].radius, size.scene.objects[1].radius);
    const double r_small = std::min(size.scene.objects[0].radius, size.scene.objects[1].radius);
    REQUIRE(r_big / r_small >= 1.5);
}

TEST_CASE("answers are recoverable from prompts alone", "[tasks]") {
    std::size_t idx = 0;
    for (Category cat : all_categories())
        for (int k = 0; k < 40; ++k) {
            Rng rng(7000 + idx++);
            TaskTriplet t = sample_task(cat, rng);
            REQUIRE(answer_from_prompt(t) == t.answer);
        }
}

TEST_CASE("question stems identify their category", "[tasks]") {
    std::size_t idx = 0;
    for (Category cat : all_categories()) {
        Rng rng(9000 + idx++);
        TaskTriplet t = sample_task(cat, rng);
        REQUIRE(category_from_question(t.question) == cat);
    }
    REQUIRE_THROWS_AS(category_from_question("why is the sky blue"), JudgeError);
}

TEST_CASE("program judge hand cases", "[judge]") {
    Rng rng(55);
    // three objects, counting
    TaskTriplet t;
    do {
        t = sample_task(Category::counting, rng);
    } while (t.scene.objects.size() != 3);
    REQUIRE(judge_from_program(t.scene, t.question, t.choices) == t.answer);
    REQUIRE(t.choices[static_cast<std::size_t>(t.answer)] == "3");

    // velocity (+,+) means bottom right
    SceneProgram s = SceneProgram{};
    SceneObject o;
    o.vx = 1.5;
    o.vy = 1.5;
    o.x = 10;
    o.y = 10;
    o.radius = 4;
    s.objects.push_back(o);
    const std::vector<std::string> corners{"top left", "top right", "bottom left", "bottom right"};
    REQUIRE(judge_from_program(s, "which corner does the circle move toward", corners) == 3);

    // state flip answers the final color
    SceneProgram fs = one_circle(32, 32, 0, 0, 8);
    fs.objects[0].flip = ColorFlip{4, 5}; // ends cyan
    const std::vector<std::string> colors{"red", "cyan", "blue", "white"};
    REQUIRE(judge_from_program(fs, "what color is the circle at the end", colors) == 1);
}

TEST_CASE("pixel judge abstains on empty video and unknown stems throw", "[judge]") {
    VideoClip blank(4, 64, 64, 8.0);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t y = 0; y < 64; ++y)
            for (std::size_t x = 0; x < 64; ++x) blank.set(t, y, x, background_color());
    REQUIRE(judge_from_pixels(blank, "how many circles appear", {"2", "3", "4", "5"}) == -1);
    REQUIRE_THROWS_AS(judge_from_pixels(blank, "is this art", {"a", "b", "c", "d"}), JudgeError);
}

TEST_CASE("pixel judge agrees with program judge on rendered ground truth", "[judge]") {
    std::size_t idx = 0;
    for (Category cat : all_categories()) {
        for (int k = 0; k < 20; ++k) {
            Rng rng(31000 + idx++);
            TaskTriplet t = sample_task(cat, rng);
            VideoClip clip = render_scene(t.scene);
            const int from_program = judge_from_program(t.scene, t.question, t.choices);
            const int from_pixels = judge_from_pixels(clip, t.question, t.choices);
            INFO("category " << category_name(cat) << " sample " << k);
            REQUIRE(from_program == t.answer);
            REQUIRE(from_pixels == from_program);
        }
    }
}

TEST_CASE("suites balance categories and honor sizes", "[dataset]") {
    auto suite = build_suite(700, 123456);
    REQUIRE(suite.size() == 700);
    std::map<Category, int> counts;
    for (const auto& t : suite) ++counts[t.category];
    for (Category c : all_categories()) REQUIRE(counts[c] == 100);

    auto lop = build_suite(9, 5);
    std::map<Category, int> lop_counts;
    for (const auto& t : lop) ++lop_counts[t.category];
    int mx = 0, mn = 9;
    for (Category c : all_categories()) {
        mx = std::max(mx, lop_counts[c]);
        mn = std::min(mn, lop_counts[c]);
    }
    REQUIRE(mx - mn <= 1);
}

TEST_CASE("dataset files round-trip and are deterministic", "[dataset]") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "vtok_dataset_test";
    fs::create_directories(dir);

    DatasetSizes sizes;
    sizes.train = 14;
    sizes.val = 7;
    sizes.test = 21;
    build_dataset((dir / "a").string(), sizes, 99);
    build_dataset((dir / "b").string(), sizes, 99);

    for (const char* split : {"train.jsonl", "val.jsonl", "test.jsonl"}) {
        std::ifstream fa(dir / "a" / split), fb(dir / "b" / split);
        std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
        std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
        REQUIRE(sa == sb);
        REQUIRE(!sa.empty());
    }

    auto train = load_tasks((dir / "a" / "train.jsonl").string());
    REQUIRE(train.size() == 14);
    auto reloaded = load_tasks((dir / "a" / "train.jsonl").string());
    for (std::size_t i = 0; i < train.size(); ++i) {
        REQUIRE(train[i].prompt == reloaded[i].prompt);
        REQUIRE(train[i].answer == reloaded[i].answer);
        REQUIRE(render_scene(train[i].scene).pix == render_scene(reloaded[i].scene).pix);
    }

    // split seeds never collide
    std::set<std::uint64_t> seen;
    for (const char* split : {"train.jsonl", "val.jsonl", "test.jsonl"})
        for (const auto& t : load_tasks((dir / "a" / split).string())) {
            REQUIRE(seen.insert(t.scene.seed).second);
        }
}

TEST_CASE("ppm export writes a well-formed P6 header", "[dataset]") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "vtok_dataset_test";
    fs::create_directories(dir);
    SceneProgram s = one_circle(32, 32, 0, 0, 2);
    VideoClip clip = render_scene(s);
    const std::string path = (dir / "frame.ppm").string();
    write_ppm(path, clip, 0);
    std::ifstream in(path, std::ios::binary);
    std::string header(15, '\0');
    in.read(header.data(), 15);
    REQUIRE(header == "P6\n64 64\n255\n\x80\x80");
    in.seekg(0, std::ios::end);
    REQUIRE(static_cast<std::size_t>(in.tellg()) == 15 - 2 + 64 * 64 * 3);
}

TEST_CASE("scene JSON round-trips exactly", "[dataset]") {
    Rng rng(321);
    TaskTriplet t = sample_task(Category::motion, rng);
    t.scene.seed = 777;
    const Json j = scene_to_json(t.scene);
    SceneProgram back = scene_from_json(j);
    REQUIRE(back.seed == 777);
    REQUIRE(render_scene(back).pix == render_scene(t.scene).pix);
    REQUIRE_THROWS_AS(scene_from_json(Json{{"h", 64}}), ConfigError);
}
