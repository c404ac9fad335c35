#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "vtok/dataset.hpp"
#include "vtok/eval.hpp"

using namespace vtok;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path d = fs::temp_directory_path() / ("vtok_eval_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

EvalReport tiny_report() {
    EvalReport r;
    r.config = Json{{"note", "tiny"}};
    r.seed = 7;
    std::size_t k = 0;
    for (Category c : all_categories()) r.per_category.push_back({c, {k++, 10}});
    r.average = report_average(r.per_category);
    r.tokens = 46;
    return r;
}

} // namespace

// reference values computed independently (cross-checked against
// scipy.stats.binomtest and the standard Wilson formula)
TEST_CASE("wilson interval matches reference values", "[eval]") {
    auto ci = wilson_ci(0, 10);
    REQUIRE(ci.lo == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(ci.hi == Catch::Approx(0.277532799863).margin(1e-9));
    ci = wilson_ci(5, 10);
    REQUIRE(ci.lo == Catch::Approx(0.236593090513).margin(1e-9));
    REQUIRE(ci.hi == Catch::Approx(0.763406909487).margin(1e-9));
    ci = wilson_ci(25, 100);
    REQUIRE(ci.lo == Catch::Approx(0.175452113623).margin(1e-9));
    REQUIRE(ci.hi == Catch::Approx(0.343044635481).margin(1e-9));
    ci = wilson_ci(100, 100);
    REQUIRE(ci.lo == Catch::Approx(0.963006501793).margin(1e-9));
    REQUIRE(ci.hi == 1.0);
    // degenerate and monotonicity checks
    REQUIRE(wilson_ci(0, 0).lo == 0.0);
    REQUIRE(wilson_ci(0, 0).hi == 1.0);
    REQUIRE(wilson_ci(350, 700).hi - wilson_ci(350, 700).lo < wilson_ci(5, 10).hi - wilson_ci(5, 10).lo);
}

TEST_CASE("exact binomial test matches reference values", "[eval]") {
    REQUIRE(binom_test(175, 700, 0.25) == Catch::Approx(1.0).margin(1e-9));
    REQUIRE(binom_test(210, 700, 0.25) == Catch::Approx(0.00296144114008).epsilon(1e-9));
    REQUIRE(binom_test(6, 10, 0.5) == Catch::Approx(0.75390625).epsilon(1e-12));
    REQUIRE(binom_test(0, 20, 0.25) == Catch::Approx(0.00711335360302).epsilon(1e-9));
    REQUIRE(binom_test(30, 64, 0.25) == Catch::Approx(0.000220217039062).epsilon(1e-9));
    REQUIRE(binom_test(560, 700, 0.25) < 1e-100);
    REQUIRE_THROWS_AS(binom_test(0, 0, 0.25), JudgeError);
    REQUIRE_THROWS_AS(binom_test(1, 2, 0.0), ConfigError);
}

TEST_CASE("report json round trips", "[eval]") {
    EvalReport r = tiny_report();
    Json j = report_to_json(r);
    EvalReport back = report_from_json(j);
    REQUIRE(back.seed == r.seed);
    REQUIRE(back.tokens == r.tokens);
    REQUIRE(back.average == Catch::Approx(r.average));
    REQUIRE(back.per_category.size() == r.per_category.size());
    for (std::size_t i = 0; i < r.per_category.size(); ++i) {
        REQUIRE(back.per_category[i].first == r.per_category[i].first);
        REQUIRE(back.per_category[i].second.correct == r.per_category[i].second.correct);
        REQUIRE(back.per_category[i].second.total == r.per_category[i].second.total);
    }
    // serialization is deterministic
    REQUIRE(report_to_json(back).dump() == j.dump());
    Json broken = j;
    broken["per_category"].erase("motion");
    REQUIRE_THROWS_AS(report_from_json(broken), ConfigError);
}

TEST_CASE("emitted files have the published column order", "[eval]") {
    const fs::path dir = fresh_dir("emit");
    EvalReport r = tiny_report();
    emit_report(r, dir.string(), "report");

    std::ifstream csv(dir / "report.csv");
    std::string header, row;
    REQUIRE(std::getline(csv, header));
    REQUIRE(header == "config,tokens,counting,direction,rel_position,rel_size,color,state,motion,average");
    REQUIRE(std::getline(csv, row));
    REQUIRE(row.find(",46,0.0000,10.0000,20.0000,30.0000,40.0000,50.0000,60.0000,30.0000") != std::string::npos);

    std::ifstream tsv(dir / "report.tsv");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(tsv, line)) lines.push_back(line);
    REQUIRE(lines.size() == 8);
    REQUIRE(lines[0] == "counting\t0.0000");
    REQUIRE(lines[6] == "motion\t60.0000");
    REQUIRE(lines[7] == "average\t30.0000");

    std::ifstream json_in(dir / "report.json");
    Json parsed = Json::parse(json_in);
    REQUIRE(parsed.at("tokens") == 46);
    REQUIRE(parsed.at("per_category").at("state").at("acc") == Catch::Approx(50.0));
    const auto ci = parsed.at("per_category").at("state").at("ci");
    REQUIRE(ci.at(0).get<double>() == Catch::Approx(100.0 * wilson_ci(5, 10).lo));

    EvalReport empty;
    REQUIRE_THROWS_AS(emit_report(empty, dir.string(), "bad"), JudgeError);
}

TEST_CASE("oracle stub is perfect and the random stub sits near chance", "[eval]") {
    const auto suite = build_suite(70, 321);
    EvalReport oracle = run_suite(suite, oracle_stub_answer, 9, Json{{"stub", "oracle"}}, 0);
    for (const auto& [cat, st] : oracle.per_category) {
        REQUIRE(st.total == 10);
        REQUIRE(st.correct == st.total);
    }
    REQUIRE(oracle.average == Catch::Approx(100.0));

    const auto big = build_suite(700, 900000);
    EvalReport rnd = run_suite(big, random_stub_answer, 9, Json{{"stub", "random"}}, 0);
    std::size_t correct = 0;
    for (const auto& [cat, st] : rnd.per_category) correct += st.correct;
    // 99% binomial band around 1/4 on 700 draws: 175 +/- 2.576*sqrt(700*3/16)
    const double sd = std::sqrt(700 * 0.25 * 0.75);
    REQUIRE(static_cast<double>(correct) > 175.0 - 2.576 * sd);
    REQUIRE(static_cast<double>(correct) < 175.0 + 2.576 * sd);
}

TEST_CASE("task failures count against the score instead of aborting", "[eval]") {
    const auto suite = build_suite(14, 777);
    EvalReport r = run_suite(
        suite,
        [](const TaskTriplet& t, Rng&) -> int {
            if (t.category == Category::motion) throw GenerationError("decode failed");
            if (t.category == Category::color) return -1;
            return t.answer;
        },
        1, Json::object(), 0);
    for (const auto& [cat, st] : r.per_category) {
        const bool sabotaged = cat == Category::motion || cat == Category::color;
        REQUIRE(st.correct == (sabotaged ? 0 : st.total));
    }
    REQUIRE_THROWS_AS(run_suite({}, random_stub_answer, 1, Json::object(), 0), JudgeError);
}

TEST_CASE("thread count never changes the verdicts", "[eval]") {
    const auto suite = build_suite(40, 4444);
    EvalReport solo = run_suite(suite, random_stub_answer, 5, Json::object(), 0);
    setenv("VTOK_THREADS", "4", 1);
    EvalReport pooled = run_suite(suite, random_stub_answer, 5, Json::object(), 0);
    unsetenv("VTOK_THREADS");
    REQUIRE(report_to_json(solo).dump() == report_to_json(pooled).dump());
}

TEST_CASE("split disjointness is enforced on scene seeds", "[eval]") {
    const auto train = build_suite(16, 1000);
    const auto val = build_suite(8, 1000 + split_offset(1));
    REQUIRE_NOTHROW(check_split_disjoint(train, val));
    auto leaked = val;
    leaked[3].scene.seed = train[5].scene.seed;
    REQUIRE_THROWS_AS(check_split_disjoint(train, leaked), JudgeError);
}

TEST_CASE("config fingerprints are stable and distinguishing", "[eval]") {
    Json a = Json{{"s", 16}, {"rate", 6.0}};
    Json b = Json{{"s", 16}, {"rate", 7.0}};
    REQUIRE(config_fingerprint(a) == config_fingerprint(a));
    REQUIRE(config_fingerprint(a) != config_fingerprint(b));
    REQUIRE(config_fingerprint(a).size() == 16);
}
