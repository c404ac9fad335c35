#pragma once

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "vtok/dataset.hpp"
#include "vtok/decoder.hpp"
#include "vtok/judge.hpp"
#include "vtok/mllm.hpp"
#include "vtok/tokenizer.hpp"

// Alignment and understanding evaluation over task suites. The prompt-to-
// pixels protocol: sample visual tokens from the prompt, decode them to a
// clip, and let the pixel judge answer the question. Scores aggregate per
// category with Wilson intervals; significance against chance uses an
// exact binomial test.
namespace vtok {

// ---------------------------------------------------------------------------
// statistics
// ---------------------------------------------------------------------------

struct WilsonInterval {
    double lo{0}, hi{0};
};

// 95% by default (z = 1.959964); returns proportions in [0,1]
inline WilsonInterval wilson_ci(std::size_t correct, std::size_t total, double z = 1.959963984540054) {
    if (total == 0) return {0.0, 1.0};
    const double n = static_cast<double>(total);
    const double p = static_cast<double>(correct) / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = (p + z2 / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
    return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

namespace detail_eval {
inline double log_binom_pmf(std::size_t k, std::size_t n, double p) {
    const double lk = static_cast<double>(k), ln_ = static_cast<double>(n);
    return std::lgamma(ln_ + 1) - std::lgamma(lk + 1) - std::lgamma(ln_ - lk + 1) + lk * std::log(p) +
           (ln_ - lk) * std::log1p(-p);
}
} // namespace detail_eval

// Exact two-sided binomial test: total probability of outcomes no more
// likely than the observed count.
inline double binom_test(std::size_t k, std::size_t n, double p) {
    if (n == 0) throw JudgeError("binom_test: empty sample");
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("binom_test: p must be inside (0,1)");
    const double obs = detail_eval::log_binom_pmf(k, n, p);
    double total = 0;
    for (std::size_t i = 0; i <= n; ++i) {
        const double li = detail_eval::log_binom_pmf(i, n, p);
        if (li <= obs + 1e-9) total += std::exp(li);
    }
    return std::min(1.0, total);
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

struct CategoryStat {
    std::size_t correct{0}, total{0};

    double acc_percent() const {
        return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total);
    }
};

struct EvalReport {
    Json config; // fingerprint of whatever produced the answers
    std::uint64_t seed{0};
    std::vector<std::pair<Category, CategoryStat>> per_category; // fixed category order
    double average{0};                                           // unweighted category mean, percent
    std::size_t tokens{0};                                       // visual token budget in play
};

inline double report_average(const std::vector<std::pair<Category, CategoryStat>>& per_category) {
    double s = 0;
    for (const auto& [c, st] : per_category) s += st.acc_percent();
    return per_category.empty() ? 0.0 : s / static_cast<double>(per_category.size());
}

inline Json report_to_json(const EvalReport& r) {
    Json j;
    j["config"] = r.config;
    j["seed"] = r.seed;
    Json cats = Json::object();
    for (const auto& [cat, st] : r.per_category) {
        const WilsonInterval ci = wilson_ci(st.correct, st.total);
        cats[category_name(cat)] = Json{{"correct", st.correct},
                                        {"total", st.total},
                                        {"acc", st.acc_percent()},
                                        {"ci", Json::array({100.0 * ci.lo, 100.0 * ci.hi})}};
    }
    j["per_category"] = cats;
    j["average"] = r.average;
    j["tokens"] = r.tokens;
    return j;
}

inline EvalReport report_from_json(const Json& j) {
    try {
        EvalReport r;
        r.config = j.at("config");
        r.seed = j.at("seed").get<std::uint64_t>();
        for (Category c : all_categories()) {
            const Json& e = j.at("per_category").at(category_name(c));
            r.per_category.push_back({c, {e.at("correct").get<std::size_t>(), e.at("total").get<std::size_t>()}});
        }
        r.average = j.at("average").get<double>();
        r.tokens = j.at("tokens").get<std::size_t>();
        return r;
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("report parse: ") + e.what());
    }
}

// fixed-width float so files are stable across platforms
inline std::string fmt_acc(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

// short stable id for a config; the CSV cell can't hold raw JSON
inline std::string config_fingerprint(const Json& config) {
    const std::string s = config.dump();
    std::uint64_t h = 1469598103934665603ull; // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// JSON (full), CSV (one table row, columns in the benchmark's order), and
// a category/accuracy TSV for plotting.
inline void emit_report(const EvalReport& r, const std::string& dir, const std::string& base) {
    if (r.per_category.empty()) throw JudgeError("emit_report: refusing to write a report with no categories");
    {
        std::ofstream f(dir + "/" + base + ".json", std::ios::binary);
        if (!f) throw IoError("emit_report: cannot write to " + dir);
        f << report_to_json(r).dump(2) << "\n";
    }
    {
        std::ofstream f(dir + "/" + base + ".csv", std::ios::binary);
        f << "config,tokens";
        for (const auto& [cat, st] : r.per_category) f << "," << category_name(cat);
        f << ",average\n";
        f << config_fingerprint(r.config) << "," << r.tokens;
        for (const auto& [cat, st] : r.per_category) f << "," << fmt_acc(st.acc_percent());
        f << "," << fmt_acc(r.average) << "\n";
    }
    {
        std::ofstream f(dir + "/" + base + ".tsv", std::ios::binary);
        for (const auto& [cat, st] : r.per_category) f << category_name(cat) << "\t" << fmt_acc(st.acc_percent()) << "\n";
        f << "average\t" << fmt_acc(r.average) << "\n";
    }
}

// ---------------------------------------------------------------------------
// suite running
// ---------------------------------------------------------------------------

// Answer a task with a choice index; -1 (or any throw) counts incorrect.
using AnswerFn = std::function<int(const TaskTriplet&, Rng&)>;

inline std::size_t eval_threads() {
    if (const char* env = std::getenv("VTOK_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<std::size_t>(n);
    }
    return 1;
}

// Every task gets its own child rng keyed by suite index, so the result is
// one fixed vector of verdicts no matter how many threads run.
inline EvalReport run_suite(const std::vector<TaskTriplet>& suite, const AnswerFn& answer, std::uint64_t seed,
                            Json config_fp, std::size_t tokens_used) {
    if (suite.empty()) throw JudgeError("run_suite: empty suite");
    std::vector<std::uint8_t> ok(suite.size(), 0);
    const std::size_t n_threads = std::min(eval_threads(), suite.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        Rng base(seed);
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= suite.size()) break;
            Rng task_rng = base.child(0xe7a1u ^ static_cast<std::uint64_t>(i));
            int got = -1;
            try {
                got = answer(suite[i], task_rng);
            } catch (const Error&) {
                got = -1; // failures count against the score, never abort
            }
            ok[i] = got == suite[i].answer ? 1 : 0;
        }
    };
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    EvalReport r;
    r.config = std::move(config_fp);
    r.seed = seed;
    std::map<Category, CategoryStat> stats;
    for (Category c : all_categories()) stats[c]; // categories always present
    for (std::size_t i = 0; i < suite.size(); ++i) {
        auto& st = stats[suite[i].category];
        st.total += 1;
        st.correct += ok[i];
    }
    for (Category c : all_categories()) r.per_category.push_back({c, stats[c]});
    r.average = report_average(r.per_category);
    r.tokens = tokens_used;
    return r;
}

// Train/eval splits may never share scene seeds; a leak here silently
// inflates every score, so it is a hard failure.
inline void check_split_disjoint(const std::vector<TaskTriplet>& train, const std::vector<TaskTriplet>& eval_suite) {
    std::set<std::uint64_t> seen;
    for (const auto& t : train) seen.insert(t.scene.seed);
    for (const auto& t : eval_suite)
        if (seen.count(t.scene.seed))
            throw JudgeError("split check: eval task shares scene seed " + std::to_string(t.scene.seed) +
                             " with the training split");
}

// ---------------------------------------------------------------------------
// model-backed answering
// ---------------------------------------------------------------------------

struct EvalBundle {
    const Tokenizer& tok;
    const Mllm& model;
    const VideoDecoder& dec;
    std::size_t frame_sampling{0}; // 0 = decoupled; n > 0 = n-frame baseline
};

// prompt -> visual tokens -> decoded clip -> pixel judge
inline int tvalign_answer(const EvalBundle& b, const TaskTriplet& task, Rng& rng) {
    if (b.frame_sampling) throw GenerationError("frame sampling baseline cannot propose visual tokens");
    const std::size_t T = task.scene.T;
    const double fps = task.scene.fps;
    const double duration = static_cast<double>(T - 1) / fps;
    const auto n_motion = static_cast<std::size_t>(std::llround(duration * b.tok.cfg.motion_rate));
    TokenSequence seq = b.model.sample_visual_tokens(task.prompt, b.tok, n_motion, rng);
    VideoClip clip = b.dec.sample_video(b.tok.features_of(seq), T, rng, task.scene.H, task.scene.W, fps);
    return judge_from_pixels(clip, task.question, task.choices);
}

// ground-truth clip -> tokens -> generated words -> nearest choice
inline int understanding_answer(const EvalBundle& b, const TaskTriplet& task, Rng& rng) {
    VideoClip clip = render_scene(task.scene);
    auto enc = b.frame_sampling ? b.tok.frame_sampling_tokenize(clip, b.frame_sampling) : b.tok.tokenize_video(clip);
    auto [ids, types] = b.model.understanding_prefix(task.question, enc.seq);
    std::vector<int> out = b.model.generate_text(ids, types, b.tok, 6, 0.0, rng);
    std::vector<std::string> words;
    for (int id : out) words.push_back(b.model.vocab.word(id));
    // exact match first, then best word overlap; no overlap means wrong
    std::string joined;
    for (const auto& w : words) joined += (joined.empty() ? "" : " ") + w;
    int best = -1;
    std::size_t best_overlap = 0;
    for (std::size_t c = 0; c < task.choices.size(); ++c) {
        if (task.choices[c] == joined) return static_cast<int>(c);
        std::size_t overlap = 0;
        for (const auto& cw : detail_judge::split_words(task.choices[c]))
            for (const auto& w : words)
                if (cw == w) {
                    ++overlap;
                    break;
                }
        if (overlap > best_overlap) {
            best_overlap = overlap;
            best = static_cast<int>(c);
        }
    }
    return best;
}

inline std::size_t bundle_token_budget(const EvalBundle& b, const std::vector<TaskTriplet>& suite) {
    if (suite.empty()) return 0;
    if (b.frame_sampling) return b.tok.cfg.S * b.frame_sampling;
    const auto& s = suite.front().scene;
    return token_budget(static_cast<double>(s.T - 1) / s.fps, b.tok.cfg.S, b.tok.cfg.motion_rate);
}

inline EvalReport run_tv_align(const EvalBundle& b, const std::vector<TaskTriplet>& suite, std::uint64_t seed,
                               Json config_fp) {
    return run_suite(
        suite, [&](const TaskTriplet& t, Rng& rng) { return tvalign_answer(b, t, rng); }, seed, std::move(config_fp),
        bundle_token_budget(b, suite));
}

inline EvalReport run_understanding(const EvalBundle& b, const std::vector<TaskTriplet>& suite, std::uint64_t seed,
                                    Json config_fp) {
    return run_suite(
        suite, [&](const TaskTriplet& t, Rng& rng) { return understanding_answer(b, t, rng); }, seed,
        std::move(config_fp), bundle_token_budget(b, suite));
}

// protocol bounds stubs: the upper bound renders the true scene and judges
// it; the lower bound answers uniformly at random
inline int oracle_stub_answer(const TaskTriplet& task, Rng&) {
    return judge_from_pixels(render_scene(task.scene), task.question, task.choices);
}
inline int random_stub_answer(const TaskTriplet& task, Rng& rng) {
    return rng.uniform_int(0, static_cast<int>(task.choices.size()) - 1);
}

} // namespace vtok
