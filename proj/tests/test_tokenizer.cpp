#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "vtok/dataset.hpp"
#include "vtok/tokenizer.hpp"

using namespace vtok;

namespace {

VideoClip gray_clip(std::size_t T = 16, std::size_t H = 64, std::size_t W = 64, double fps = 8) {
    VideoClip c(T, H, W, fps);
    for (auto& p : c.pix) p = 0.5f;
    return c;
}

Tokenizer make_tokenizer(TokenizerConfig cfg = {}, std::size_t H = 64, std::size_t W = 64, std::uint64_t seed = 7) {
    Rng rng(seed);
    return Tokenizer(cfg, H, W, rng);
}

} // namespace

TEST_CASE("token budget matches the published cells", "[tokenizer]") {
    // 5 second clip, default setup: 16 spatial + 30 motion
    CHECK(token_budget(5.0, 16, 6.0) == 46);
    // spatial sweep at rate 6
    const std::size_t S_cells[5] = {1, 4, 9, 16, 25};
    const std::size_t S_want[5] = {31, 34, 39, 46, 55};
    for (int i = 0; i < 5; ++i) CHECK(token_budget(5.0, S_cells[i], 6.0) == S_want[i]);
    // rate sweep at S = 16
    CHECK(token_budget(5.0, 16, 3.0) == 31);
    CHECK(token_budget(5.0, 16, 12.0) == 76);
    CHECK_THROWS_AS(token_budget(-1.0, 16, 6.0), ConfigError);
}

TEST_CASE("emitted sequence length always equals the budget", "[tokenizer]") {
    Tokenizer tok = make_tokenizer();
    for (std::size_t T = 1; T <= 40; ++T) {
        VideoClip c = gray_clip(T);
        auto enc = tok.tokenize_video(c);
        CHECK(enc.seq.entries.size() == token_budget(c.duration_s(), tok.cfg.S, tok.cfg.motion_rate));
        CHECK(enc.features->value.shape[0] == enc.seq.entries.size());
    }
}

TEST_CASE("frame sampling emits n_frames * S spatial tokens", "[tokenizer]") {
    Tokenizer tok = make_tokenizer();
    VideoClip c = gray_clip(16);
    auto e4 = tok.frame_sampling_tokenize(c, 4);
    auto e8 = tok.frame_sampling_tokenize(c, 8);
    CHECK(e4.seq.entries.size() == 64);
    CHECK(e8.seq.entries.size() == 128);
    for (const auto& e : e8.seq.entries) CHECK(e.role == TokenRole::spatial);
    // evenly spaced frame picks, endpoints included
    std::set<int> frames;
    for (const auto& e : e4.seq.entries) frames.insert(e.t_window);
    CHECK(frames == std::set<int>{0, 5, 10, 15});
    auto e1 = tok.frame_sampling_tokenize(c, 1);
    CHECK(e1.seq.entries.front().t_window == 0);
    CHECK_THROWS_AS(tok.frame_sampling_tokenize(c, 17), SamplingError);
    CHECK_THROWS_AS(tok.frame_sampling_tokenize(c, 0), SamplingError);
}

TEST_CASE("decoupled budget stays below per-frame token cost", "[tokenizer]") {
    // the whole point: token count grows with clip seconds, not frame count
    std::size_t prev = 0;
    for (std::size_t T = 2; T <= 64; ++T) {
        const double dur = static_cast<double>(T - 1) / 8.0;
        const std::size_t b = token_budget(dur, 16, 6.0);
        CHECK(b >= prev);
        CHECK(b < 16 * T);
        CHECK(std::llabs(static_cast<long long>(b) - std::llround(16 + 0.75 * static_cast<double>(T - 1))) <= 1);
        prev = b;
    }
}

TEST_CASE("motion windows tile the frames in order", "[tokenizer]") {
    auto groups = motion_windows(16, 8.0, 6.0);
    REQUIRE(groups.size() == 11); // round(1.875 * 6)
    std::vector<int> seen;
    for (const auto& g : groups) {
        REQUIRE_FALSE(g.empty());
        for (int k : g) seen.push_back(k);
    }
    std::vector<int> want;
    for (int k = 1; k <= 15; ++k) want.push_back(k);
    CHECK(seen == want);
    for (std::size_t w = 0; w < groups.size(); ++w)
        for (int k : groups[w]) CHECK(window_of_frame(static_cast<std::size_t>(k), 16, 8.0, 6.0) == w);
    CHECK_THROWS_AS(window_of_frame(0, 16, 8.0, 6.0), SequenceError);
}

TEST_CASE("empty windows borrow the nearest frame", "[tokenizer]") {
    // 3 frames over 2 seconds at rate 6 wants 12 windows but only has frames 1..2
    auto groups = motion_windows(3, 1.0, 6.0);
    REQUIRE(groups.size() == 12);
    int last = 0;
    for (const auto& g : groups) {
        REQUIRE_FALSE(g.empty());
        for (int k : g) {
            CHECK(k >= 1);
            CHECK(k <= 2);
            CHECK(k >= last);
            last = k;
        }
    }
    // single-frame clip has no motion at all
    CHECK(motion_windows(1, 8.0, 6.0).empty());
}

TEST_CASE("nearest-entry lookup agrees with an exhaustive scan", "[tokenizer]") {
    Rng rng(31);
    Codebook cb(32, 8, rng);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> f(8);
        for (double& x : f) x = rng.normal() * 1.5;
        // independent argmin with explicit tie policy
        int best = -1;
        double best_d = 0;
        for (int k = 0; k < 32; ++k) {
            double d = 0;
            for (int j = 0; j < 8; ++j) {
                const double diff = f[static_cast<std::size_t>(j)] - cb.entry(static_cast<std::size_t>(k))[j];
                d += diff * diff;
            }
            if (best < 0 || d < best_d) {
                best = k;
                best_d = d;
            }
        }
        auto [id, q] = quantize(f, cb);
        CHECK(id == best);
        for (int j = 0; j < 8; ++j) CHECK(q[static_cast<std::size_t>(j)] == cb.entry(static_cast<std::size_t>(id))[j]);
    }
    CHECK_THROWS_AS(quantize(std::vector<double>(3, 0.0), cb), ShapeError);
}

TEST_CASE("duplicate entries quantize to the lowest index", "[tokenizer]") {
    Rng rng(5);
    Codebook cb(4, 2, rng);
    std::map<std::string, Tensor> st;
    cb.export_state("cb", st);
    // rows 1 and 3 identical and closest to the probe
    st["cb"] = Tensor({4, 2}, {9, 9, 1, 1, -9, 9, 1, 1});
    cb.import_state("cb", st);
    auto [id, q] = quantize({1.2, 0.8}, cb);
    CHECK(id == 1);
}

TEST_CASE("codebook EMA update matches hand arithmetic", "[tokenizer]") {
    Rng rng(11);
    Codebook cb(2, 1, rng);
    std::map<std::string, Tensor> st;
    cb.export_state("cb", st);
    st["cb"] = Tensor({2, 1}, {0.0, 10.0});
    st["cb.cluster_size"] = Tensor({2}, {1.0, 1.0});
    st["cb.embed_sum"] = Tensor({2, 1}, {0.0, 10.0});
    st["cb.age"] = Tensor({2}, {0.0, 0.0});
    cb.import_state("cb", st);

    cb.update({1.0}, {0}, rng, 0.99);
    // entry 0: size 0.99*1+0.01*1 = 1, sum 0.99*0+0.01*1 = 0.01 -> 0.01
    // entry 1: size 0.99, sum 9.9 -> exactly 10 still; unused so age ticks
    std::map<std::string, Tensor> after;
    cb.export_state("cb", after);
    CHECK(after["cb"].v[0] == Catch::Approx(0.01).margin(1e-12));
    CHECK(after["cb"].v[1] == Catch::Approx(10.0).margin(1e-9));
    CHECK(after["cb.age"].v[0] == 0.0);
    CHECK(after["cb.age"].v[1] == 1.0);
}

TEST_CASE("entries dead past the age limit get reseeded from recent features", "[tokenizer]") {
    Rng rng(13);
    Codebook cb(2, 1, rng);
    std::map<std::string, Tensor> st;
    cb.export_state("cb", st);
    st["cb"] = Tensor({2, 1}, {0.0, 1000.0});
    st["cb.cluster_size"] = Tensor({2}, {1.0, 1.0});
    st["cb.embed_sum"] = Tensor({2, 1}, {0.0, 1000.0});
    st["cb.age"] = Tensor({2}, {0.0, 0.0});
    cb.import_state("cb", st);

    for (int step = 0; step < 520; ++step) {
        const double f = 0.4 + 0.2 * rng.uniform();
        cb.update({f}, {0}, rng, 0.99);
    }
    std::map<std::string, Tensor> after;
    cb.export_state("cb", after);
    // entry 1 never matched anything, crossed the age limit, and was pulled
    // back into the observed data range
    CHECK(after["cb"].v[1] >= 0.4);
    CHECK(after["cb"].v[1] <= 0.6);
    CHECK(after["cb.age"].v[1] < 520.0);
}

TEST_CASE("spatial features are local to their patch", "[tokenizer]") {
    Tokenizer tok = make_tokenizer();
    VideoClip a = gray_clip(1);
    VideoClip b = a;
    // perturb only patch (row 2, col 3) of the 4x4 grid
    for (std::size_t y = 32; y < 48; ++y)
        for (std::size_t x = 48; x < 64; ++x) b.set(0, y, x, {1.0f, 0.0f, 0.0f});
    ad::Var fa = tok.encode_key_frame(a);
    ad::Var fb = tok.encode_key_frame(b);
    for (std::size_t s = 0; s < 16; ++s) {
        double diff = 0;
        for (std::size_t j = 0; j < 64; ++j)
            diff += std::fabs(fa->value.v[s * 64 + j] - fb->value.v[s * 64 + j]);
        if (s == 2 * 4 + 3)
            CHECK(diff > 1e-6);
        else
            CHECK(diff == 0.0);
    }
}

TEST_CASE("a static clip collapses to identical motion tokens", "[tokenizer]") {
    Tokenizer tok = make_tokenizer();
    SceneProgram scene;
    scene.objects.push_back({ShapeKind::square, palette_index("blue"), 5, 30, 30, 0, 0, {}, {}});
    VideoClip c = render_scene(scene);
    auto enc = tok.tokenize_video(c);
    REQUIRE(enc.seq.n_motion() == 11);
    const int first = enc.seq.entries[16].code;
    for (std::size_t i = 16; i < enc.seq.entries.size(); ++i) CHECK(enc.seq.entries[i].code == first);
    // pre-quantization motion rows are g(0) exactly, hence bit-identical
    const Tensor& raw = enc.features->parents.at(0)->value;
    for (std::size_t w = 1; w < 11; ++w)
        for (std::size_t j = 0; j < 64; ++j) CHECK(raw.v[(16 + w) * 64 + j] == raw.v[16 * 64 + j]);
}

TEST_CASE("straight-through features carry codebook values and encoder gradients", "[tokenizer]") {
    Tokenizer tok = make_tokenizer();
    // suite index 1 is a direction task, so the clip actually moves and the
    // motion head sees nonzero residuals
    VideoClip c = render_scene(build_suite(2, 900)[1].scene);
    auto enc = tok.tokenize_video(c);
    // forward: every row is exactly its code's entry
    for (std::size_t i = 0; i < enc.seq.entries.size(); ++i) {
        const auto& e = enc.seq.entries[i];
        const Codebook& cb = e.role == TokenRole::spatial ? tok.spatial_cb : tok.motion_cb;
        for (std::size_t j = 0; j < 64; ++j)
            CHECK(enc.features->value.v[i * 64 + j] == cb.entry(static_cast<std::size_t>(e.code))[j]);
    }
    // backward: gradient passes through as if quantization were identity
    ad::Var loss = ad::sum(enc.features);
    ad::backward(loss);
    std::vector<double> via_st = tok.key_w->grad;
    std::vector<double> via_st_g1 = tok.gphi_w1->grad;

    ad::ParamMap pm{{"a", tok.key_w}, {"b", tok.gphi_w1}};
    ad::zero_grad(pm);
    ad::Var spatial = tok.encode_key_frame(c, 0);
    ad::Var motion = tok.encode_motion(c);
    ad::Var direct = ad::sum(ad::concat_rows({spatial, motion}));
    ad::backward(direct);
    REQUIRE(via_st.size() == tok.key_w->grad.size());
    for (std::size_t i = 0; i < via_st.size(); ++i) CHECK(via_st[i] == Catch::Approx(tok.key_w->grad[i]).margin(1e-12));
    bool any = false;
    for (double x : via_st_g1) any = any || x != 0.0;
    CHECK(any);
}

TEST_CASE("tokenizer state round-trips through export and import", "[tokenizer]") {
    Tokenizer tok = make_tokenizer();
    VideoClip c = render_scene(build_suite(1, 901)[0].scene);
    Rng rng(3);
    for (int i = 0; i < 3; ++i) {
        auto enc = tok.tokenize_video(c);
        tok.update_codebooks(enc, rng);
    }
    std::map<std::string, Tensor> st;
    tok.export_state(st);
    Tokenizer other = make_tokenizer({}, 64, 64, 99);
    other.import_state(st);
    std::map<std::string, Tensor> st2;
    other.export_state(st2);
    REQUIRE(st.size() == st2.size());
    for (const auto& [k, v] : st) {
        REQUIRE(st2.at(k).shape == v.shape);
        CHECK(st2.at(k).v == v.v);
    }
}

TEST_CASE("sequence structure holds across random configurations", "[tokenizer]") {
    Rng rng(77);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t g = static_cast<std::size_t>(rng.uniform_int(1, 5));
        TokenizerConfig cfg;
        cfg.S = g * g;
        cfg.motion_rate = static_cast<double>(rng.uniform_int(1, 12));
        cfg.K_spatial = 32;
        cfg.K_motion = 16;
        const std::size_t canvas = (g == 3 || g == 5) ? 60 : 64;
        Rng init(rng.next_u64());
        Tokenizer tok(cfg, canvas, canvas, init);
        const auto T = static_cast<std::size_t>(rng.uniform_int(1, 20));
        VideoClip c(T, canvas, canvas, 8.0);
        for (auto& p : c.pix) p = static_cast<float>(init.uniform());
        auto enc = tok.tokenize_video(c);
        CHECK(enc.seq.S == cfg.S);
        CHECK(enc.seq.entries.size() == token_budget(c.duration_s(), cfg.S, cfg.motion_rate));
        enc.seq.check_layout();
        for (std::size_t i = 0; i < enc.seq.entries.size(); ++i) {
            const auto& e = enc.seq.entries[i];
            if (i < cfg.S) {
                CHECK(e.code < static_cast<int>(cfg.K_spatial));
                CHECK(e.t_window == -1);
            } else {
                CHECK(e.code < static_cast<int>(cfg.K_motion));
                CHECK(e.t_window == static_cast<int>(i - cfg.S));
            }
            CHECK(e.code >= 0);
        }
    }
}

TEST_CASE("config validation rejects broken setups", "[tokenizer]") {
    Rng rng(1);
    TokenizerConfig bad_s;
    bad_s.S = 7;
    CHECK_THROWS_AS(Tokenizer(bad_s, 64, 64, rng), ConfigError);
    TokenizerConfig nine;
    nine.S = 9; // 64 not divisible by 3
    CHECK_THROWS_AS(Tokenizer(nine, 64, 64, rng), ConfigError);
    CHECK_NOTHROW(Tokenizer(nine, 60, 60, rng));
    TokenizerConfig slow;
    slow.motion_rate = 0.5;
    CHECK_THROWS_AS(Tokenizer(slow, 64, 64, rng), ConfigError);
}

TEST_CASE("token dump lists every entry with role and window", "[tokenizer]") {
    Tokenizer tok = make_tokenizer();
    VideoClip c = gray_clip(16);
    auto enc = tok.tokenize_video(c);
    Json j = token_dump(tok.cfg, enc.seq);
    REQUIRE(j["entries"].size() == 27);
    CHECK(j["config"]["s"] == 16);
    CHECK(j["entries"][0]["role"] == "spatial");
    CHECK(j["entries"][0]["t_window"] == -1);
    CHECK(j["entries"][26]["role"] == "motion");
    CHECK(j["entries"][26]["t_window"] == 10);
}
