#pragma once

#include <fstream>
#include <set>
#include <string>

#include "vtok/dataset.hpp"
#include "vtok/trainer.hpp"

// Run configuration: one versioned JSON document covering data, model, and
// training knobs. Parsing is strict; an unknown key anywhere is an error,
// because a silently ignored typo ("lamda_dec") is worse than a refusal.
namespace vtok {

inline constexpr int kConfigVersion = 1;

namespace detail_cfg {

inline void expect_object(const Json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError("config: '" + where + "' must be a JSON object");
}

inline void reject_unknown(const Json& j, const std::string& where, const std::set<std::string>& allowed) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("config: unknown key '" + (where.empty() ? it.key() : where + "." + it.key()) + "'");
}

template <typename T>
T get_or(const Json& j, const std::string& key, T fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception& e) {
        throw ConfigError("config: bad value for '" + where + "." + key + "': " + e.what());
    }
}

} // namespace detail_cfg

struct RunConfig {
    std::string data_dir{"data"};
    DatasetSizes sizes;
    std::uint64_t data_seed{9000};
    std::size_t canvas{64};
    BundleConfig bundle; // H/W filled from canvas
    TrainConfig train;   // seed filled from the top-level seed
    std::uint64_t seed{1};
    std::string out{"runs/default"};

    void validate() const {
        bundle.validate();
        train.validate();
        if (data_dir.empty() || out.empty()) throw ConfigError("config: data dir and out dir must be non-empty");
    }

    Json to_json() const {
        Json j;
        j["version"] = kConfigVersion;
        j["data"] = Json{{"dir", data_dir}, {"train", sizes.train}, {"val", sizes.val},
                         {"test", sizes.test}, {"seed", data_seed}, {"canvas", canvas}};
        j["tokenizer"] = Json{{"s", bundle.tok.S},
                              {"motion_rate", bundle.tok.motion_rate},
                              {"d_v", bundle.tok.d_v},
                              {"k_spatial", bundle.tok.K_spatial},
                              {"k_motion", bundle.tok.K_motion},
                              {"frame_sampling", bundle.frame_sampling}};
        j["model"] = Json{{"layers", bundle.model.n_layers},
                          {"d_model", bundle.model.d_model},
                          {"heads", bundle.model.n_heads},
                          {"d_ff", bundle.model.d_ff},
                          {"max_len", bundle.model.max_len}};
        j["decoder"] = Json{{"latent_h", bundle.dec.latent_h}, {"latent_w", bundle.dec.latent_w},
                            {"hidden", bundle.dec.hidden},     {"t_embed", bundle.dec.t_embed},
                            {"steps", bundle.dec.n_steps},     {"beta_min", bundle.dec.beta_min},
                            {"beta_max", bundle.dec.beta_max}, {"loss_norm", bundle.dec.loss_norm}};
        j["train"] = Json{{"steps", train.steps},
                          {"batch", train.batch},
                          {"lr", train.lr},
                          {"lambda_vis", train.lambda_vis},
                          {"lambda_dec", train.lambda_dec},
                          {"ema_decay", train.ema_decay},
                          {"checkpoint_every", train.checkpoint_every}};
        j["seed"] = seed;
        j["out"] = out;
        return j;
    }

    static RunConfig from_json(const Json& j) {
        using detail_cfg::get_or;
        detail_cfg::expect_object(j, "config");
        detail_cfg::reject_unknown(j, "", {"version", "data", "tokenizer", "model", "decoder", "train", "seed", "out"});
        if (!j.contains("version")) throw ConfigError("config: missing required 'version'");
        const int v = get_or<int>(j, "version", 0, "");
        if (v != kConfigVersion)
            throw ConfigError("config: unsupported version " + std::to_string(v) + " (expected " +
                              std::to_string(kConfigVersion) + ")");
        RunConfig c;
        if (j.contains("data")) {
            const Json& d = j.at("data");
            detail_cfg::expect_object(d, "data");
            detail_cfg::reject_unknown(d, "data", {"dir", "train", "val", "test", "seed", "canvas"});
            c.data_dir = get_or<std::string>(d, "dir", c.data_dir, "data");
            c.sizes.train = get_or<std::size_t>(d, "train", c.sizes.train, "data");
            c.sizes.val = get_or<std::size_t>(d, "val", c.sizes.val, "data");
            c.sizes.test = get_or<std::size_t>(d, "test", c.sizes.test, "data");
            c.data_seed = get_or<std::uint64_t>(d, "seed", c.data_seed, "data");
            c.canvas = get_or<std::size_t>(d, "canvas", c.canvas, "data");
        }
        if (j.contains("tokenizer")) {
            const Json& t = j.at("tokenizer");
            detail_cfg::expect_object(t, "tokenizer");
            detail_cfg::reject_unknown(t, "tokenizer",
                                       {"s", "motion_rate", "d_v", "k_spatial", "k_motion", "frame_sampling"});
            c.bundle.tok.S = get_or<std::size_t>(t, "s", c.bundle.tok.S, "tokenizer");
            c.bundle.tok.motion_rate = get_or<double>(t, "motion_rate", c.bundle.tok.motion_rate, "tokenizer");
            c.bundle.tok.d_v = get_or<std::size_t>(t, "d_v", c.bundle.tok.d_v, "tokenizer");
            c.bundle.tok.K_spatial = get_or<std::size_t>(t, "k_spatial", c.bundle.tok.K_spatial, "tokenizer");
            c.bundle.tok.K_motion = get_or<std::size_t>(t, "k_motion", c.bundle.tok.K_motion, "tokenizer");
            c.bundle.frame_sampling = get_or<std::size_t>(t, "frame_sampling", c.bundle.frame_sampling, "tokenizer");
        }
        if (j.contains("model")) {
            const Json& m = j.at("model");
            detail_cfg::expect_object(m, "model");
            detail_cfg::reject_unknown(m, "model", {"layers", "d_model", "heads", "d_ff", "max_len"});
            c.bundle.model.n_layers = get_or<std::size_t>(m, "layers", c.bundle.model.n_layers, "model");
            c.bundle.model.d_model = get_or<std::size_t>(m, "d_model", c.bundle.model.d_model, "model");
            c.bundle.model.n_heads = get_or<std::size_t>(m, "heads", c.bundle.model.n_heads, "model");
            c.bundle.model.d_ff = get_or<std::size_t>(m, "d_ff", c.bundle.model.d_ff, "model");
            c.bundle.model.max_len = get_or<std::size_t>(m, "max_len", c.bundle.model.max_len, "model");
        }
        if (j.contains("decoder")) {
            const Json& d = j.at("decoder");
            detail_cfg::expect_object(d, "decoder");
            detail_cfg::reject_unknown(
                d, "decoder", {"latent_h", "latent_w", "hidden", "t_embed", "steps", "beta_min", "beta_max", "loss_norm"});
            c.bundle.dec.latent_h = get_or<std::size_t>(d, "latent_h", c.bundle.dec.latent_h, "decoder");
            c.bundle.dec.latent_w = get_or<std::size_t>(d, "latent_w", c.bundle.dec.latent_w, "decoder");
            c.bundle.dec.hidden = get_or<std::size_t>(d, "hidden", c.bundle.dec.hidden, "decoder");
            c.bundle.dec.t_embed = get_or<std::size_t>(d, "t_embed", c.bundle.dec.t_embed, "decoder");
            c.bundle.dec.n_steps = get_or<std::size_t>(d, "steps", c.bundle.dec.n_steps, "decoder");
            c.bundle.dec.beta_min = get_or<double>(d, "beta_min", c.bundle.dec.beta_min, "decoder");
            c.bundle.dec.beta_max = get_or<double>(d, "beta_max", c.bundle.dec.beta_max, "decoder");
            c.bundle.dec.loss_norm = get_or<std::string>(d, "loss_norm", c.bundle.dec.loss_norm, "decoder");
        }
        if (j.contains("train")) {
            const Json& t = j.at("train");
            detail_cfg::expect_object(t, "train");
            detail_cfg::reject_unknown(
                t, "train", {"steps", "batch", "lr", "lambda_vis", "lambda_dec", "ema_decay", "checkpoint_every"});
            c.train.steps = get_or<std::size_t>(t, "steps", c.train.steps, "train");
            c.train.batch = get_or<std::size_t>(t, "batch", c.train.batch, "train");
            c.train.lr = get_or<double>(t, "lr", c.train.lr, "train");
            c.train.lambda_vis = get_or<double>(t, "lambda_vis", c.train.lambda_vis, "train");
            c.train.lambda_dec = get_or<double>(t, "lambda_dec", c.train.lambda_dec, "train");
            c.train.ema_decay = get_or<double>(t, "ema_decay", c.train.ema_decay, "train");
            c.train.checkpoint_every = get_or<std::size_t>(t, "checkpoint_every", c.train.checkpoint_every, "train");
        }
        c.seed = get_or<std::uint64_t>(j, "seed", c.seed, "");
        c.out = get_or<std::string>(j, "out", c.out, "");
        c.bundle.H = c.bundle.W = c.canvas;
        c.bundle.model.d_v = c.bundle.tok.d_v;
        c.train.seed = c.seed;
        c.validate();
        return c;
    }

    static RunConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("config: cannot open " + path);
        Json j;
        try {
            j = Json::parse(in);
        } catch (const Json::exception& e) {
            throw ConfigError("config: " + path + " is not valid JSON: " + std::string(e.what()));
        }
        return from_json(j);
    }
};

} // namespace vtok
