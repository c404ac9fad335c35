// Command line front end. Five subcommands cover the pipeline: build-data
// makes task splits, train fits a model, tokenize inspects one clip's
// token stream, eval scores a checkpoint (or a protocol stub) on a suite,
// ablate sweeps tokenizer variants. Exit codes: 0 success, 2 usage or
// configuration problems, 1 runtime failures.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vtok/config.hpp"
#include "vtok/eval.hpp"
#include "vtok/trainer.hpp"

namespace fs = std::filesystem;
using namespace vtok;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_override;
    std::uint64_t seed_override{0};
    bool seed_given{false};
};

void require_file(const std::string& path, const char* what) {
    if (!fs::exists(path)) throw ConfigError(std::string(what) + " not found: " + path);
}

RunConfig load_config(const CommonOpts& o) {
    require_file(o.config_path, "config file");
    RunConfig cfg = RunConfig::from_file(o.config_path);
    if (o.seed_given) {
        cfg.seed = o.seed_override;
        cfg.train.seed = o.seed_override;
    }
    if (!o.out_override.empty()) cfg.out = o.out_override;
    return cfg;
}

// Every command drops a manifest next to its outputs: what ran, with what
// arguments, what it wrote, and how long it took. Timing lives here and
// only here; result files must be bit-stable across reruns.
void write_manifest(const std::string& dir, const std::string& command, const std::vector<std::string>& args,
                    const std::vector<std::string>& outputs, double wall_s) {
    Json j;
    j["command"] = command;
    j["args"] = args;
    j["outputs"] = outputs;
    j["wall_clock_s"] = wall_s;
    std::ofstream f(dir + "/manifest.json", std::ios::binary);
    if (!f) throw IoError("cannot write manifest in " + dir);
    f << j.dump(2) << "\n";
}

std::vector<std::string> arg_vector(int argc, char** argv) {
    std::vector<std::string> v;
    for (int i = 1; i < argc; ++i) v.emplace_back(argv[i]);
    return v;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_build_data(const CommonOpts& o, const std::vector<std::string>& args) {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg = load_config(o);
    const std::string dir = o.out_override.empty() ? cfg.data_dir : o.out_override;
    const std::uint64_t seed = o.seed_given ? o.seed_override : cfg.data_seed;
    build_dataset(dir, cfg.sizes, seed);
    std::printf("wrote %zu train / %zu val / %zu test tasks under %s\n", cfg.sizes.train, cfg.sizes.val,
                cfg.sizes.test, dir.c_str());
    write_manifest(dir, "build-data", args, {"train.jsonl", "val.jsonl", "test.jsonl"}, seconds_since(t0));
    return 0;
}

int cmd_train(const CommonOpts& o, const std::vector<std::string>& args, bool resume) {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg = load_config(o);
    const std::string train_path = cfg.data_dir + "/train.jsonl";
    require_file(train_path, "training split");
    std::vector<TaskTriplet> tasks = load_tasks(train_path);

    ModelBundle bundle(cfg.bundle, cfg.seed);
    Trainer trainer(bundle, std::move(tasks), cfg.train);
    fs::create_directories(cfg.out);
    const std::string ckpt = cfg.out + "/checkpoint.vtok";
    if (resume) {
        require_file(ckpt, "checkpoint to resume");
        trainer.load(ckpt);
        std::fprintf(stderr, "resuming from step %zu\n", trainer.trained_steps());
    }
    {
        std::ofstream f(cfg.out + "/model_manifest.json", std::ios::binary);
        if (!f) throw IoError("cannot write model manifest in " + cfg.out);
        f << cfg.to_json().dump(2) << "\n";
    }
    TrainResult res = trainer.run(cfg.out);
    if (!res.logs.empty()) {
        const StepLog& last = res.logs.back();
        std::printf("trained %zu steps; final combined loss %.6f\n", trainer.trained_steps(), last.combined);
    } else {
        std::printf("nothing to do; already at step %zu\n", trainer.trained_steps());
    }
    write_manifest(cfg.out, "train", args, {"checkpoint.vtok", "train_log.csv", "model_manifest.json"},
                   seconds_since(t0));
    return 0;
}

int cmd_tokenize(const CommonOpts& o, const std::vector<std::string>& args, const std::string& scene_path,
                 std::size_t frames, const std::string& ckpt_path) {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg = load_config(o);
    require_file(scene_path, "scene file");
    std::ifstream in(scene_path);
    Json sj;
    try {
        sj = Json::parse(in);
    } catch (const Json::exception& e) {
        throw ConfigError("scene file is not valid JSON: " + std::string(e.what()));
    }
    SceneProgram scene = scene_from_json(sj);
    cfg.bundle.H = scene.H;
    cfg.bundle.W = scene.W;
    if (frames) cfg.bundle.frame_sampling = frames;
    ModelBundle bundle(cfg.bundle, cfg.seed);
    if (!ckpt_path.empty()) {
        require_file(ckpt_path, "checkpoint");
        load_bundle_params(bundle, load_checkpoint(ckpt_path), /*prefer_ema=*/true);
    }

    VideoClip clip = render_scene(scene);
    auto enc = bundle.encode(clip);
    const std::size_t n_spatial = enc.seq.S;
    const std::size_t n_motion = enc.seq.entries.size() - n_spatial;
    std::printf("%zu tokens (%zu spatial + %zu motion)\n", enc.seq.entries.size(), n_spatial, n_motion);
    for (std::size_t i = 0; i < enc.seq.entries.size(); ++i) {
        const TokenEntry& e = enc.seq.entries[i];
        if (e.role == TokenRole::spatial && e.t_window < 0)
            std::printf("  [%zu] spatial code %d\n", i, e.code);
        else if (e.role == TokenRole::spatial)
            std::printf("  [%zu] spatial code %d (frame %d)\n", i, e.code, e.t_window);
        else
            std::printf("  [%zu] motion code %d (window %d)\n", i, e.code, e.t_window);
    }
    fs::create_directories(cfg.out);
    {
        std::ofstream f(cfg.out + "/tokens.json", std::ios::binary);
        if (!f) throw IoError("cannot write token dump in " + cfg.out);
        f << token_dump(bundle.cfg.tok, enc.seq).dump(2) << "\n";
    }
    write_manifest(cfg.out, "tokenize", args, {"tokens.json"}, seconds_since(t0));
    return 0;
}

int cmd_eval(const CommonOpts& o, const std::vector<std::string>& args, const std::string& suite_path,
             const std::string& ckpt_path, const std::string& mode, const std::string& stub) {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg = load_config(o);
    if (mode != "tvalign" && mode != "understanding")
        throw ConfigError("unknown eval mode '" + mode + "' (expected tvalign or understanding)");
    if (!stub.empty() && stub != "oracle" && stub != "random")
        throw ConfigError("unknown stub '" + stub + "' (expected oracle or random)");
    require_file(suite_path, "suite file");
    std::vector<TaskTriplet> suite = load_tasks(suite_path);
    if (suite.empty()) throw ConfigError("suite is empty: " + suite_path);

    // leak guard: if the training split is on disk, enforce seed disjointness
    const std::string train_path = cfg.data_dir + "/train.jsonl";
    if (fs::exists(train_path)) check_split_disjoint(load_tasks(train_path), suite);

    // paths are not part of the result's identity; reports must be byte
    // identical across runs that differ only in where they write
    Json fingerprint = cfg.to_json();
    fingerprint.erase("out");
    fingerprint["data"].erase("dir");
    fingerprint["eval_mode"] = mode;
    if (!stub.empty()) fingerprint["stub"] = stub;

    EvalReport report;
    if (!stub.empty()) {
        const auto& s = suite.front().scene;
        const std::size_t tokens =
            cfg.bundle.frame_sampling
                ? cfg.bundle.tok.S * cfg.bundle.frame_sampling
                : token_budget(static_cast<double>(s.T - 1) / s.fps, cfg.bundle.tok.S, cfg.bundle.tok.motion_rate);
        report = run_suite(suite, stub == "oracle" ? AnswerFn(oracle_stub_answer) : AnswerFn(random_stub_answer),
                           cfg.seed, fingerprint, tokens);
    } else {
        if (mode == "tvalign" && cfg.bundle.frame_sampling)
            throw ConfigError("tvalign scoring needs decoupled tokens; the frame sampling baseline cannot generate");
        const std::string path = ckpt_path.empty() ? cfg.out + "/checkpoint.vtok" : ckpt_path;
        require_file(path, "checkpoint");
        ModelBundle bundle(cfg.bundle, cfg.seed);
        load_bundle_params(bundle, load_checkpoint(path), /*prefer_ema=*/true);
        EvalBundle eb{bundle.tok, bundle.model, bundle.dec, cfg.bundle.frame_sampling};
        report = mode == "tvalign" ? run_tv_align(eb, suite, cfg.seed, fingerprint)
                                   : run_understanding(eb, suite, cfg.seed, fingerprint);
    }

    fs::create_directories(cfg.out);
    emit_report(report, cfg.out, "report");
    for (const auto& [cat, st] : report.per_category)
        std::printf("%-12s %6.2f%%  (%zu/%zu)\n", category_name(cat), st.acc_percent(), st.correct, st.total);
    std::printf("%-12s %6.2f%%\n", "average", report.average);
    write_manifest(cfg.out, "eval", args, {"report.json", "report.csv", "report.tsv"}, seconds_since(t0));
    return 0;
}

// One ablation cell: a named tokenizer variant trained and scored under
// the shared config. Failures are recorded per cell so a sweep survives a
// bad configuration in the middle.
struct AblationCell {
    std::string name;
    TokenizerConfig tok;
    std::size_t frame_sampling{0};
};

int cmd_ablate(const CommonOpts& o, const std::vector<std::string>& args, const std::string& grid_path) {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg = load_config(o);
    require_file(grid_path, "grid file");
    std::ifstream in(grid_path);
    Json gj;
    try {
        gj = Json::parse(in);
    } catch (const Json::exception& e) {
        throw ConfigError("grid file is not valid JSON: " + std::string(e.what()));
    }
    detail_cfg::expect_object(gj, "grid");
    detail_cfg::reject_unknown(gj, "grid", {"mode", "steps", "suite", "cells"});
    const std::string mode = detail_cfg::get_or<std::string>(gj, "mode", "understanding", "grid");
    if (mode != "tvalign" && mode != "understanding") throw ConfigError("grid: unknown mode '" + mode + "'");
    const auto steps = detail_cfg::get_or<std::size_t>(gj, "steps", cfg.train.steps, "grid");
    const std::string suite_path = detail_cfg::get_or<std::string>(gj, "suite", cfg.data_dir + "/val.jsonl", "grid");
    if (!gj.contains("cells") || !gj.at("cells").is_array() || gj.at("cells").empty())
        throw ConfigError("grid: needs a non-empty 'cells' array");

    std::vector<AblationCell> cells;
    for (const Json& cj : gj.at("cells")) {
        detail_cfg::expect_object(cj, "grid.cells[]");
        detail_cfg::reject_unknown(cj, "grid.cells[]",
                                   {"name", "s", "motion_rate", "k_spatial", "k_motion", "frame_sampling"});
        AblationCell cell;
        cell.tok = cfg.bundle.tok;
        if (!cj.contains("name")) throw ConfigError("grid: every cell needs a name");
        cell.name = cj.at("name").get<std::string>();
        cell.tok.S = detail_cfg::get_or<std::size_t>(cj, "s", cell.tok.S, "grid.cells[]");
        cell.tok.motion_rate = detail_cfg::get_or<double>(cj, "motion_rate", cell.tok.motion_rate, "grid.cells[]");
        cell.tok.K_spatial = detail_cfg::get_or<std::size_t>(cj, "k_spatial", cell.tok.K_spatial, "grid.cells[]");
        cell.tok.K_motion = detail_cfg::get_or<std::size_t>(cj, "k_motion", cell.tok.K_motion, "grid.cells[]");
        cell.frame_sampling = detail_cfg::get_or<std::size_t>(cj, "frame_sampling", 0, "grid.cells[]");
        for (const auto& other : cells)
            if (other.name == cell.name) throw ConfigError("grid: duplicate cell name '" + cell.name + "'");
        cells.push_back(std::move(cell));
    }

    require_file(cfg.data_dir + "/train.jsonl", "training split");
    require_file(suite_path, "suite file");
    std::vector<TaskTriplet> train_tasks = load_tasks(cfg.data_dir + "/train.jsonl");
    std::vector<TaskTriplet> suite = load_tasks(suite_path);
    check_split_disjoint(train_tasks, suite);

    fs::create_directories(cfg.out);
    Json rows = Json::array();
    std::ofstream csv(cfg.out + "/ablation.csv", std::ios::binary);
    csv << "cell,tokens";
    for (Category c : all_categories()) csv << "," << category_name(c);
    csv << ",average\n";
    std::size_t succeeded = 0;
    for (const AblationCell& cell : cells) {
        try {
            RunConfig cc = cfg;
            cc.bundle.tok = cell.tok;
            cc.bundle.frame_sampling = cell.frame_sampling;
            cc.bundle.model.d_v = cell.tok.d_v;
            cc.train.steps = steps;
            if (mode == "tvalign" && cell.frame_sampling)
                throw ConfigError("cell '" + cell.name + "': tvalign scoring needs decoupled tokens");
            ModelBundle bundle(cc.bundle, cc.seed);
            Trainer trainer(bundle, train_tasks, cc.train);
            trainer.run(cfg.out + "/cells/" + cell.name);
            load_bundle_params(bundle, load_checkpoint(cfg.out + "/cells/" + cell.name + "/checkpoint.vtok"),
                               /*prefer_ema=*/true);
            EvalBundle eb{bundle.tok, bundle.model, bundle.dec, cell.frame_sampling};
            Json fp = cc.to_json();
            fp.erase("out");
            fp["data"].erase("dir");
            fp["cell"] = cell.name;
            fp["eval_mode"] = mode;
            EvalReport rep = mode == "tvalign" ? run_tv_align(eb, suite, cc.seed, fp)
                                               : run_understanding(eb, suite, cc.seed, fp);
            Json row;
            row["cell"] = cell.name;
            row["tokens"] = rep.tokens;
            row["average"] = rep.average;
            for (const auto& [cat, st] : rep.per_category) row[category_name(cat)] = st.acc_percent();
            rows.push_back(row);
            csv << cell.name << "," << rep.tokens;
            for (const auto& [cat, st] : rep.per_category) csv << "," << fmt_acc(st.acc_percent());
            csv << "," << fmt_acc(rep.average) << "\n";
            std::printf("%-20s %4zu tokens  average %6.2f%%\n", cell.name.c_str(), rep.tokens, rep.average);
            ++succeeded;
        } catch (const Error& e) {
            Json row;
            row["cell"] = cell.name;
            row["error"] = e.what();
            rows.push_back(row);
            std::fprintf(stderr, "cell %s failed: %s\n", cell.name.c_str(), e.what());
        }
    }
    {
        std::ofstream f(cfg.out + "/ablation.json", std::ios::binary);
        f << Json{{"mode", mode}, {"steps", steps}, {"rows", rows}}.dump(2) << "\n";
    }
    write_manifest(cfg.out, "ablate", args, {"ablation.json", "ablation.csv"}, seconds_since(t0));
    if (succeeded == 0) throw TrainError("every ablation cell failed");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"spatial-temporal video tokenization workbench"};
    app.require_subcommand(1);

    CommonOpts common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "run configuration JSON")->required();
        sub->add_option("--out", common.out_override, "override the output directory");
        sub->add_option("--seed", common.seed_override, "override the run seed")
            ->each([&](const std::string&) { common.seed_given = true; });
    };

    CLI::App* c_data = app.add_subcommand("build-data", "generate train/val/test task splits");
    add_common(c_data);

    CLI::App* c_train = app.add_subcommand("train", "fit tokenizer, language model, and decoder");
    add_common(c_train);
    bool resume = false;
    c_train->add_flag("--resume", resume, "continue from the checkpoint in the output directory");

    CLI::App* c_tok = app.add_subcommand("tokenize", "show the token stream for one scene");
    add_common(c_tok);
    std::string scene_path, tok_ckpt;
    std::size_t frames = 0;
    c_tok->add_option("--scene", scene_path, "scene JSON to render and tokenize")->required();
    c_tok->add_option("--frames", frames, "use the n-frame sampling baseline instead of decoupled tokens");
    c_tok->add_option("--checkpoint", tok_ckpt, "load trained weights first");

    CLI::App* c_eval = app.add_subcommand("eval", "score a checkpoint or protocol stub on a task suite");
    add_common(c_eval);
    std::string suite_path, eval_ckpt, mode = "tvalign", stub;
    c_eval->add_option("--suite", suite_path, "task suite JSONL")->required();
    c_eval->add_option("--checkpoint", eval_ckpt, "checkpoint to score (default: <out>/checkpoint.vtok)");
    c_eval->add_option("--mode", mode, "tvalign (prompt to pixels) or understanding (clip to answer)");
    c_eval->add_option("--stub", stub, "oracle or random protocol stub instead of a model");

    CLI::App* c_abl = app.add_subcommand("ablate", "train and score a grid of tokenizer variants");
    add_common(c_abl);
    std::string grid_path;
    c_abl->add_option("--grid", grid_path, "grid JSON describing the cells")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const std::vector<std::string> args = arg_vector(argc, argv);
    try {
        if (app.got_subcommand(c_data)) return cmd_build_data(common, args);
        if (app.got_subcommand(c_train)) return cmd_train(common, args, resume);
        if (app.got_subcommand(c_tok)) return cmd_tokenize(common, args, scene_path, frames, tok_ckpt);
        if (app.got_subcommand(c_eval)) return cmd_eval(common, args, suite_path, eval_ckpt, mode, stub);
        if (app.got_subcommand(c_abl)) return cmd_ablate(common, args, grid_path);
        std::fprintf(stderr, "error: no subcommand\n");
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
