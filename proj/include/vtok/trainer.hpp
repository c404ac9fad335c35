#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vtok/checkpoint.hpp"
#include "vtok/dataset.hpp"
#include "vtok/decoder.hpp"
#include "vtok/mllm.hpp"
#include "vtok/optimizer.hpp"
#include "vtok/tokenizer.hpp"

// Joint training loop. Steps alternate one understanding batch with one
// generation batch; the decoder is a separate optimizer group so a zero
// decoder weight provably never touches its parameters (AdamW weight decay
// would otherwise drift them even with zero gradients). All randomness per
// step derives from the run seed and the step index, which is what makes
// checkpoint resume bit-exact.
namespace vtok {

struct BundleConfig {
    TokenizerConfig tok;
    ModelConfig model;
    DecoderConfig dec;
    std::size_t H{64}, W{64};
    std::size_t frame_sampling{0}; // 0 = decoupled; n > 0 = n evenly sampled frames baseline

    void validate() const {
        tok.validate();
        model.validate();
        dec.validate();
        if (model.d_v != tok.d_v) throw ConfigError("bundle: model d_v must match tokenizer d_v");
        if (H < 1 || W < 1) throw ConfigError("bundle: empty canvas");
    }
};

struct ModelBundle {
    BundleConfig cfg;
    Tokenizer tok;
    Mllm model;
    VideoDecoder dec;
    ad::ParamMap params;

    ModelBundle(const BundleConfig& c, std::uint64_t seed)
        : cfg(validated(c)), tok(make_tok(cfg, seed)), model(make_model(cfg, seed)), dec(make_dec(cfg, seed)) {
        tok.register_params(params);
        model.register_params(params);
        dec.register_params(params);
    }

    Tokenizer::Encoded encode(const VideoClip& clip) const {
        return cfg.frame_sampling ? tok.frame_sampling_tokenize(clip, cfg.frame_sampling) : tok.tokenize_video(clip);
    }

    std::size_t visual_tokens_for(std::size_t T, double fps) const {
        if (cfg.frame_sampling) return cfg.tok.S * cfg.frame_sampling;
        return token_budget(static_cast<double>(T - 1) / fps, cfg.tok.S, cfg.tok.motion_rate);
    }

private:
    static BundleConfig validated(BundleConfig c) {
        c.validate();
        return c;
    }
    static Tokenizer make_tok(const BundleConfig& c, std::uint64_t seed) {
        Rng r = Rng(seed).child(0x70c1);
        return Tokenizer(c.tok, c.H, c.W, r);
    }
    static Mllm make_model(const BundleConfig& c, std::uint64_t seed) {
        Rng r = Rng(seed).child(0x30d3);
        return Mllm(c.model, c.tok.K_spatial, c.tok.K_motion, r);
    }
    static VideoDecoder make_dec(const BundleConfig& c, std::uint64_t seed) {
        Rng r = Rng(seed).child(0xd3c0);
        return VideoDecoder(c.dec, c.tok, r);
    }
};

// Restore parameter values (and codebooks) from a checkpoint. prefer_ema
// swaps in the ".ema" shadow where present; evaluation wants the averaged
// weights, resume wants the raw ones plus optimizer state.
inline void load_bundle_params(ModelBundle& b, const NamedTensors& entries, bool prefer_ema) {
    for (auto& [name, p] : b.params) {
        auto it = prefer_ema ? entries.find(name + ".ema") : entries.end();
        if (it == entries.end()) it = entries.find(name);
        if (it == entries.end()) throw IoError("checkpoint is missing parameter '" + name + "'");
        if (it->second.shape != p->value.shape) throw ShapeError("checkpoint shape mismatch for '" + name + "'");
        p->value = it->second;
    }
    b.tok.import_state(entries);
}

struct TrainConfig {
    std::size_t steps{5000};
    std::size_t batch{16};
    std::size_t checkpoint_every{500};
    double lr{3e-4};
    double lambda_vis{1.0};
    double lambda_dec{1.0};
    double ema_decay{0.999};
    std::uint64_t seed{1};

    void validate() const {
        if (steps < 1 || batch < 1 || checkpoint_every < 1) throw ConfigError("train: steps/batch/checkpoint_every must be >= 1");
        if (lr <= 0) throw ConfigError("train: lr must be positive");
        if (lambda_vis < 0 || lambda_dec < 0) throw ConfigError("train: loss weights must be >= 0");
        if (!(ema_decay >= 0 && ema_decay < 1)) throw ConfigError("train: ema_decay must lie in [0,1)");
    }
};

struct StepLog {
    std::size_t step{0};
    double l_under{0}, l_vis{0}, l_dec{0};
    double combined{0};
};

struct TrainResult {
    std::vector<StepLog> logs; // steps run by this call only
};

class Trainer {
public:
    Trainer(ModelBundle& bundle, std::vector<TaskTriplet> tasks, const TrainConfig& cfg)
        : bundle_(bundle), tasks_(std::move(tasks)), cfg_(cfg) {
        cfg_.validate();
        if (tasks_.empty()) throw TrainError("trainer: empty task corpus");
        for (const auto& t : tasks_) clips_.push_back(render_scene(t.scene));
        // Optimize transformer and decoder weights only. The encoder stays
        // at its init (a fixed random projection): codebooks track its
        // static features by EMA, so token ids settle early and the visual
        // LM is not chasing moving targets. Training the encoder through
        // the language losses makes whole clusters of ids flip whenever an
        // entry drifts across a cluster boundary.
        for (const auto& [name, p] : bundle_.params) {
            if (is_dec_param(name)) dec_params_.emplace(name, p);
            else if (!is_tok_param(name)) main_params_.emplace(name, p);
        }
        AdamWConfig oc;
        oc.lr = cfg_.lr;
        oc.ema_decay = cfg_.ema_decay;
        opt_main_ = std::make_unique<AdamW>(oc, main_params_);
        opt_dec_ = std::make_unique<AdamW>(oc, dec_params_);
    }

    std::size_t trained_steps() const { return trained_steps_; }
    const std::vector<TaskTriplet>& tasks() const { return tasks_; }

    // One optimizer step. Odd steps train question answering, even steps
    // train visual token prediction plus (when weighted) the decoder.
    StepLog run_step(std::size_t step_index) {
        if (step_index != trained_steps_ + 1)
            throw TrainError("trainer: steps must run in order; expected " + std::to_string(trained_steps_ + 1));
        Rng step_rng = Rng(cfg_.seed).child(0x57e9u ^ static_cast<std::uint64_t>(step_index));
        StepLog log;
        log.step = step_index;
        try {
            step_body(step_index, step_rng, log);
        } catch (const TrainError&) {
            throw;
        } catch (const Error& e) {
            // nothing was committed: parameters, optimizer state, and the
            // on-disk checkpoint are all from the last completed step
            throw TrainError("trainer: step " + std::to_string(step_index) + " aborted: " + e.what());
        }
        trained_steps_ = step_index;
        return log;
    }

private:
    void step_body(std::size_t step_index, Rng& step_rng, StepLog& log) {
        const bool understanding = step_index % 2 == 1;
        std::vector<ad::Var> lm_losses, dec_losses;
        std::vector<Tokenizer::Encoded> encs;
        for (std::size_t b = 0; b < cfg_.batch; ++b) {
            const auto pick = static_cast<std::size_t>(step_rng.uniform_int(0, static_cast<int>(tasks_.size()) - 1));
            const TaskTriplet& task = tasks_[pick];
            auto enc = bundle_.encode(clips_[pick]);
            if (understanding) {
                lm_losses.push_back(bundle_.model.loss_understanding(task.question, enc, task.choices[static_cast<std::size_t>(task.answer)]));
            } else {
                lm_losses.push_back(bundle_.model.loss_visual_lm(task.prompt, enc));
                // frame-sampling streams have no motion windows for the
                // decoder to condition on, so the baseline trains without it
                if (cfg_.lambda_dec > 0 && bundle_.cfg.frame_sampling == 0)
                    dec_losses.push_back(bundle_.dec.diffusion_loss(enc.features, clips_[pick], step_rng));
            }
            encs.push_back(std::move(enc));
        }
        // one codebook update per step: every item encodes against the
        // step-start codebooks, and the dead-entry age stays in step units
        bundle_.tok.update_codebooks(encs, step_rng);
        ad::Var lm = batch_mean(lm_losses);
        ad::Var loss;
        if (understanding) {
            log.l_under = lm->value.v[0];
            loss = lm;
        } else {
            log.l_vis = lm->value.v[0];
            loss = ad::scale(lm, cfg_.lambda_vis);
            if (!dec_losses.empty()) {
                ad::Var dl = batch_mean(dec_losses);
                log.l_dec = dl->value.v[0];
                loss = ad::add(loss, ad::scale(dl, cfg_.lambda_dec));
            }
        }
        log.combined = log.l_under + cfg_.lambda_vis * log.l_vis + cfg_.lambda_dec * log.l_dec;
        if (!std::isfinite(log.combined))
            throw TrainError("trainer: non-finite loss at step " + std::to_string(step_index) + "; aborting before any update");

        ad::zero_grad(bundle_.params);
        ad::backward(loss);
        for (const auto& [name, p] : bundle_.params)
            for (double g : p->grad)
                if (!std::isfinite(g))
                    throw TrainError("trainer: non-finite gradient in '" + name + "' at step " + std::to_string(step_index));
        opt_main_->step(main_params_);
        if (!dec_losses.empty()) opt_dec_->step(dec_params_);
    }

public:

    // Corpus-level losses with no state change; the memorization check
    // watches these fall.
    struct CorpusLosses {
        double under{0}, vis{0};
    };
    CorpusLosses eval_losses() const {
        CorpusLosses out;
        for (std::size_t i = 0; i < tasks_.size(); ++i) {
            auto enc = bundle_.encode(clips_[i]);
            out.under += bundle_.model.loss_understanding(tasks_[i].question, enc, tasks_[i].choices[static_cast<std::size_t>(tasks_[i].answer)])->value.v[0];
            out.vis += bundle_.model.loss_visual_lm(tasks_[i].prompt, enc)->value.v[0];
        }
        out.under /= static_cast<double>(tasks_.size());
        out.vis /= static_cast<double>(tasks_.size());
        return out;
    }

    // Everything needed to continue: raw values, EMA shadows, moments, per
    // group step counts, codebook state, completed step count.
    void save(const std::string& path) const {
        NamedTensors entries;
        for (const auto& [name, p] : bundle_.params) entries[name] = p->value;
        pack_opt(entries, *opt_main_, main_params_, "__step.main");
        pack_opt(entries, *opt_dec_, dec_params_, "__step.dec");
        entries["__trained"] = scalar(static_cast<double>(trained_steps_));
        bundle_.tok.export_state(entries);
        save_checkpoint(path, entries);
    }

    void load(const std::string& path) {
        const NamedTensors entries = load_checkpoint(path);
        load_bundle_params(bundle_, entries, /*prefer_ema=*/false);
        unpack_opt(entries, *opt_main_, main_params_, "__step.main");
        unpack_opt(entries, *opt_dec_, dec_params_, "__step.dec");
        trained_steps_ = static_cast<std::size_t>(std::llround(at(entries, "__trained").v[0]));
    }

    // Steps from trained_steps()+1 through cfg.steps, logging one CSV row
    // per step and checkpointing every checkpoint_every steps plus at the
    // end. A thrown TrainError leaves the last checkpoint on disk.
    TrainResult run(const std::string& out_dir) {
        std::filesystem::create_directories(out_dir);
        const bool fresh = trained_steps_ == 0;
        std::ofstream csv(out_dir + "/train_log.csv", fresh ? std::ios::trunc : std::ios::app);
        if (!csv) throw IoError("trainer: cannot write log in " + out_dir);
        if (fresh) csv << "step,loss_under,loss_vis,loss_dec,combined\n";
        TrainResult result;
        for (std::size_t s = trained_steps_ + 1; s <= cfg_.steps; ++s) {
            StepLog log = run_step(s);
            char row[160];
            std::snprintf(row, sizeof row, "%zu,%.17g,%.17g,%.17g,%.17g\n", log.step, log.l_under, log.l_vis,
                          log.l_dec, log.combined);
            csv << row;
            csv.flush();
            if (s % cfg_.checkpoint_every == 0 || s == cfg_.steps) save(out_dir + "/checkpoint.vtok");
            result.logs.push_back(log);
        }
        return result;
    }

    static bool is_dec_param(const std::string& name) { return name.rfind("dec.", 0) == 0; }
    static bool is_tok_param(const std::string& name) { return name.rfind("tok.", 0) == 0; }

private:
    static ad::Var batch_mean(const std::vector<ad::Var>& losses) {
        ad::Var acc = losses.at(0);
        for (std::size_t i = 1; i < losses.size(); ++i) acc = ad::add(acc, losses[i]);
        return ad::scale(acc, 1.0 / static_cast<double>(losses.size()));
    }

    static Tensor scalar(double x) {
        Tensor t({1});
        t.v[0] = x;
        return t;
    }

    static Tensor shaped(const Shape& shape, const std::vector<double>& v) {
        Tensor t(shape);
        if (t.v.size() != v.size()) throw ShapeError("trainer: optimizer state size mismatch");
        t.v = v;
        return t;
    }

    static const Tensor& at(const NamedTensors& entries, const std::string& key) {
        auto it = entries.find(key);
        if (it == entries.end()) throw IoError("checkpoint is missing '" + key + "'");
        return it->second;
    }

    static void pack_opt(NamedTensors& entries, const AdamW& opt, const ad::ParamMap& group, const std::string& step_key) {
        for (const auto& [name, p] : group) {
            entries[name + ".m"] = shaped(p->value.shape, opt.m().at(name));
            entries[name + ".v"] = shaped(p->value.shape, opt.v().at(name));
            entries[name + ".ema"] = shaped(p->value.shape, opt.ema().at(name));
        }
        entries[step_key] = scalar(static_cast<double>(opt.step_count()));
    }

    static void unpack_opt(const NamedTensors& entries, AdamW& opt, const ad::ParamMap& group, const std::string& step_key) {
        std::map<std::string, std::vector<double>> m, v, ema;
        for (const auto& [name, p] : group) {
            m[name] = at(entries, name + ".m").v;
            v[name] = at(entries, name + ".v").v;
            ema[name] = at(entries, name + ".ema").v;
        }
        opt.load_state(static_cast<std::uint64_t>(std::llround(at(entries, step_key).v[0])), std::move(m), std::move(v),
                       std::move(ema));
    }

    ModelBundle& bundle_;
    std::vector<TaskTriplet> tasks_;
    std::vector<VideoClip> clips_;
    TrainConfig cfg_;
    ad::ParamMap main_params_, dec_params_;
    std::unique_ptr<AdamW> opt_main_, opt_dec_;
    std::size_t trained_steps_{0};
};

} // namespace vtok
