#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vtok/autodiff.hpp"
#include "vtok/rng.hpp"
#include "vtok/tokenizer.hpp"
#include "vtok/video.hpp"

// Token sequence back to pixels. Each frame lives as a small latent (a
// downsampled image scaled to [-1,1]); a denoising network predicts the
// noise in a corrupted latent given the clip's spatial context, the frame's
// motion token, and the timestep. A separate one-shot regression head
// serves as the cheap deterministic path for smoke tests.
namespace vtok {

struct DecoderConfig {
    std::size_t latent_h{16}, latent_w{16};
    std::size_t hidden{256};
    std::size_t t_embed{32};
    std::size_t n_steps{100};
    double beta_min{1e-4}, beta_max{2e-2};
    std::string loss_norm{"mse"}; // "mse" (default) or "l2"

    void validate() const {
        if (latent_h < 1 || latent_w < 1 || hidden < 1 || t_embed < 1)
            throw ConfigError("decoder: all sizes must be >= 1");
        if (n_steps < 2) throw ConfigError("decoder: need at least 2 denoising steps");
        if (!(beta_min > 0 && beta_max < 1 && beta_min < beta_max))
            throw ConfigError("decoder: betas must satisfy 0 < beta_min < beta_max < 1");
        if (loss_norm != "mse" && loss_norm != "l2")
            throw ConfigError("decoder: loss_norm must be 'mse' or 'l2', got '" + loss_norm + "'");
    }
    std::size_t latent_dim() const { return latent_h * latent_w * 3; }
};

// beta_t rises linearly; alpha-bar products fall strictly.
struct NoiseSchedule {
    std::vector<double> beta, alpha, abar;

    NoiseSchedule() = default;
    NoiseSchedule(std::size_t N, double bmin, double bmax) {
        if (N < 2) throw ConfigError("noise schedule: need at least 2 steps");
        if (!(bmin > 0 && bmax < 1 && bmin < bmax)) throw ConfigError("noise schedule: invalid beta range");
        beta.resize(N);
        alpha.resize(N);
        abar.resize(N);
        double prod = 1.0;
        for (std::size_t i = 0; i < N; ++i) {
            beta[i] = bmin + (bmax - bmin) * static_cast<double>(i) / static_cast<double>(N - 1);
            alpha[i] = 1.0 - beta[i];
            prod *= alpha[i];
            abar[i] = prod;
        }
    }
    std::size_t steps() const { return beta.size(); }
    // abar for index t-1 with the t=0 convention abar_0 = 1
    double abar_prev(std::size_t t_index) const { return t_index == 0 ? 1.0 : abar[t_index - 1]; }
};

class VideoDecoder {
public:
    DecoderConfig cfg;
    std::size_t d_v{64}, S{16};
    double motion_rate{6.0};
    NoiseSchedule sched;

    ad::Var eps_w1, eps_b1, eps_w2, eps_b2, temb; // denoiser
    ad::Var reg_w1, reg_b1, reg_w2, reg_b2;       // regression head, fully separate

    VideoDecoder() = default;
    VideoDecoder(const DecoderConfig& c, const TokenizerConfig& tok_cfg, Rng& rng)
        : cfg(c), d_v(tok_cfg.d_v), S(tok_cfg.S), motion_rate(tok_cfg.motion_rate) {
        cfg.validate();
        sched = NoiseSchedule(cfg.n_steps, cfg.beta_min, cfg.beta_max);
        auto w = [&](Shape shape, double scale) {
            Tensor t(shape);
            for (double& x : t.v) x = rng.normal() * scale;
            return ad::leaf(std::move(t), true);
        };
        const std::size_t in_dim = cfg.latent_dim() + 2 * d_v + cfg.t_embed;
        eps_w1 = w({in_dim, cfg.hidden}, 1.0 / std::sqrt(static_cast<double>(in_dim)));
        eps_b1 = ad::leaf(Tensor({cfg.hidden}), true);
        eps_w2 = w({cfg.hidden, cfg.latent_dim()}, 1.0 / std::sqrt(static_cast<double>(cfg.hidden)));
        eps_b2 = ad::leaf(Tensor({cfg.latent_dim()}), true);
        temb = w({cfg.n_steps, cfg.t_embed}, 0.02);
        const std::size_t reg_in = 2 * d_v;
        reg_w1 = w({reg_in, cfg.hidden}, 1.0 / std::sqrt(static_cast<double>(reg_in)));
        reg_b1 = ad::leaf(Tensor({cfg.hidden}), true);
        reg_w2 = w({cfg.hidden, cfg.latent_dim()}, 1.0 / std::sqrt(static_cast<double>(cfg.hidden)));
        reg_b2 = ad::leaf(Tensor({cfg.latent_dim()}), true);
    }

    void register_params(ad::ParamMap& params) {
        params["dec.eps.w1"] = eps_w1;
        params["dec.eps.b1"] = eps_b1;
        params["dec.eps.w2"] = eps_w2;
        params["dec.eps.b2"] = eps_b2;
        params["dec.temb"] = temb;
        params["dec.reg.w1"] = reg_w1;
        params["dec.reg.b1"] = reg_b1;
        params["dec.reg.w2"] = reg_w2;
        params["dec.reg.b2"] = reg_b2;
    }

    // names of the parameters the diffusion objective trains; the trainer
    // gates this group on lambda_dec
    static std::vector<std::string> param_names() {
        return {"dec.eps.w1", "dec.eps.b1", "dec.eps.w2", "dec.eps.b2", "dec.temb",
                "dec.reg.w1", "dec.reg.b1", "dec.reg.w2", "dec.reg.b2"};
    }

    // ---------------------------------------------------------------------
    // latents and conditioning
    // ---------------------------------------------------------------------

    // T x latent_dim, area-downsampled frames mapped to [-1,1]
    Tensor clip_latents(const VideoClip& clip) const {
        Tensor out({clip.T, cfg.latent_dim()});
        for (std::size_t t = 0; t < clip.T; ++t) {
            std::vector<double> g = downsample_frame(clip, t, cfg.latent_h, cfg.latent_w);
            for (std::size_t j = 0; j < g.size(); ++j) out.v[t * cfg.latent_dim() + j] = 2.0 * g[j] - 1.0;
        }
        return out;
    }

    // Which feature rows condition frame k: always the spatial block, plus
    // the motion row whose window covers k (frames after the key frame).
    // Exposed so tests can pin the wiring without decoding pixels.
    std::vector<int> context_rows_for_frame(std::size_t k, std::size_t T, double fps) const {
        std::vector<int> rows;
        for (std::size_t s = 0; s < S; ++s) rows.push_back(static_cast<int>(s));
        if (k >= 1) {
            const double duration = static_cast<double>(T - 1) / fps;
            if (static_cast<std::size_t>(std::llround(duration * motion_rate)) > 0)
                rows.push_back(static_cast<int>(S + window_of_frame(k, T, fps, motion_rate)));
        }
        return rows;
    }

    // T x (2 d_v): [mean spatial features | frame's motion token features].
    // Frame 0 (and any frame without a motion window) gets a zero motion
    // half, so appearance and motion stay separable in the conditioning.
    ad::Var frame_contexts(const ad::Var& features, std::size_t T, double fps) const {
        if (features->value.shape[1] != d_v) throw ShapeError("decoder: feature width mismatch");
        std::vector<std::vector<int>> spatial_group(1);
        for (std::size_t s = 0; s < S; ++s) spatial_group[0].push_back(static_cast<int>(s));
        ad::Var spatial_mean = ad::rows_mean_groups(features, spatial_group); // 1 x d_v
        ad::Var spatial_T = ad::matmul(ad::constant(Tensor::full({T, 1}, 1.0)), spatial_mean);

        const double duration = static_cast<double>(T - 1) / fps;
        const auto n_motion = T < 2 ? 0 : static_cast<std::size_t>(std::llround(duration * motion_rate));
        ad::Var motion_T;
        if (n_motion == 0) {
            motion_T = ad::constant(Tensor({T, d_v}));
        } else {
            if (features->value.shape[0] < S + n_motion)
                throw ShapeError("decoder: sequence has fewer motion rows than the clip needs");
            std::vector<int> rows;
            for (std::size_t k = 1; k < T; ++k)
                rows.push_back(static_cast<int>(S + window_of_frame(k, T, fps, motion_rate)));
            ad::Var later = ad::embedding_rows(features, rows);
            motion_T = ad::concat_rows({ad::constant(Tensor({1, d_v})), later});
        }
        return ad::concat_cols({spatial_T, motion_T});
    }

    // ---------------------------------------------------------------------
    // diffusion
    // ---------------------------------------------------------------------

    // noise estimate for noised latents x_t (T x latent_dim) at timestep t
    ad::Var eps_forward(const ad::Var& x_t, const ad::Var& contexts, std::size_t t) const {
        if (t < 1 || t > sched.steps()) throw IndexError("decoder: timestep out of schedule");
        const std::size_t T = x_t->value.shape[0];
        std::vector<int> t_rows(T, static_cast<int>(t - 1));
        ad::Var in = ad::concat_cols({x_t, contexts, ad::embedding_rows(temb, t_rows)});
        ad::Var h = ad::gelu(ad::add_rowvec(ad::matmul(in, eps_w1), eps_b1));
        return ad::add_rowvec(ad::matmul(h, eps_w2), eps_b2);
    }

    // Deterministic core: corrupt the clip's latents with the given noise
    // at timestep t, predict, and score the prediction against that noise.
    ad::Var diffusion_loss_at(const ad::Var& features, const VideoClip& clip, std::size_t t,
                              const Tensor& noise) const {
        const Tensor x0 = clip_latents(clip);
        if (!same_shape(x0, noise)) throw ShapeError("diffusion_loss: noise shape must match the clip latents");
        if (t < 1 || t > sched.steps()) throw IndexError("diffusion_loss: timestep out of schedule");
        const double a = std::sqrt(sched.abar[t - 1]);
        const double b = std::sqrt(1.0 - sched.abar[t - 1]);
        Tensor x_t(x0.shape);
        for (std::size_t i = 0; i < x0.size(); ++i) x_t.v[i] = a * x0.v[i] + b * noise.v[i];
        ad::Var eps_hat = eps_forward(ad::constant(std::move(x_t)), frame_contexts(features, clip.T, clip.fps), t);
        return cfg.loss_norm == "mse" ? ad::mse_vs(eps_hat, noise) : ad::l2_rows_vs(eps_hat, noise);
    }

    // One stochastic draw of the denoising objective: shared uniform
    // timestep across frames, fresh standard-normal noise per latent.
    ad::Var diffusion_loss(const ad::Var& features, const VideoClip& clip, Rng& rng) const {
        const auto t = static_cast<std::size_t>(rng.uniform_int(1, static_cast<int>(sched.steps())));
        Tensor noise({clip.T, cfg.latent_dim()});
        for (double& x : noise.v) x = rng.normal();
        return diffusion_loss_at(features, clip, t, noise);
    }

    // Ancestral sampling from pure noise, then block upsampling to pixels.
    VideoClip sample_video(const Tensor& features, std::size_t T_out, Rng& rng, std::size_t H = 64,
                           std::size_t W = 64, double fps = 8.0) const {
        if (T_out < 1) throw GenerationError("sample_video: need at least one frame");
        const std::size_t D = cfg.latent_dim();
        ad::Var ctx = frame_contexts(ad::constant(features), T_out, fps);
        Tensor x({T_out, D});
        for (double& v : x.v) v = rng.normal();
        for (std::size_t t = sched.steps(); t >= 1; --t) {
            const Tensor eps_hat = eps_forward(ad::constant(x), ctx, t)->value;
            const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[t - 1]);
            const double coef = sched.beta[t - 1] / std::sqrt(1.0 - sched.abar[t - 1]);
            const double sigma =
                t > 1 ? std::sqrt((1.0 - sched.abar_prev(t - 1)) / (1.0 - sched.abar[t - 1]) * sched.beta[t - 1])
                      : 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                double mean = inv_sqrt_alpha * (x.v[i] - coef * eps_hat.v[i]);
                x.v[i] = t > 1 ? mean + sigma * rng.normal() : mean;
            }
        }
        return latents_to_clip(x, T_out, H, W, fps);
    }

    // ---------------------------------------------------------------------
    // regression head
    // ---------------------------------------------------------------------

    ad::Var regress_latents(const ad::Var& features, std::size_t T, double fps) const {
        ad::Var ctx = frame_contexts(features, T, fps);
        ad::Var h = ad::gelu(ad::add_rowvec(ad::matmul(ctx, reg_w1), reg_b1));
        return ad::add_rowvec(ad::matmul(h, reg_w2), reg_b2);
    }

    ad::Var regression_loss(const ad::Var& features, const VideoClip& clip) const {
        return ad::mse_vs(regress_latents(features, clip.T, clip.fps), clip_latents(clip));
    }

    VideoClip regress_video(const Tensor& features, std::size_t T_out, std::size_t H = 64, std::size_t W = 64,
                            double fps = 8.0) const {
        return latents_to_clip(regress_latents(ad::constant(features), T_out, fps)->value, T_out, H, W, fps);
    }

    // Per-pixel reconstruction error at full resolution, for reporting.
    static double pixel_mse(const VideoClip& a, const VideoClip& b) {
        if (a.pix.size() != b.pix.size()) throw ShapeError("pixel_mse: clip shapes differ");
        double s = 0;
        for (std::size_t i = 0; i < a.pix.size(); ++i) {
            const double d = static_cast<double>(a.pix[i]) - static_cast<double>(b.pix[i]);
            s += d * d;
        }
        return s / static_cast<double>(a.pix.size());
    }

private:
    VideoClip latents_to_clip(const Tensor& latents, std::size_t T, std::size_t H, std::size_t W, double fps) const {
        VideoClip out(T, H, W, fps);
        const std::size_t D = cfg.latent_dim();
        std::vector<double> grid(D);
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t j = 0; j < D; ++j) grid[j] = 0.5 * (latents.v[t * D + j] + 1.0);
            upsample_into_frame(out, t, grid, cfg.latent_h, cfg.latent_w);
        }
        return out;
    }
};

} // namespace vtok
