#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtok/autodiff.hpp"
#include "vtok/error.hpp"
#include "vtok/rng.hpp"
#include "vtok/scene.hpp"
#include "vtok/video.hpp"

// Decoupled spatial-temporal tokenization: the first frame becomes S
// spatial tokens via a patch embedding, later frames become one residual
// motion token per temporal window. Both token families are quantized
// against learned codebooks; gradients reach the encoders through a
// straight-through estimator while codebook entries follow an EMA of the
// features assigned to them.
namespace vtok {

struct TokenizerConfig {
    std::size_t S{16};       // spatial tokens per key frame, perfect square
    double motion_rate{6.0}; // motion tokens per second of clip
    std::size_t d_v{64};     // visual feature width
    std::size_t K_spatial{256};
    std::size_t K_motion{128};

    void validate() const {
        const std::size_t g = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(S))));
        if (g * g != S || S < 1 || S > 25)
            throw ConfigError("tokenizer: S must be a perfect square in {1,4,9,16,25}, got " + std::to_string(S));
        if (motion_rate < 1.0) throw ConfigError("tokenizer: motion_rate must be >= 1");
        if (K_spatial < 2 || K_motion < 2) throw ConfigError("tokenizer: codebook sizes must be >= 2");
        if (d_v < 1) throw ConfigError("tokenizer: d_v must be >= 1");
    }
    std::size_t grid() const { return static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(S)))); }
};

// Total visual sequence length for a clip of the given duration.
inline std::size_t token_budget(double duration_s, std::size_t S, double motion_rate) {
    if (duration_s < 0) throw ConfigError("token_budget: negative duration");
    return S + static_cast<std::size_t>(std::llround(duration_s * motion_rate));
}

enum class TokenRole { spatial, motion };

struct TokenEntry {
    TokenRole role{TokenRole::spatial};
    int code{0};
    int t_window{-1}; // motion: window index; frame-sampling: source frame; key-frame spatial: -1
};

struct TokenSequence {
    std::size_t S{0}; // spatial entries at the front
    std::vector<TokenEntry> entries;

    std::size_t n_motion() const { return entries.size() - S; }
    void check_layout() const {
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const bool want_spatial = i < S;
            if ((entries[i].role == TokenRole::spatial) != want_spatial)
                throw SequenceError("token sequence layout violated at position " + std::to_string(i));
        }
    }
};

// ---------------------------------------------------------------------------
// codebook
// ---------------------------------------------------------------------------

// K x d table with EMA updates and dead-entry reseeding. Lookup is an
// exhaustive nearest-neighbor scan; ties go to the lowest index.
class Codebook {
public:
    static constexpr std::size_t kReservoir = 256;
    static constexpr std::uint64_t kDeadAge = 500;

    Codebook() = default;
    Codebook(std::size_t K, std::size_t d, Rng& rng) : K_(K), d_(d) {
        entries_.assign(K * d, 0.0);
        for (double& x : entries_) x = rng.normal() * 0.5;
        cluster_size_.assign(K, 1.0);
        embed_sum_ = entries_;
        age_.assign(K, 0.0);
        reservoir_.assign(kReservoir * d, 0.0);
        reservoir_fill_ = 0.0;
    }

    std::size_t size() const { return K_; }
    std::size_t dim() const { return d_; }
    const double* entry(std::size_t k) const { return entries_.data() + k * d_; }

    int nearest(const double* f) const {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < K_; ++k) {
            const double* e = entries_.data() + k * d_;
            double dist = 0;
            for (std::size_t j = 0; j < d_; ++j) dist += (f[j] - e[j]) * (f[j] - e[j]);
            if (dist < best_d) {
                best_d = dist;
                best = static_cast<int>(k);
            }
        }
        return best;
    }

    // One EMA update over a batch of assigned features (row-major n x d).
    // Entries unused for kDeadAge consecutive updates are reseeded from the
    // reservoir of recently seen features, but only onto a feature that is
    // still poorly covered; reseeding onto a feature that already has a
    // near-zero-distance entry would just steal its assignment and flip
    // established codes without reducing quantization error.
    void update(const std::vector<double>& feats, const std::vector<int>& ids, Rng& rng, double gamma = 0.99) {
        const std::size_t n = ids.size();
        std::vector<double> count(K_, 0.0), sum(K_ * d_, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto k = static_cast<std::size_t>(ids[i]);
            count[k] += 1.0;
            for (std::size_t j = 0; j < d_; ++j) sum[k * d_ + j] += feats[i * d_ + j];
            // reservoir keeps a rolling window of raw features
            const auto slot = static_cast<std::size_t>(reservoir_fill_) % kReservoir;
            for (std::size_t j = 0; j < d_; ++j) reservoir_[slot * d_ + j] = feats[i * d_ + j];
            reservoir_fill_ += 1.0;
        }
        for (std::size_t k = 0; k < K_; ++k) {
            cluster_size_[k] = gamma * cluster_size_[k] + (1.0 - gamma) * count[k];
            for (std::size_t j = 0; j < d_; ++j)
                embed_sum_[k * d_ + j] = gamma * embed_sum_[k * d_ + j] + (1.0 - gamma) * sum[k * d_ + j];
            if (cluster_size_[k] > 1e-8)
                for (std::size_t j = 0; j < d_; ++j) entries_[k * d_ + j] = embed_sum_[k * d_ + j] / cluster_size_[k];
            age_[k] = count[k] > 0 ? 0.0 : age_[k] + 1.0;
            if (age_[k] > static_cast<double>(kDeadAge) && reservoir_fill_ > 0) {
                const auto pool = std::min(reservoir_fill_, static_cast<double>(kReservoir));
                const auto pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool) - 1));
                const double* row = reservoir_.data() + pick * d_;
                const double* near = entries_.data() + static_cast<std::size_t>(nearest(row)) * d_;
                double d2 = 0, n2 = 0;
                for (std::size_t j = 0; j < d_; ++j) {
                    d2 += (row[j] - near[j]) * (row[j] - near[j]);
                    n2 += row[j] * row[j];
                }
                // covered sample: leave the entry dead and draw a fresh
                // sample at the next update
                if (d2 <= 1e-6 * (1.0 + n2)) continue;
                for (std::size_t j = 0; j < d_; ++j) {
                    entries_[k * d_ + j] = row[j];
                    embed_sum_[k * d_ + j] = row[j];
                }
                cluster_size_[k] = 1.0;
                age_[k] = 0.0;
            }
        }
    }

    // Checkpoint plumbing: everything needed to resume exactly.
    void export_state(const std::string& prefix, std::map<std::string, Tensor>& out) const {
        out[prefix] = Tensor({K_, d_}, entries_);
        out[prefix + ".cluster_size"] = Tensor({K_}, cluster_size_);
        out[prefix + ".embed_sum"] = Tensor({K_, d_}, embed_sum_);
        out[prefix + ".age"] = Tensor({K_}, age_);
        out[prefix + ".reservoir"] = Tensor({kReservoir, d_}, reservoir_);
        out[prefix + ".reservoir_fill"] = Tensor::scalar(reservoir_fill_);
    }
    void import_state(const std::string& prefix, const std::map<std::string, Tensor>& in) {
        entries_ = in.at(prefix).v;
        cluster_size_ = in.at(prefix + ".cluster_size").v;
        embed_sum_ = in.at(prefix + ".embed_sum").v;
        age_ = in.at(prefix + ".age").v;
        reservoir_ = in.at(prefix + ".reservoir").v;
        reservoir_fill_ = in.at(prefix + ".reservoir_fill").v.at(0);
        K_ = cluster_size_.size();
        d_ = K_ ? entries_.size() / K_ : 0;
    }

private:
    std::size_t K_{0}, d_{0};
    std::vector<double> entries_, cluster_size_, embed_sum_, age_, reservoir_;
    double reservoir_fill_{0.0};
};

// Free-function form used by tests: nearest entry plus its vector.
inline std::pair<int, std::vector<double>> quantize(const std::vector<double>& feature, const Codebook& cb) {
    if (feature.size() != cb.dim()) throw ShapeError("quantize: feature width mismatch");
    const int id = cb.nearest(feature.data());
    const double* e = cb.entry(static_cast<std::size_t>(id));
    return {id, std::vector<double>(e, e + cb.dim())};
}

// ---------------------------------------------------------------------------
// temporal windows
// ---------------------------------------------------------------------------

// Frames 1..T-1 tiled into n windows over (key instant, clip end]. Window w
// holds frames k with ceil(k*n/(T-1)) == w+1. A window left empty (possible
// when n > T-1) borrows the frame nearest its midpoint so every motion
// token still sees pixels.
inline std::vector<std::vector<int>> motion_windows(std::size_t T, double fps, double motion_rate) {
    if (T < 1) throw SequenceError("motion_windows: empty clip");
    const double duration = static_cast<double>(T - 1) / fps;
    const auto n = static_cast<std::size_t>(std::llround(duration * motion_rate));
    std::vector<std::vector<int>> groups(n);
    if (n == 0) return groups;
    for (std::size_t k = 1; k < T; ++k) {
        const auto w = static_cast<std::size_t>((k * n + (T - 1) - 1) / (T - 1)) - 1;
        groups[std::min(w, n - 1)].push_back(static_cast<int>(k));
    }
    for (std::size_t w = 0; w < n; ++w) {
        if (!groups[w].empty()) continue;
        const double mid = (static_cast<double>(w) + 0.5) * static_cast<double>(T - 1) / static_cast<double>(n);
        const auto k = std::clamp<long long>(std::llround(mid), 1, static_cast<long long>(T - 1));
        groups[w].push_back(static_cast<int>(k));
    }
    return groups;
}

// Motion window index covering frame k >= 1 (frame 0 is the key frame).
inline std::size_t window_of_frame(std::size_t k, std::size_t T, double fps, double motion_rate) {
    const double duration = static_cast<double>(T - 1) / fps;
    const auto n = static_cast<std::size_t>(std::llround(duration * motion_rate));
    if (n == 0 || k < 1) throw SequenceError("window_of_frame: frame has no motion window");
    const auto w = static_cast<std::size_t>((k * n + (T - 1) - 1) / (T - 1)) - 1;
    return std::min(w, n - 1);
}

// ---------------------------------------------------------------------------
// encoders
// ---------------------------------------------------------------------------

// Learned tokenizer parameters. The patch embedding (shared by key-frame
// encoding and the pooled per-frame features) plus the two-layer residual
// head. Patch geometry is fixed at construction from the canvas and S.
struct Tokenizer {
    TokenizerConfig cfg;
    std::size_t H{64}, W{64};
    std::size_t patch_h{0}, patch_w{0}, patch_dim{0};

    ad::Var key_w, key_b;                     // patch -> d_v affine (E_key and F share it)
    ad::Var gphi_w1, gphi_b1, gphi_w2, gphi_b2; // residual head g
    Codebook spatial_cb, motion_cb;

    Tokenizer() = default;
    Tokenizer(const TokenizerConfig& c, std::size_t h, std::size_t w, Rng& rng) : cfg(c), H(h), W(w) {
        cfg.validate();
        const std::size_t g = cfg.grid();
        if (H % g != 0 || W % g != 0)
            throw ConfigError("tokenizer: canvas " + std::to_string(H) + "x" + std::to_string(W) +
                              " not divisible by the " + std::to_string(g) + "x" + std::to_string(g) + " patch grid");
        patch_h = H / g;
        patch_w = W / g;
        patch_dim = patch_h * patch_w * 3;

        auto init = [&](Shape shape, double scale) {
            Tensor t(shape);
            for (double& x : t.v) x = rng.normal() * scale;
            return ad::leaf(std::move(t), true);
        };
        const double ks = 1.0 / std::sqrt(static_cast<double>(patch_dim));
        const double vs = 1.0 / std::sqrt(static_cast<double>(cfg.d_v));
        key_w = init({patch_dim, cfg.d_v}, ks);
        key_b = init({cfg.d_v}, 0.01);
        gphi_w1 = init({cfg.d_v, cfg.d_v}, vs);
        gphi_b1 = init({cfg.d_v}, 0.01);
        gphi_w2 = init({cfg.d_v, cfg.d_v}, vs);
        gphi_b2 = init({cfg.d_v}, 0.01);
        spatial_cb = Codebook(cfg.K_spatial, cfg.d_v, rng);
        motion_cb = Codebook(cfg.K_motion, cfg.d_v, rng);
    }

    void register_params(ad::ParamMap& params) {
        params["tok.key.w"] = key_w;
        params["tok.key.b"] = key_b;
        params["tok.gphi.w1"] = gphi_w1;
        params["tok.gphi.b1"] = gphi_b1;
        params["tok.gphi.w2"] = gphi_w2;
        params["tok.gphi.b2"] = gphi_b2;
    }

    // Raw patch vectors of one frame, row-major over the grid.
    Tensor patch_matrix(const VideoClip& clip, std::size_t t) const {
        if (clip.H != H || clip.W != W) throw ShapeError("tokenizer: clip extents do not match the configured canvas");
        const std::size_t g = cfg.grid();
        Tensor m({cfg.S, patch_dim});
        const float* f = clip.frame(t);
        for (std::size_t py = 0; py < g; ++py)
            for (std::size_t px = 0; px < g; ++px) {
                double* row = m.v.data() + (py * g + px) * patch_dim;
                for (std::size_t y = 0; y < patch_h; ++y)
                    for (std::size_t x = 0; x < patch_w; ++x)
                        for (std::size_t c = 0; c < 3; ++c)
                            row[(y * patch_w + x) * 3 + c] =
                                f[(((py * patch_h + y) * W) + px * patch_w + x) * 3 + c];
            }
        return m;
    }

    // Mean patch vector per frame. The patch affine commutes with the mean,
    // so pooled F(frame) = key_w * mean_patch + key_b.
    Tensor mean_patch_matrix(const VideoClip& clip) const {
        Tensor m({clip.T, patch_dim});
        for (std::size_t t = 0; t < clip.T; ++t) {
            Tensor p = patch_matrix(clip, t);
            double* row = m.v.data() + t * patch_dim;
            for (std::size_t s = 0; s < cfg.S; ++s)
                for (std::size_t j = 0; j < patch_dim; ++j) row[j] += p.v[s * patch_dim + j];
            const double inv = 1.0 / static_cast<double>(cfg.S);
            for (std::size_t j = 0; j < patch_dim; ++j) row[j] *= inv;
        }
        return m;
    }

    // S x d_v spatial features of one frame.
    ad::Var encode_key_frame(const VideoClip& clip, std::size_t t = 0) const {
        return ad::add_rowvec(ad::matmul(ad::constant(patch_matrix(clip, t)), key_w), key_b);
    }

    // Motion features, one row per window: g(mean over window of F(x_t) - F(x_key)).
    ad::Var encode_motion(const VideoClip& clip) const {
        const auto groups = motion_windows(clip.T, clip.fps, cfg.motion_rate);
        if (groups.empty()) return ad::constant(Tensor({0, cfg.d_v}));
        ad::Var pooled = ad::add_rowvec(ad::matmul(ad::constant(mean_patch_matrix(clip)), key_w), key_b); // T x d_v
        ad::Var key_row = ad::slice_rows(pooled, 0, 1);
        ad::Var residuals = ad::sub_rowvec(ad::slice_rows(pooled, 1, clip.T), key_row); // (T-1) x d_v
        std::vector<std::vector<int>> row_groups(groups.size());
        for (std::size_t w = 0; w < groups.size(); ++w)
            for (int k : groups[w]) row_groups[w].push_back(k - 1);
        ad::Var window_means = ad::rows_mean_groups(residuals, row_groups);
        ad::Var h = ad::gelu(ad::add_rowvec(ad::matmul(window_means, gphi_w1), gphi_b1));
        return ad::add_rowvec(ad::matmul(h, gphi_w2), gphi_b2);
    }

    struct Encoded {
        TokenSequence seq;
        ad::Var features; // straight-through quantized rows, S spatial then motion
    };

    // Full decoupled pipeline for one clip. Spatial codes come from the
    // spatial codebook, motion codes from the motion codebook; features are
    // quantized values with straight-through gradients into the encoders.
    Encoded tokenize_video(const VideoClip& clip) const {
        if (clip.T < 1) throw SequenceError("tokenize_video: empty clip");
        ad::Var spatial = encode_key_frame(clip, 0);
        ad::Var motion = encode_motion(clip);
        const std::size_t n_motion = motion->value.shape[0];

        Encoded out;
        out.seq.S = cfg.S;
        Tensor quant({cfg.S + n_motion, cfg.d_v});
        for (std::size_t i = 0; i < cfg.S; ++i) {
            const int id = spatial_cb.nearest(spatial->value.v.data() + i * cfg.d_v);
            out.seq.entries.push_back({TokenRole::spatial, id, -1});
            std::memcpy(quant.v.data() + i * cfg.d_v, spatial_cb.entry(static_cast<std::size_t>(id)),
                        cfg.d_v * sizeof(double));
        }
        for (std::size_t w = 0; w < n_motion; ++w) {
            const int id = motion_cb.nearest(motion->value.v.data() + w * cfg.d_v);
            out.seq.entries.push_back({TokenRole::motion, id, static_cast<int>(w)});
            std::memcpy(quant.v.data() + (cfg.S + w) * cfg.d_v, motion_cb.entry(static_cast<std::size_t>(id)),
                        cfg.d_v * sizeof(double));
        }
        ad::Var stacked = n_motion ? ad::concat_rows({spatial, motion}) : spatial;
        out.features = ad::straight_through(stacked, std::move(quant));
        out.seq.check_layout();
        return out;
    }

    // Codebook EMA step over a batch of encoded clips (training only). One
    // call per training step, so the dead-entry age limit counts steps.
    void update_codebooks(const std::vector<Encoded>& encs, Rng& rng) {
        std::vector<double> sp_feats, mo_feats;
        std::vector<int> sp_ids, mo_ids;
        for (const Encoded& enc : encs) {
            // pre-quantization features live in the straight-through parent
            const Tensor& raw = enc.features->parents.at(0)->value;
            for (std::size_t i = 0; i < enc.seq.entries.size(); ++i) {
                const auto& e = enc.seq.entries[i];
                const double* f = raw.v.data() + i * cfg.d_v;
                if (e.role == TokenRole::spatial) {
                    sp_feats.insert(sp_feats.end(), f, f + cfg.d_v);
                    sp_ids.push_back(e.code);
                } else {
                    mo_feats.insert(mo_feats.end(), f, f + cfg.d_v);
                    mo_ids.push_back(e.code);
                }
            }
        }
        spatial_cb.update(sp_feats, sp_ids, rng);
        motion_cb.update(mo_feats, mo_ids, rng);
    }

    void update_codebooks(const Encoded& enc, Rng& rng) { update_codebooks(std::vector<Encoded>{enc}, rng); }

    // Baseline: n_frames evenly spaced frames, each encoded as S spatial
    // tokens against the spatial codebook.
    Encoded frame_sampling_tokenize(const VideoClip& clip, std::size_t n_frames) const {
        if (n_frames < 1 || n_frames > clip.T)
            throw SamplingError("frame_sampling_tokenize: cannot sample " + std::to_string(n_frames) + " of " +
                                std::to_string(clip.T) + " frames");
        std::vector<ad::Var> blocks;
        Encoded out;
        out.seq.S = cfg.S * n_frames; // all tokens are spatial
        Tensor quant({cfg.S * n_frames, cfg.d_v});
        for (std::size_t i = 0; i < n_frames; ++i) {
            const std::size_t t =
                n_frames == 1 ? 0
                              : static_cast<std::size_t>(std::llround(
                                    static_cast<double>(i * (clip.T - 1)) / static_cast<double>(n_frames - 1)));
            ad::Var feats = encode_key_frame(clip, t);
            for (std::size_t s = 0; s < cfg.S; ++s) {
                const int id = spatial_cb.nearest(feats->value.v.data() + s * cfg.d_v);
                out.seq.entries.push_back({TokenRole::spatial, id, static_cast<int>(t)});
                std::memcpy(quant.v.data() + (i * cfg.S + s) * cfg.d_v, spatial_cb.entry(static_cast<std::size_t>(id)),
                            cfg.d_v * sizeof(double));
            }
            blocks.push_back(feats);
        }
        ad::Var stacked = blocks.size() == 1 ? blocks[0] : ad::concat_rows(blocks);
        out.features = ad::straight_through(stacked, std::move(quant));
        return out;
    }

    // Codebook entries of an already-sampled sequence (decoding path: no
    // encoder involved, so this is a plain value matrix).
    Tensor features_of(const TokenSequence& seq) const {
        Tensor f({seq.entries.size(), cfg.d_v});
        for (std::size_t i = 0; i < seq.entries.size(); ++i) {
            const auto& e = seq.entries[i];
            const Codebook& cb = e.role == TokenRole::spatial ? spatial_cb : motion_cb;
            std::memcpy(f.v.data() + i * cfg.d_v, cb.entry(static_cast<std::size_t>(e.code)),
                        cfg.d_v * sizeof(double));
        }
        return f;
    }

    void export_state(std::map<std::string, Tensor>& out) const {
        spatial_cb.export_state("codebook.spatial", out);
        motion_cb.export_state("codebook.motion", out);
    }
    void import_state(const std::map<std::string, Tensor>& in) {
        spatial_cb.import_state("codebook.spatial", in);
        motion_cb.import_state("codebook.motion", in);
    }
};

// Debug/CLI dump: configuration plus the role/code/window of every entry.
inline Json token_dump(const TokenizerConfig& cfg, const TokenSequence& seq) {
    Json j;
    j["config"] = Json{{"s", cfg.S},
                       {"motion_rate", cfg.motion_rate},
                       {"d_v", cfg.d_v},
                       {"k_spatial", cfg.K_spatial},
                       {"k_motion", cfg.K_motion}};
    j["entries"] = Json::array();
    for (const auto& e : seq.entries)
        j["entries"].push_back(Json{{"role", e.role == TokenRole::spatial ? "spatial" : "motion"},
                                    {"code", e.code},
                                    {"t_window", e.t_window}});
    return j;
}

} // namespace vtok
