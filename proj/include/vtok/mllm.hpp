#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "vtok/autodiff.hpp"
#include "vtok/rng.hpp"
#include "vtok/tokenizer.hpp"
#include "vtok/vocab.hpp"

// Decoder-only causal transformer over the unified vocabulary. One model
// answers questions about clips (text after the visual block) and proposes
// visual tokens from a prompt (visual block after the text). Visual
// positions are embedded by projecting their d_v features; sampled visual
// ids embed their codebook entry through the same projection.
namespace vtok {

struct ModelConfig {
    std::size_t d_model{128};
    std::size_t n_layers{4};
    std::size_t n_heads{4};
    std::size_t d_ff{256};
    std::size_t max_len{160};
    std::size_t d_v{64};

    void validate() const {
        if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1) throw ConfigError("model: all sizes must be >= 1");
        if (d_model % n_heads != 0) throw ConfigError("model: d_model must divide evenly into heads");
        if (max_len < 8) throw ConfigError("model: max_len too small to hold any task");
    }
    std::size_t d_head() const { return d_model / n_heads; }
};

// One position per entry: the vocab id, its modality (0 text, 1 spatial,
// 2 motion), and where its embedding comes from. vis_row >= 0 points into
// the features matrix (teacher forcing); -1 means the text/control table.
struct ModelInput {
    std::vector<int> ids;
    std::vector<int> types;
    std::vector<int> vis_row;
    ad::Var features; // n_vis x d_v, null when the sequence is pure text

    std::size_t size() const { return ids.size(); }
};

// A built sequence plus the first position whose token the loss predicts.
struct BuiltSequence {
    ModelInput in;
    std::size_t predict_from{0};
};

class Mllm {
public:
    static constexpr double kLnEps = 1e-10;

    struct Layer {
        ad::Var ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        ad::Var ln2_g, ln2_b, w1, b1, w2, b2;
    };

    ModelConfig cfg;
    UnifiedVocab vocab;
    ad::Var embed_text; // (n_text + 5 controls) x d
    ad::Var vis_w, vis_b;
    ad::Var pos_emb;  // max_len x d
    ad::Var type_emb; // 3 x d
    std::vector<Layer> layers;
    ad::Var lnf_g, lnf_b, head_w, head_b;

    Mllm(const ModelConfig& c, std::size_t K_spatial, std::size_t K_motion, Rng& rng)
        : cfg(c), vocab(K_spatial, K_motion) {
        cfg.validate();
        auto w = [&](Shape shape, double scale = 0.02) {
            Tensor t(shape);
            for (double& x : t.v) x = rng.normal() * scale;
            return ad::leaf(std::move(t), true);
        };
        auto zeros = [&](Shape shape) { return ad::leaf(Tensor(shape), true); };
        auto ones = [&](Shape shape) { return ad::leaf(Tensor::full(shape, 1.0), true); };

        const std::size_t d = cfg.d_model;
        embed_text = w({vocab.text_size() + 5, d});
        vis_w = w({cfg.d_v, d});
        vis_b = zeros({d});
        pos_emb = w({cfg.max_len, d});
        type_emb = w({3, d});
        for (std::size_t i = 0; i < cfg.n_layers; ++i) {
            Layer L;
            L.ln1_g = ones({d});
            L.ln1_b = zeros({d});
            L.wq = w({d, d});
            L.bq = zeros({d});
            L.wk = w({d, d});
            L.bk = zeros({d});
            L.wv = w({d, d});
            L.bv = zeros({d});
            L.wo = w({d, d});
            L.bo = zeros({d});
            L.ln2_g = ones({d});
            L.ln2_b = zeros({d});
            L.w1 = w({d, cfg.d_ff});
            L.b1 = zeros({cfg.d_ff});
            L.w2 = w({cfg.d_ff, d});
            L.b2 = zeros({d});
            layers.push_back(std::move(L));
        }
        lnf_g = ones({d});
        lnf_b = zeros({d});
        head_w = w({d, vocab.size()});
        head_b = zeros({vocab.size()});
    }

    void register_params(ad::ParamMap& params) {
        params["mllm.embed.text"] = embed_text;
        params["mllm.embed.vis.w"] = vis_w;
        params["mllm.embed.vis.b"] = vis_b;
        params["mllm.pos"] = pos_emb;
        params["mllm.type"] = type_emb;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const std::string p = "mllm.L" + std::to_string(i) + ".";
            Layer& L = layers[i];
            params[p + "ln1.g"] = L.ln1_g;
            params[p + "ln1.b"] = L.ln1_b;
            params[p + "attn.wq"] = L.wq;
            params[p + "attn.bq"] = L.bq;
            params[p + "attn.wk"] = L.wk;
            params[p + "attn.bk"] = L.bk;
            params[p + "attn.wv"] = L.wv;
            params[p + "attn.bv"] = L.bv;
            params[p + "attn.wo"] = L.wo;
            params[p + "attn.bo"] = L.bo;
            params[p + "ln2.g"] = L.ln2_g;
            params[p + "ln2.b"] = L.ln2_b;
            params[p + "ffn.w1"] = L.w1;
            params[p + "ffn.b1"] = L.b1;
            params[p + "ffn.w2"] = L.w2;
            params[p + "ffn.b2"] = L.b2;
        }
        params["mllm.lnf.g"] = lnf_g;
        params["mllm.lnf.b"] = lnf_b;
        params["mllm.head.w"] = head_w;
        params["mllm.head.b"] = head_b;
    }

    // Row of embed_text serving the given id (words first, then controls).
    int text_row(int id) const {
        switch (vocab.kind_of(id)) {
        case TokenKind::text: return id;
        case TokenKind::special:
            return static_cast<int>(vocab.text_size()) + (id - vocab.special_id(Special::BOS));
        default: throw IndexError("mllm: id " + std::to_string(id) + " has no text embedding row");
        }
    }

    // ---------------------------------------------------------------------
    // sequence assembly
    // ---------------------------------------------------------------------

    static int modality(TokenRole r) { return r == TokenRole::spatial ? 1 : 2; }

    // question SEP BOV <visual> EOV answer EOS; loss predicts answer + EOS
    BuiltSequence understanding_sequence(const std::string& question, const TokenSequence& seq,
                                         const ad::Var& features, const std::string& answer) const {
        BuiltSequence b;
        ModelInput& in = b.in;
        for (int id : vocab.encode_text(question)) push_text(in, id);
        push_text(in, vocab.special_id(Special::SEP));
        push_text(in, vocab.special_id(Special::BOV));
        push_visual(in, seq);
        push_text(in, vocab.special_id(Special::EOV));
        b.predict_from = in.ids.size();
        for (int id : vocab.encode_text(answer)) push_text(in, id);
        push_text(in, vocab.special_id(Special::EOS));
        in.features = features;
        check_fit(in);
        return b;
    }

    // prompt BOV <visual>; loss predicts every visual token (no EOV: the
    // visual block length is fixed by the token budget, not by the model)
    BuiltSequence generation_sequence(const std::string& prompt, const TokenSequence& seq,
                                      const ad::Var& features) const {
        BuiltSequence b;
        ModelInput& in = b.in;
        for (int id : vocab.encode_text(prompt)) push_text(in, id);
        push_text(in, vocab.special_id(Special::BOV));
        b.predict_from = in.ids.size();
        push_visual(in, seq);
        in.features = features;
        check_fit(in);
        return b;
    }

    // ---------------------------------------------------------------------
    // graph forward
    // ---------------------------------------------------------------------

    ad::Var embed(const ModelInput& in) const {
        check_fit(in);
        const std::size_t L = in.size();
        // contiguous runs share one gather / one projection
        std::vector<ad::Var> blocks;
        std::size_t i = 0;
        while (i < L) {
            if (in.vis_row[i] < 0) {
                std::vector<int> rows;
                while (i < L && in.vis_row[i] < 0) rows.push_back(text_row(in.ids[i])), ++i;
                blocks.push_back(ad::embedding_rows(embed_text, rows));
            } else {
                const std::size_t a = static_cast<std::size_t>(in.vis_row[i]);
                std::size_t n = 0;
                while (i < L && in.vis_row[i] == static_cast<int>(a + n)) ++n, ++i;
                if (!in.features) throw SequenceError("mllm: sequence has visual rows but no features");
                ad::Var rows = ad::slice_rows(in.features, a, a + n);
                blocks.push_back(ad::add_rowvec(ad::matmul(rows, vis_w), vis_b));
            }
        }
        ad::Var content = blocks.size() == 1 ? blocks[0] : ad::concat_rows(blocks);
        ad::Var p = ad::slice_rows(pos_emb, 0, L);
        ad::Var t = ad::embedding_rows(type_emb, in.types);
        return ad::add(ad::add(content, p), t);
    }

    ad::Var hidden(ad::Var x) const {
        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg.d_head()));
        for (const Layer& L : layers) {
            ad::Var a = ad::layer_norm(x, L.ln1_g, L.ln1_b, kLnEps);
            ad::Var q = ad::add_rowvec(ad::matmul(a, L.wq), L.bq);
            ad::Var k = ad::add_rowvec(ad::matmul(a, L.wk), L.bk);
            ad::Var v = ad::add_rowvec(ad::matmul(a, L.wv), L.bv);
            std::vector<ad::Var> heads;
            for (std::size_t h = 0; h < cfg.n_heads; ++h) {
                const std::size_t lo = h * cfg.d_head(), hi = lo + cfg.d_head();
                ad::Var qh = ad::slice_cols(q, lo, hi);
                ad::Var kh = ad::slice_cols(k, lo, hi);
                ad::Var vh = ad::slice_cols(v, lo, hi);
                ad::Var att = ad::softmax_causal(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt_dh));
                heads.push_back(ad::matmul(att, vh));
            }
            ad::Var ctx = cfg.n_heads == 1 ? heads[0] : ad::concat_cols(heads);
            x = ad::add(x, ad::add_rowvec(ad::matmul(ctx, L.wo), L.bo));
            ad::Var f = ad::layer_norm(x, L.ln2_g, L.ln2_b, kLnEps);
            ad::Var ff = ad::add_rowvec(
                ad::matmul(ad::gelu(ad::add_rowvec(ad::matmul(f, L.w1), L.b1)), L.w2), L.b2);
            x = ad::add(x, ff);
        }
        return ad::layer_norm(x, lnf_g, lnf_b, kLnEps);
    }

    ad::Var logits(const ModelInput& in) const {
        return ad::add_rowvec(ad::matmul(hidden(embed(in)), head_w), head_b);
    }

    // Mean cross-entropy of positions predict_from..end given all earlier
    // ones. Row i of the logits predicts id i+1.
    ad::Var lm_loss(const BuiltSequence& b) const {
        const std::size_t L = b.in.size();
        if (b.predict_from < 1 || b.predict_from >= L) throw SequenceError("lm_loss: nothing to predict");
        ad::Var lg = ad::slice_rows(logits(b.in), 0, L - 1);
        std::vector<int> targets(b.in.ids.begin() + 1, b.in.ids.end());
        std::vector<std::uint8_t> mask(L - 1, 0);
        for (std::size_t i = b.predict_from - 1; i < L - 1; ++i) mask[i] = 1;
        return ad::softmax_cross_entropy(lg, targets, mask);
    }

    ad::Var loss_understanding(const std::string& question, const Tokenizer::Encoded& enc,
                               const std::string& answer) const {
        return lm_loss(understanding_sequence(question, enc.seq, enc.features, answer));
    }

    // Prefix fed to generate_text when answering: everything up to and
    // including EOV.
    std::pair<std::vector<int>, std::vector<int>> understanding_prefix(const std::string& question,
                                                                       const TokenSequence& seq) const {
        ModelInput in;
        for (int id : vocab.encode_text(question)) push_text(in, id);
        push_text(in, vocab.special_id(Special::SEP));
        push_text(in, vocab.special_id(Special::BOV));
        push_visual(in, seq);
        push_text(in, vocab.special_id(Special::EOV));
        return {in.ids, in.types};
    }
    ad::Var loss_visual_lm(const std::string& prompt, const Tokenizer::Encoded& enc) const {
        return lm_loss(generation_sequence(prompt, enc.seq, enc.features));
    }

    // ---------------------------------------------------------------------
    // incremental (cached) forward, plain doubles
    // ---------------------------------------------------------------------

    struct KvCache {
        std::vector<std::vector<double>> k, v; // per layer, len * d_model
        std::size_t len{0};
    };

    KvCache make_cache() const {
        KvCache c;
        c.k.resize(cfg.n_layers);
        c.v.resize(cfg.n_layers);
        return c;
    }

    // Append one position and return its logits row. Equivalent to the
    // graph path's last row; sampling and eval run on this.
    std::vector<double> step(KvCache& cache, int id, int type, const Tokenizer& tok) const {
        if (cache.len >= cfg.max_len) throw SequenceError("mllm: sequence exceeds max_len");
        const std::size_t d = cfg.d_model;
        std::vector<double> x = embed_row(id, type, cache.len, tok);
        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg.d_head()));
        std::vector<double> a(d), q(d), k(d), v(d), ctx(d), proj(d), f(cfg.d_ff);
        for (std::size_t li = 0; li < layers.size(); ++li) {
            const Layer& L = layers[li];
            ln_row(x.data(), L.ln1_g->value, L.ln1_b->value, a.data());
            affine_row(a.data(), L.wq->value, L.bq->value, q.data());
            affine_row(a.data(), L.wk->value, L.bk->value, k.data());
            affine_row(a.data(), L.wv->value, L.bv->value, v.data());
            cache.k[li].insert(cache.k[li].end(), k.begin(), k.end());
            cache.v[li].insert(cache.v[li].end(), v.begin(), v.end());
            const std::size_t n = cache.len + 1;
            for (std::size_t h = 0; h < cfg.n_heads; ++h) {
                const std::size_t dh = cfg.d_head(), lo = h * dh;
                std::vector<double> sc(n);
                for (std::size_t j = 0; j < n; ++j) {
                    double s = 0;
                    for (std::size_t t = 0; t < dh; ++t) s += q[lo + t] * cache.k[li][j * d + lo + t];
                    sc[j] = s * inv_sqrt_dh;
                }
                double mx = sc[0];
                for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, sc[j]);
                double z = 0;
                for (std::size_t j = 0; j < n; ++j) z += std::exp(sc[j] - mx);
                for (std::size_t t = 0; t < dh; ++t) {
                    double acc = 0;
                    for (std::size_t j = 0; j < n; ++j)
                        acc += std::exp(sc[j] - mx) / z * cache.v[li][j * d + lo + t];
                    ctx[lo + t] = acc;
                }
            }
            affine_row(ctx.data(), L.wo->value, L.bo->value, proj.data());
            for (std::size_t t = 0; t < d; ++t) x[t] += proj[t];
            ln_row(x.data(), L.ln2_g->value, L.ln2_b->value, a.data());
            affine_row(a.data(), L.w1->value, L.b1->value, f.data());
            for (double& y : f) y = 0.5 * y * (1.0 + std::erf(y * 0.7071067811865476));
            affine_row(f.data(), L.w2->value, L.b2->value, proj.data());
            for (std::size_t t = 0; t < d; ++t) x[t] += proj[t];
        }
        ln_row(x.data(), lnf_g->value, lnf_b->value, a.data());
        std::vector<double> out(vocab.size());
        affine_row(a.data(), head_w->value, head_b->value, out.data());
        ++cache.len;
        return out;
    }

    // ---------------------------------------------------------------------
    // sampling
    // ---------------------------------------------------------------------

    // temperature <= 0 means greedy; ties take the lowest id
    static int sample_from(const std::vector<double>& logits_row, const std::vector<int>& allowed,
                           double temperature, std::size_t top_k, Rng& rng) {
        if (allowed.empty()) throw GenerationError("sample_from: empty candidate set");
        if (temperature <= 0) {
            int best = allowed[0];
            for (int id : allowed)
                if (logits_row[static_cast<std::size_t>(id)] > logits_row[static_cast<std::size_t>(best)]) best = id;
            return best;
        }
        std::vector<std::pair<double, int>> cand;
        cand.reserve(allowed.size());
        for (int id : allowed) cand.emplace_back(logits_row[static_cast<std::size_t>(id)], id);
        const std::size_t keep = std::min(top_k == 0 ? cand.size() : top_k, cand.size());
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                          [](const auto& a, const auto& b) {
                              return a.first != b.first ? a.first > b.first : a.second < b.second;
                          });
        cand.resize(keep);
        const double mx = cand[0].first;
        double z = 0;
        for (auto& [l, id] : cand) z += std::exp((l - mx) / temperature);
        double u = rng.uniform() * z, acc = 0;
        for (auto& [l, id] : cand) {
            acc += std::exp((l - mx) / temperature);
            if (u <= acc) return id;
        }
        return cand.back().second;
    }

    // Feed a ready-made prefix (understanding: question SEP BOV visual EOV)
    // and decode words until EOS. Only words and EOS can be emitted.
    std::vector<int> generate_text(const std::vector<int>& prefix_ids, const std::vector<int>& prefix_types,
                                   const Tokenizer& tok, std::size_t max_new, double temperature, Rng& rng) const {
        if (prefix_ids.size() != prefix_types.size()) throw SequenceError("generate_text: ids/types length mismatch");
        KvCache cache = make_cache();
        std::vector<double> lg;
        for (std::size_t i = 0; i < prefix_ids.size(); ++i) lg = step(cache, prefix_ids[i], prefix_types[i], tok);
        std::vector<int> allowed;
        for (std::size_t w = 0; w < vocab.text_size(); ++w) allowed.push_back(static_cast<int>(w));
        allowed.push_back(vocab.special_id(Special::EOS));
        std::vector<int> out;
        for (std::size_t n = 0; n < max_new; ++n) {
            const int id = sample_from(lg, allowed, temperature, 0, rng);
            if (id == vocab.special_id(Special::EOS)) break;
            out.push_back(id);
            lg = step(cache, id, 0, tok);
        }
        return out;
    }

    // Propose a visual block for a prompt: exactly S spatial ids then
    // n_motion motion ids, each position masked to its role.
    TokenSequence sample_visual_tokens(const std::string& prompt, const Tokenizer& tok, std::size_t n_motion,
                                       Rng& rng, double temperature = 1.0, std::size_t top_k = 32) const {
        KvCache cache = make_cache();
        std::vector<double> lg;
        for (int id : vocab.encode_text(prompt)) lg = step(cache, id, 0, tok);
        lg = step(cache, vocab.special_id(Special::BOV), 0, tok);

        std::vector<int> spatial_ids, motion_ids;
        for (std::size_t c = 0; c < vocab.k_spatial(); ++c) spatial_ids.push_back(vocab.spatial_id(static_cast<int>(c)));
        for (std::size_t c = 0; c < vocab.k_motion(); ++c) motion_ids.push_back(vocab.motion_id(static_cast<int>(c)));

        TokenSequence seq;
        seq.S = tok.cfg.S;
        for (std::size_t j = 0; j < tok.cfg.S + n_motion; ++j) {
            const bool spatial = j < tok.cfg.S;
            const int id = sample_from(lg, spatial ? spatial_ids : motion_ids, temperature, top_k, rng);
            seq.entries.push_back({spatial ? TokenRole::spatial : TokenRole::motion, vocab.code_of(id),
                                   spatial ? -1 : static_cast<int>(j - tok.cfg.S)});
            if (j + 1 < tok.cfg.S + n_motion) lg = step(cache, id, spatial ? 1 : 2, tok);
        }
        seq.check_layout();
        return seq;
    }

private:
    void check_fit(const ModelInput& in) const {
        if (in.size() > cfg.max_len)
            throw SequenceError("mllm: sequence of " + std::to_string(in.size()) + " exceeds max_len " +
                                std::to_string(cfg.max_len));
        if (in.types.size() != in.ids.size() || in.vis_row.size() != in.ids.size())
            throw SequenceError("mllm: ragged model input");
    }

    void push_text(ModelInput& in, int id) const {
        in.ids.push_back(id);
        in.types.push_back(0);
        in.vis_row.push_back(-1);
    }
    void push_visual(ModelInput& in, const TokenSequence& seq) const {
        for (std::size_t j = 0; j < seq.entries.size(); ++j) {
            const auto& e = seq.entries[j];
            in.ids.push_back(e.role == TokenRole::spatial ? vocab.spatial_id(e.code) : vocab.motion_id(e.code));
            in.types.push_back(modality(e.role));
            in.vis_row.push_back(static_cast<int>(j));
        }
    }

    // value-space kernels; loop order matches the graph ops bit for bit
    static void affine_row(const double* x, const Tensor& W, const Tensor& b, double* out) {
        const std::size_t kdim = W.shape[0], n = W.shape[1];
        for (std::size_t j = 0; j < n; ++j) out[j] = 0.0;
        for (std::size_t i = 0; i < kdim; ++i) {
            const double xi = x[i];
            const double* wrow = W.v.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) out[j] += xi * wrow[j];
        }
        for (std::size_t j = 0; j < n; ++j) out[j] += b.v[j];
    }
    static void ln_row(const double* x, const Tensor& g, const Tensor& b, double* out) {
        const std::size_t d = g.size();
        double mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += x[j];
        mu /= static_cast<double>(d);
        double var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(d);
        if (var < 1e-12) {
            for (std::size_t j = 0; j < d; ++j) out[j] = b.v[j];
        } else {
            const double is = 1.0 / std::sqrt(var + kLnEps);
            for (std::size_t j = 0; j < d; ++j) {
                const double yhat = (x[j] - mu) * is; // same association as the graph op
                out[j] = g.v[j] * yhat + b.v[j];
            }
        }
    }

    // content + position + modality for one id (sampled visual ids embed
    // their codebook entry through the visual projection)
    std::vector<double> embed_row(int id, int type, std::size_t position, const Tokenizer& tok) const {
        const std::size_t d = cfg.d_model;
        std::vector<double> row(d);
        switch (vocab.kind_of(id)) {
        case TokenKind::text:
        case TokenKind::special: {
            const double* src = embed_text->value.v.data() + static_cast<std::size_t>(text_row(id)) * d;
            std::copy(src, src + d, row.begin());
            break;
        }
        case TokenKind::spatial:
        case TokenKind::motion: {
            const Codebook& cb = vocab.kind_of(id) == TokenKind::spatial ? tok.spatial_cb : tok.motion_cb;
            affine_row(cb.entry(static_cast<std::size_t>(vocab.code_of(id))), vis_w->value, vis_b->value, row.data());
            break;
        }
        }
        if (type < 0 || type > 2) throw SequenceError("mllm: modality must be 0, 1, or 2");
        // two passes, matching (content + pos) + type in the graph path
        for (std::size_t j = 0; j < d; ++j) row[j] += pos_emb->value.v[position * d + j];
        for (std::size_t j = 0; j < d; ++j) row[j] += type_emb->value.v[static_cast<std::size_t>(type) * d + j];
        return row;
    }
};

} // namespace vtok
