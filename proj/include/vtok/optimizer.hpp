#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "vtok/autodiff.hpp"
#include "vtok/error.hpp"

namespace vtok {

struct AdamWConfig {
    double lr{3e-4};
    double beta1{0.9};
    double beta2{0.999};
    double eps{1e-8};
    double weight_decay{0.01};
    double ema_decay{0.999};
};

// AdamW with decoupled weight decay plus an exponential moving average of
// the parameters. Evaluation reads the EMA shadow; training updates the
// live values. Moment and shadow state is exposed by name so checkpoints
// can round-trip it.
class AdamW {
public:
    AdamW(const AdamWConfig& cfg, const ad::ParamMap& params) : cfg_(cfg) {
        if (!(cfg.beta1 >= 0 && cfg.beta1 < 1) || !(cfg.beta2 >= 0 && cfg.beta2 < 1))
            throw ConfigError("AdamW: betas must lie in [0,1)");
        if (!(cfg.ema_decay >= 0 && cfg.ema_decay < 1))
            throw ConfigError("AdamW: ema_decay must lie in [0,1), got " + std::to_string(cfg.ema_decay));
        if (cfg.eps <= 0) throw ConfigError("AdamW: eps must be positive");
        for (const auto& [name, p] : params) {
            m_[name].assign(p->value.size(), 0.0);
            v_[name].assign(p->value.size(), 0.0);
            ema_[name] = p->value.v;
        }
    }

    // One update over every parameter. Gradients must already be populated
    // (missing/empty grads count as zero). Throws TrainError naming the
    // offending parameter if any gradient is non-finite.
    void step(ad::ParamMap& params) {
        for (const auto& [name, p] : params)
            for (double g : p->grad)
                if (!std::isfinite(g)) throw TrainError("non-finite gradient in parameter '" + name + "'");
        ++step_count_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
        for (auto& [name, p] : params) {
            auto& m = m_.at(name);
            auto& v = v_.at(name);
            auto& ema = ema_.at(name);
            const std::size_t n = p->value.size();
            if (m.size() != n) throw ShapeError("AdamW: parameter '" + name + "' changed size");
            for (std::size_t i = 0; i < n; ++i) {
                const double g = i < p->grad.size() ? p->grad[i] : 0.0;
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p->value.v[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p->value.v[i]);
                ema[i] = cfg_.ema_decay * ema[i] + (1.0 - cfg_.ema_decay) * p->value.v[i];
            }
        }
    }

    std::uint64_t step_count() const { return step_count_; }
    const std::map<std::string, std::vector<double>>& ema() const { return ema_; }
    const std::map<std::string, std::vector<double>>& m() const { return m_; }
    const std::map<std::string, std::vector<double>>& v() const { return v_; }

    // Checkpoint restore path.
    void load_state(std::uint64_t step_count, std::map<std::string, std::vector<double>> m,
                    std::map<std::string, std::vector<double>> v,
                    std::map<std::string, std::vector<double>> ema) {
        step_count_ = step_count;
        m_ = std::move(m);
        v_ = std::move(v);
        ema_ = std::move(ema);
    }

private:
    AdamWConfig cfg_;
    std::uint64_t step_count_{0};
    std::map<std::string, std::vector<double>> m_, v_, ema_;
};

} // namespace vtok
