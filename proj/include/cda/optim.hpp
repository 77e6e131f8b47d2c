#pragma once

// AdamW with decoupled weight decay, plus the step learning-rate decay the
// trainer applies per epoch. State lives outside the model so the same
// parameter tensors can be rebound into a fresh graph every iteration.

#include <cmath>
#include <string>
#include <vector>

#include "cda/types.hpp"

namespace cda {

template <typename S>
struct AdamWConfigT {
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S eps = S(1e-8);
    S weight_decay = S(0.01);
};

template <typename S>
struct ParamSlotT {
    MatT<S> m;  // first moment
    MatT<S> v;  // second moment
    long step = 0;
};

// Holds one slot per parameter, addressed positionally. The caller must pass
// parameters in the same order every step (models expose a canonical order).
template <typename S>
class AdamWT {
   public:
    explicit AdamWT(AdamWConfigT<S> cfg = {}) : cfg_(cfg) {
        require(cfg_.beta1 >= 0 && cfg_.beta1 < 1, "adamw: beta1 must be in [0,1)");
        require(cfg_.beta2 >= 0 && cfg_.beta2 < 1, "adamw: beta2 must be in [0,1)");
        require(cfg_.eps > 0, "adamw: eps must be positive");
        require(cfg_.weight_decay >= 0, "adamw: weight_decay must be >= 0");
    }

    const AdamWConfigT<S>& config() const { return cfg_; }
    const std::vector<ParamSlotT<S>>& slots() const { return slots_; }

    // Bias-corrected adaptive-moment update; weight decay hits the parameter
    // directly, never the moment accumulators. A null grad skips that slot
    // entirely (no moments, no decay, no counter): the parameter sat out of
    // the step's graph.
    void step(const std::vector<MatT<S>*>& params, const std::vector<const MatT<S>*>& grads,
              S lr) {
        require(lr > 0, "adamw: lr must be positive, got " + format_real(Real(lr)));
        require(params.size() == grads.size(),
                "adamw: " + std::to_string(params.size()) + " params but " +
                    std::to_string(grads.size()) + " grads");
        if (slots_.empty()) slots_.resize(params.size());
        require(slots_.size() == params.size(),
                "adamw: parameter count changed from " + std::to_string(slots_.size()) +
                    " to " + std::to_string(params.size()));
        for (size_t i = 0; i < params.size(); ++i) {
            if (!grads[i]) continue;
            MatT<S>& p = *params[i];
            const MatT<S>& g = *grads[i];
            require(g.rows() == p.rows() && g.cols() == p.cols(),
                    "adamw: grad shape " + shape_str(g) + " vs param " + shape_str(p) +
                        " for parameter " + std::to_string(i));
            require(g.allFinite(), "adamw: non-finite gradient for parameter " +
                                       std::to_string(i) + " " + shape_str(p) +
                                       ", step aborted");
            ParamSlotT<S>& s = slots_[i];
            if (s.step == 0) {
                s.m = MatT<S>::Zero(p.rows(), p.cols());
                s.v = MatT<S>::Zero(p.rows(), p.cols());
            }
            s.step += 1;
            s.m = cfg_.beta1 * s.m + (S(1) - cfg_.beta1) * g;
            s.v = (cfg_.beta2 * s.v.array() + (S(1) - cfg_.beta2) * g.array().square())
                      .matrix();
            S bc1 = S(1) - std::pow(cfg_.beta1, S(s.step));
            S bc2 = S(1) - std::pow(cfg_.beta2, S(s.step));
            MatT<S> m_hat = s.m / bc1;
            MatT<S> v_hat = s.v / bc2;
            p.array() -= lr * cfg_.weight_decay * p.array();
            p.array() -= lr * m_hat.array() / (v_hat.array().sqrt() + cfg_.eps);
        }
    }

   private:
    AdamWConfigT<S> cfg_;
    std::vector<ParamSlotT<S>> slots_;
};

// lr0 · decay^floor(epoch / period)
template <typename S>
S step_decay_lr(S lr0, S decay, int period, int epoch) {
    require(lr0 > 0, "step_decay_lr: lr0 must be positive");
    require(decay > 0 && decay <= 1, "step_decay_lr: decay must be in (0, 1]");
    require(period >= 1, "step_decay_lr: period must be >= 1");
    require(epoch >= 0, "step_decay_lr: epoch must be >= 0");
    return lr0 * std::pow(decay, S(epoch / period));
}

using AdamWConfig = AdamWConfigT<Real>;
using AdamW = AdamWT<Real>;

}  // namespace cda
