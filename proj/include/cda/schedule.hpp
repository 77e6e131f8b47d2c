#pragma once

// Stage gating and the time-varying loss weights lambda and beta that
// compose the total training objective.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "cda/autodiff.hpp"
#include "cda/losses.hpp"
#include "cda/types.hpp"

namespace cda {

struct ScheduleConfig {
    int epochs = 60;       // E: total training epochs
    int adv_start = 15;    // E': adversarial alignment switches on
    int cross_start = 25;  // E'': SupCL hands over to CrossCL
    Real gamma = 10.0;     // lambda-ramp sharpness
    Real alpha = 1.0;      // beta-ramp slope
};

enum class Stage { kSourceOnly = 0, kAdversarial = 1, kCrossDomain = 2 };

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::kSourceOnly: return "source_only";
        case Stage::kAdversarial: return "adversarial";
        case Stage::kCrossDomain: return "cross_domain";
    }
    return "?";
}

// Weights for one epoch. The mode flags record which loss families the run
// trains at all; weights_at forces the matching weights to zero so a
// disabled loss can never leak into the objective.
struct StepWeights {
    Real lambda = 0.0;
    Real beta = 0.0;
    Stage stage = Stage::kSourceOnly;
    bool contrastive_on = true;
    bool adversarial_on = true;
};

// Invariant violations for a schedule, as human-readable strings. When the
// staged curriculum is disabled (plain adversarial or source-only baselines)
// the switch epochs may both be zero.
inline std::vector<std::string> schedule_violations(const ScheduleConfig& cfg,
                                                    bool staged) {
    std::vector<std::string> out;
    if (cfg.epochs < 1) out.push_back("epochs must be >= 1, got " + std::to_string(cfg.epochs));
    int lo = staged ? 1 : 0;
    if (cfg.adv_start < lo)
        out.push_back("adv_start must be >= " + std::to_string(lo) + ", got " +
                      std::to_string(cfg.adv_start));
    if (cfg.cross_start < cfg.adv_start)
        out.push_back("cross_start must be >= adv_start, got " +
                      std::to_string(cfg.cross_start) + " < " + std::to_string(cfg.adv_start));
    if (cfg.cross_start > cfg.epochs)
        out.push_back("cross_start must be <= epochs, got " + std::to_string(cfg.cross_start) +
                      " > " + std::to_string(cfg.epochs));
    if (!(cfg.gamma > 0))
        out.push_back("gamma must be > 0, got " + format_real(cfg.gamma));
    if (!(cfg.alpha > 0))
        out.push_back("alpha must be > 0, got " + format_real(cfg.alpha));
    return out;
}

namespace detail {

inline void check_epoch(int e, const ScheduleConfig& cfg, const char* who) {
    require(e >= 0 && e <= cfg.epochs, std::string(who) + ": epoch " + std::to_string(e) +
                                           " out of range [0, " + std::to_string(cfg.epochs) +
                                           "]");
}

}  // namespace detail

// 0 before adv_start, then 2/(1+exp(-gamma*p)) - 1 with progress
// p = (e - E')/(E - E') clamped to [0,1]. Continuous at the switch-on epoch.
inline Real lambda_at(int e, const ScheduleConfig& cfg) {
    detail::check_epoch(e, cfg, "lambda_at");
    if (e < cfg.adv_start) return 0.0;
    Real p = 0.0;
    if (cfg.epochs > cfg.adv_start) {
        p = static_cast<Real>(e - cfg.adv_start) /
            static_cast<Real>(cfg.epochs - cfg.adv_start);
        p = std::min(Real(1), std::max(Real(0), p));
    }
    return 2.0 / (1.0 + std::exp(-cfg.gamma * p)) - 1.0;
}

// 0 through cross_start, then min(1, alpha*(e - E'')/E''). A zero E''
// (un-staged baselines) saturates immediately.
inline Real beta_at(int e, const ScheduleConfig& cfg) {
    detail::check_epoch(e, cfg, "beta_at");
    if (e <= cfg.cross_start) return 0.0;
    if (cfg.cross_start == 0) return 1.0;
    Real ramp = cfg.alpha * static_cast<Real>(e - cfg.cross_start) /
                static_cast<Real>(cfg.cross_start);
    return std::min(Real(1), ramp);
}

inline Stage stage_of(int e, const ScheduleConfig& cfg) {
    if (e < cfg.adv_start) return Stage::kSourceOnly;
    if (e < cfg.cross_start) return Stage::kAdversarial;
    return Stage::kCrossDomain;
}

inline StepWeights weights_at(int e, const ScheduleConfig& cfg, bool contrastive_on = true,
                              bool adversarial_on = true) {
    StepWeights w;
    w.stage = stage_of(e, cfg);
    w.contrastive_on = contrastive_on;
    w.adversarial_on = adversarial_on;
    w.lambda = adversarial_on ? lambda_at(e, cfg) : 0.0;
    bool cross_active = contrastive_on && w.stage == Stage::kCrossDomain;
    w.beta = cross_active ? beta_at(e, cfg) : 0.0;
    return w;
}

// The scalar losses of one step, as graph handles. Absent entries simply were
// not computed this step.
template <typename S>
struct LossPartsT {
    std::optional<LossValueT<S>> ce;
    std::optional<LossValueT<S>> supcl;
    std::optional<LossValueT<S>> adv;
    std::optional<LossValueT<S>> crosscl;
};

using LossParts = LossPartsT<Real>;

// Composes the stage objective:
//   SOURCE_ONLY   L_SupCL + L_CE
//   ADVERSARIAL   L_SupCL + L_CE + lambda * L_Adv
//   CROSS_DOMAIN  L_CE + lambda * L_Adv + beta * L_CrossCL
// with contrastive terms dropped when that family is disabled. The value of
// the adversarial term is lambda * L_Adv exactly as written, but it enters
// through a unit gradient reversal so plain descent drives the discriminator
// UP this value (its ascent direction) while the generator, whose embeddings
// passed through their own reversal inside L_Adv, is driven down it.
template <typename S>
VarT<S> total_loss(const LossPartsT<S>& parts, const StepWeights& w) {
    auto need = [&](const std::optional<LossValueT<S>>& part,
                    const char* name) -> VarT<S> {
        require(part.has_value(), std::string("total_loss: missing required part ") + name);
        return part->value;
    };
    VarT<S> total = need(parts.ce, "L_CE");
    if (w.contrastive_on && w.stage != Stage::kCrossDomain)
        total = add(total, need(parts.supcl, "L_SupCL"));
    if (w.adversarial_on && w.stage != Stage::kSourceOnly) {
        VarT<S> adv = need(parts.adv, "L_Adv");
        total = add(total, affine(gradient_reversal(adv, S(1)), static_cast<S>(w.lambda),
                                  S(0)));
    }
    if (w.contrastive_on && w.stage == Stage::kCrossDomain && w.beta > 0)
        total = add(total, affine(need(parts.crosscl, "L_CrossCL"),
                                  static_cast<S>(w.beta), S(0)));
    return total;
}

}  // namespace cda
