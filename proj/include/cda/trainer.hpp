#pragma once

// The staged training loop: source-only warm-up, adversarial alignment, then
// cross-domain contrastive refinement, all driven by one objective whose
// parts switch on and off with the schedule. Each iteration builds a fresh
// graph over the current parameters, takes one backward pass, and applies one
// optimizer step to exactly the parameters that participated.

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cda/data.hpp"
#include "cda/losses.hpp"
#include "cda/metrics.hpp"
#include "cda/nn.hpp"
#include "cda/optim.hpp"
#include "cda/schedule.hpp"
#include "cda/types.hpp"

namespace cda {

struct TrainConfig {
    Real lr0 = 5e-4;
    Eigen::Index batch_size = 32;
    ScheduleConfig schedule;
    Real tau = 0.5;
    Real lr_decay = 0.8;
    int lr_period = 20;
    AdamWConfig adam;
    std::uint64_t seed = 1;
    bool contrastive_enabled = true;
    bool adversarial_enabled = true;
    int checkpoint_every = 10;
    std::string out_dir;  // empty disables checkpointing
    std::uint64_t config_hash = 0;
};

inline std::vector<std::string> train_config_violations(const TrainConfig& cfg) {
    std::vector<std::string> v;
    if (!(cfg.lr0 > 0)) v.push_back("lr0 must be > 0, got " + format_real(cfg.lr0));
    if (!(cfg.lr_decay > 0 && cfg.lr_decay <= 1))
        v.push_back("lr_decay must be in (0, 1], got " + format_real(cfg.lr_decay));
    if (cfg.lr_period < 1) v.push_back("lr_period must be >= 1");
    if (cfg.batch_size < 2)
        v.push_back("batch_size must be >= 2, got " + std::to_string(cfg.batch_size));
    if (!(cfg.tau > 0)) v.push_back("tau must be > 0, got " + format_real(cfg.tau));
    if (!(cfg.adam.beta1 >= 0 && cfg.adam.beta1 < 1)) v.push_back("adam beta1 must be in [0,1)");
    if (!(cfg.adam.beta2 >= 0 && cfg.adam.beta2 < 1)) v.push_back("adam beta2 must be in [0,1)");
    if (!(cfg.adam.eps > 0)) v.push_back("adam eps must be > 0");
    if (!(cfg.adam.weight_decay >= 0)) v.push_back("weight_decay must be >= 0");
    if (cfg.checkpoint_every < 1) v.push_back("checkpoint_every must be >= 1");
    // an unstaged schedule (E' = E'' = 0) is only meaningful without the
    // contrastive stages
    for (const std::string& s : schedule_violations(cfg.schedule, cfg.contrastive_enabled))
        v.push_back(s);
    return v;
}

// argmax of classifier logits per row, eval mode; ties go to the lowest index
inline VecI pseudo_labels(const CdaModel& m, const Mat& x_t) {
    Mat logits = forward_classify(m, forward_embed(m, x_t));
    VecI out(logits.rows());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        int best = 0;
        for (Eigen::Index j = 1; j < logits.cols(); ++j)
            if (logits(i, j) > logits(i, best)) best = static_cast<int>(j);
        out[i] = best;
    }
    return out;
}

inline Real evaluate(const CdaModel& m, const Mat& x, const VecI& y) {
    require(x.rows() > 0, "evaluate: empty dataset");
    require(y.size() == x.rows(), "evaluate: " + std::to_string(y.size()) + " labels for " +
                                      std::to_string(x.rows()) + " rows");
    VecI pred = pseudo_labels(m, x);
    Eigen::Index correct = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i)
        if (pred[i] == y[i]) ++correct;
    return static_cast<Real>(correct) / static_cast<Real>(y.size());
}

inline Real evaluate(const CdaModel& m, const LabeledDataset& ds) {
    return evaluate(m, ds.X, ds.Y);
}

inline Real evaluate(const CdaModel& m, const UnlabeledDataset& ds) {
    require(ds.hidden_Y.has_value(), "evaluate: dataset has no labels");
    return evaluate(m, ds.X, *ds.hidden_Y);
}

struct TrainResult {
    CdaModel model;
    std::vector<EpochRecord> history;
    std::string final_checkpoint;  // empty when checkpointing is off
};

namespace detail {

inline std::string checkpoint_path(const std::string& out_dir, int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "checkpoint_epoch_%04d.bin", epoch);
    return out_dir + "/" + buf;
}

}  // namespace detail

// Runs the full staged loop over an initialized model. The caller owns model
// construction so that architecture choices stay out of this module.
// Optional live writer flushes each epoch's record as it completes, so an
// interrupted run still leaves a readable history.
inline TrainResult train(const TrainConfig& cfg, CdaModel model, const LabeledDataset& d_s,
                         const UnlabeledDataset& d_t, HistoryWriter* live = nullptr) {
    {
        auto violations = train_config_violations(cfg);
        std::string all;
        for (const auto& v : violations) all += (all.empty() ? "" : "; ") + v;
        require(violations.empty(), "train: invalid config: " + all);
    }
    validate_labeled(d_s, "train");
    require(d_t.X.allFinite(), "train: non-finite target features");
    require(d_s.X.cols() == d_t.X.cols(),
            "train: source width " + std::to_string(d_s.X.cols()) + " vs target " +
                std::to_string(d_t.X.cols()));
    require(model.in_dim == d_s.X.cols(), "train: model expects in_dim " +
                                              std::to_string(model.in_dim) + ", data has " +
                                              std::to_string(d_s.X.cols()));
    require(model.num_classes == d_s.num_classes,
            "train: model has " + std::to_string(model.num_classes) + " classes, data has " +
                std::to_string(d_s.num_classes));

    bool checkpointing = !cfg.out_dir.empty();
    if (checkpointing) std::filesystem::create_directories(cfg.out_dir);
    std::string last_ckpt;

    AdamW opt(cfg.adam);
    TrainResult result;
    result.history.reserve(static_cast<size_t>(cfg.schedule.epochs));

    long iteration = 0;
    for (int epoch = 0; epoch < cfg.schedule.epochs; ++epoch) {
        StepWeights w = weights_at(epoch, cfg.schedule, cfg.contrastive_enabled,
                                   cfg.adversarial_enabled);
        Real lr = step_decay_lr(cfg.lr0, cfg.lr_decay, cfg.lr_period, epoch);

        bool want_supcl = cfg.contrastive_enabled && w.stage != Stage::kCrossDomain;
        bool want_adv = cfg.adversarial_enabled && w.stage != Stage::kSourceOnly;
        bool want_crosscl =
            cfg.contrastive_enabled && w.stage == Stage::kCrossDomain && w.beta > 0;

        BatchPlan plan =
            plan_batches(d_s.X.rows(), d_t.X.rows(), cfg.batch_size, cfg.seed, epoch);
        Eigen::Index n_batches = static_cast<Eigen::Index>(plan.src_idx.size());

        Real sum_ce = 0, sum_supcl = 0, sum_adv = 0, sum_crosscl = 0;
        int skips = 0;
        Eigen::Index pseudo_hits = 0, pseudo_seen = 0;

        for (Eigen::Index b = 0; b < n_batches; ++b, ++iteration) {
            PairedBatch batch =
                materialize_batch(d_s, d_t, plan.src_idx[static_cast<size_t>(b)],
                                  plan.tgt_idx[static_cast<size_t>(b)]);
            try {
                std::mt19937_64 rng(
                    mix_seed(mix_seed(cfg.seed, 0x64726f70ULL),
                             static_cast<std::uint64_t>(iteration)));  // dropout stream
                Tape tape;
                BoundModel bm = bind_model(tape, model);

                Var x_s = tape.constant(batch.x_s);
                Var z_s = embed_on_tape(bm, x_s, true, &rng);
                Var logits_s = classify_on_tape(bm, z_s, true, &rng);

                LossParts parts;
                parts.ce = cross_entropy(logits_s, batch.y_s);
                sum_ce += parts.ce->scalar();

                if (want_supcl) {
                    Var zs_unit = l2_normalize_rows(z_s);
                    parts.supcl = sup_contrastive(zs_unit, batch.y_s, cfg.tau);
                    sum_supcl += parts.supcl->scalar();
                }

                Var z_t{};
                if (want_adv || want_crosscl) {
                    Var x_t = tape.constant(batch.x_t);
                    z_t = embed_on_tape(bm, x_t, true, &rng);
                }

                if (want_adv) {
                    Var h_s = discriminate_on_tape(bm, gradient_reversal(z_s, w.lambda),
                                                   true, &rng);
                    Var h_t = discriminate_on_tape(bm, gradient_reversal(z_t, w.lambda),
                                                   true, &rng);
                    parts.adv = adversarial_loss_from_logits(h_s, h_t);
                    sum_adv += parts.adv->scalar();
                }

                StepWeights w_iter = w;
                if (want_crosscl) {
                    VecI pseudo = pseudo_labels(model, batch.x_t);
                    if (d_t.hidden_Y) {
                        const VecI& ti = plan.tgt_idx[static_cast<size_t>(b)];
                        for (Eigen::Index i = 0; i < pseudo.size(); ++i)
                            if (pseudo[i] == (*d_t.hidden_Y)[ti[i]]) ++pseudo_hits;
                        pseudo_seen += pseudo.size();
                    }
                    try {
                        parts.crosscl = cross_domain_contrastive(
                            l2_normalize_rows(z_s), batch.y_s, l2_normalize_rows(z_t),
                            pseudo, cfg.tau);
                        sum_crosscl += parts.crosscl->scalar();
                    } catch (const Error& e) {
                        if (std::string(e.what()).find("no cross-domain anchors") ==
                            std::string::npos)
                            throw;
                        ++skips;
                        w_iter.beta = 0;  // this iteration proceeds without the term
                    }
                }
                Var total = total_loss(parts, w_iter);
                tape.backward(total);

                std::vector<Mat*> params = model.params();
                std::vector<const Mat*> grads(params.size(), nullptr);
                for (size_t i = 0; i < params.size(); ++i) {
                    bool is_dis = i >= static_cast<size_t>(bm.dis_begin);
                    if (is_dis && !want_adv) continue;  // D sat out of this graph
                    grads[i] = &bm.vars[i].grad();
                }
                opt.step(params, grads, lr);
            } catch (const Error& e) {
                // Non-finite tensors and collapsed (zero or overflowed) embedding
                // rows are both divergence states, not usage errors.
                std::string msg = e.what();
                if (msg.find("non-finite") == std::string::npos &&
                    msg.find("l2_normalize") == std::string::npos)
                    throw;
                throw DivergenceError("train: diverged at epoch " + std::to_string(epoch) +
                                          " iteration " + std::to_string(iteration) + ": " +
                                          e.what(),
                                      last_ckpt);
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.stage = w.stage;
        rec.lambda = w.lambda;
        rec.beta = w.beta;
        rec.l_ce = sum_ce / static_cast<Real>(n_batches);
        rec.l_supcl = sum_supcl / static_cast<Real>(n_batches);
        rec.l_adv = sum_adv / static_cast<Real>(n_batches);
        rec.l_crosscl = sum_crosscl / static_cast<Real>(n_batches);
        rec.src_acc = evaluate(model, d_s);
        rec.tgt_acc = d_t.hidden_Y ? evaluate(model, d_t) : 0;
        // accuracy of the pseudo-labels the epoch actually consumed; outside
        // the cross-domain stage, the would-be labels over the full target set
        rec.pseudo_acc = 0;
        if (d_t.hidden_Y) {
            if (pseudo_seen > 0) {
                rec.pseudo_acc =
                    static_cast<Real>(pseudo_hits) / static_cast<Real>(pseudo_seen);
            } else {
                VecI pseudo = pseudo_labels(model, d_t.X);
                Eigen::Index match = 0;
                for (Eigen::Index i = 0; i < pseudo.size(); ++i)
                    if (pseudo[i] == (*d_t.hidden_Y)[i]) ++match;
                rec.pseudo_acc = static_cast<Real>(match) / static_cast<Real>(pseudo.size());
            }
        }
        rec.lr = lr;
        rec.crosscl_skips = skips;
        result.history.push_back(rec);
        if (live) live->append(rec);

        if (checkpointing && (epoch + 1) % cfg.checkpoint_every == 0) {
            last_ckpt = detail::checkpoint_path(cfg.out_dir, epoch);
            save_checkpoint(model, last_ckpt, cfg.config_hash);
        }
    }

    if (checkpointing) {
        result.final_checkpoint = cfg.out_dir + "/checkpoint_final.bin";
        save_checkpoint(model, result.final_checkpoint, cfg.config_hash);
    }
    result.model = std::move(model);
    return result;
}

}  // namespace cda
