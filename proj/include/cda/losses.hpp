#pragma once

// The four training losses: cross-entropy, the adversarial domain game, and
// the two contrastive alignment losses. All are built from autodiff ops so
// gradients flow to whatever parameters produced the inputs. Every log of a
// sum of exponentials is computed with max-subtraction.

#include <algorithm>
#include <cmath>
#include <iterator>
#include <string>
#include <vector>

#include "cda/autodiff.hpp"
#include "cda/types.hpp"

namespace cda {

enum class LossKind { kCE, kAdv, kSupCL, kCrossCL };

template <typename S>
struct LossValueT {
    VarT<S> value;
    LossKind kind;
    S scalar() const { return value.scalar(); }
};

using LossValue = LossValueT<Real>;

namespace detail {

// Row maxima read off the forward values and re-injected as a constant: the
// usual detached log-sum-exp shift, which leaves gradients unchanged.
template <typename S>
MatT<S> row_max_values(const VarT<S>& x) {
    return x.value().rowwise().maxCoeff();
}

inline void check_labels(const VecI& labels, Eigen::Index batch, Eigen::Index num_classes,
                         const char* who) {
    require(labels.size() == batch,
            std::string(who) + ": got " + std::to_string(labels.size()) + " labels for " +
                std::to_string(batch) + " rows");
    for (Eigen::Index i = 0; i < labels.size(); ++i)
        require(labels[i] >= 0 && (num_classes < 0 || labels[i] < num_classes),
                std::string(who) + ": label " + std::to_string(labels[i]) + " at index " +
                    std::to_string(i) + " is out of range");
}

template <typename S>
void check_unit_rows(const MatT<S>& z, const char* who) {
    for (Eigen::Index r = 0; r < z.rows(); ++r)
        require(std::abs(z.row(r).norm() - S(1)) < S(1e-3),
                std::string(who) + ": row " + std::to_string(r) +
                    " is not unit norm (forgot l2_normalize?)");
}

}  // namespace detail

// Mean over the batch of -log softmax(logits)[label].
template <typename S>
LossValueT<S> cross_entropy(VarT<S> logits, const VecI& labels) {
    Eigen::Index B = logits.rows();
    Eigen::Index N = logits.cols();
    require(B >= 1, "cross_entropy: batch must be non-empty");
    detail::check_labels(labels, B, N, "cross_entropy");

    TapeT<S>& t = *logits.tape;
    MatT<S> m = detail::row_max_values(logits);
    VarT<S> shifted = add_colvec(logits, t.constant(MatT<S>(-m)));
    VarT<S> lse = add(log(sum_axis(exp(shifted), 1)), t.constant(m));  // [B x 1]

    MatT<S> onehot = MatT<S>::Zero(B, N);
    for (Eigen::Index i = 0; i < B; ++i) onehot(i, labels[i]) = S(1);
    VarT<S> picked = sum_axis(mul(logits, t.constant(onehot)), 1);  // [B x 1]

    return {mean_all(sub(lse, picked)), LossKind::kCE};
}

// Eq-level adversarial value on domain probabilities (D's sigmoid outputs,
// convention: probability the sample came from the target domain):
//   mean log d_tgt + mean log(1 - d_src).
// D is trained by ascent on this value; G receives it through the
// gradient-reversal op. Batch means keep the magnitude batch-size free.
template <typename S>
LossValueT<S> adversarial_loss(VarT<S> d_src, VarT<S> d_tgt) {
    require(d_src.cols() == 1 && d_tgt.cols() == 1,
            "adversarial_loss: expected column vectors, got " + shape_str(d_src.value()) +
                " and " + shape_str(d_tgt.value()));
    require(d_src.rows() >= 1 && d_tgt.rows() >= 1,
            "adversarial_loss: batches must be non-empty");
    for (const VarT<S>* v : {&d_src, &d_tgt})
        for (Eigen::Index i = 0; i < v->rows(); ++i) {
            S p = v->value()(i, 0);
            require(p > S(0) && p < S(1),
                    "adversarial_loss: probability " + format_real(static_cast<double>(p)) +
                        " outside (0,1) at row " + std::to_string(i) +
                        " (missing sigmoid?)");
        }
    VarT<S> term_t = mean_all(log(d_tgt));
    VarT<S> term_s = mean_all(log(affine(d_src, S(-1), S(1))));
    return {add(term_t, term_s), LossKind::kAdv};
}

// softplus(x) = log(1 + e^x), computed as relu(x) + log(1 + e^{-|x|}) so the
// exponential never overflows.
template <typename S>
VarT<S> softplus(VarT<S> x) {
    VarT<S> absx = add(relu(x), relu(affine(x, S(-1), S(0))));
    VarT<S> lp = log(affine(exp(affine(absx, S(-1), S(0))), S(1), S(1)));
    return add(relu(x), lp);
}

// Same value as adversarial_loss(sigmoid(h_src), sigmoid(h_tgt)) but computed
// in logit space: log sigmoid(h) = -softplus(-h) and log(1 - sigmoid(h)) =
// -softplus(h). Safe for saturated discriminators where sigmoid rounds to 0
// or 1 in double precision.
template <typename S>
LossValueT<S> adversarial_loss_from_logits(VarT<S> h_src, VarT<S> h_tgt) {
    require(h_src.cols() == 1 && h_tgt.cols() == 1,
            "adversarial_loss: expected column vectors, got " + shape_str(h_src.value()) +
                " and " + shape_str(h_tgt.value()));
    require(h_src.rows() >= 1 && h_tgt.rows() >= 1,
            "adversarial_loss: batches must be non-empty");
    VarT<S> term_t = affine(mean_all(softplus(affine(h_tgt, S(-1), S(0)))), S(-1), S(0));
    VarT<S> term_s = affine(mean_all(softplus(h_src)), S(-1), S(0));
    return {add(term_t, term_s), LossKind::kAdv};
}

// Supervised contrastive loss over one batch of unit-norm embeddings. For
// every ordered same-class pair (anchor a, positive p), the per-pair term is
//   -log[ exp(s_ap/tau) / (exp(s_ap/tau) + sum over different-class z-) ];
// other positives of the anchor do not enter the denominator. The loss is the
// mean over all such ordered pairs.
template <typename S>
LossValueT<S> sup_contrastive(VarT<S> z, const VecI& labels, S tau) {
    require(tau > S(0), "sup_contrastive: tau must be positive, got " +
                            format_real(static_cast<double>(tau)));
    Eigen::Index B = z.rows();
    detail::check_labels(labels, B, Eigen::Index(-1), "sup_contrastive");
    detail::check_unit_rows(z.value(), "sup_contrastive");

    MatT<S> posmask = MatT<S>::Zero(B, B);
    MatT<S> negmask = MatT<S>::Zero(B, B);
    Eigen::Index pairs = 0;
    for (Eigen::Index a = 0; a < B; ++a)
        for (Eigen::Index j = 0; j < B; ++j) {
            if (labels[a] == labels[j]) {
                if (a != j) {
                    posmask(a, j) = S(1);
                    ++pairs;
                }
            } else {
                negmask(a, j) = S(1);
            }
        }
    require(pairs > 0, "sup_contrastive: degenerate batch (no positive pair)");

    TapeT<S>& t = *z.tape;
    VarT<S> sim = affine(matmul(z, transpose(z)), S(1) / tau, S(0));  // [B x B]
    MatT<S> m = detail::row_max_values(sim);
    VarT<S> shifted = add_colvec(sim, t.constant(MatT<S>(-m)));
    VarT<S> e = exp(shifted);                                      // entries in (0, 1]
    VarT<S> negsum = sum_axis(mul(e, t.constant(negmask)), 1);     // [B x 1]
    // per-pair term -log(num/(num+negsum)) written as log(1 + negsum/num):
    // exactly zero for anchors without negatives and never rounds negative
    VarT<S> negsum_bc = matmul(negsum, t.constant(MatT<S>(MatT<S>::Ones(1, B))));
    VarT<S> terms = log(affine(div(negsum_bc, e), S(1), S(1)));
    VarT<S> total = sum_all(mul(terms, t.constant(posmask)));
    return {affine(total, S(1) / static_cast<S>(pairs), S(0)), LossKind::kSupCL};
}

// Cross-domain contrastive loss over per-domain, per-class batch centroids.
// For each class present in both domains, the anchor is the normalized source
// centroid, the positive is the same-class target centroid, and the negatives
// are all other target-present class centroids. The denominator includes the
// positive term; the loss is the mean over qualifying classes.
template <typename S>
LossValueT<S> cross_domain_contrastive(VarT<S> z_s, const VecI& y_s, VarT<S> z_t,
                                       const VecI& y_t, S tau) {
    require(tau > S(0), "cross_domain_contrastive: tau must be positive, got " +
                            format_real(static_cast<double>(tau)));
    detail::check_labels(y_s, z_s.rows(), Eigen::Index(-1), "cross_domain_contrastive");
    detail::check_labels(y_t, z_t.rows(), Eigen::Index(-1), "cross_domain_contrastive");
    require(z_s.cols() == z_t.cols(),
            "cross_domain_contrastive: embedding dims differ, " + shape_str(z_s.value()) +
                " vs " + shape_str(z_t.value()));
    detail::check_unit_rows(z_s.value(), "cross_domain_contrastive");
    detail::check_unit_rows(z_t.value(), "cross_domain_contrastive");

    auto present_classes = [](const VecI& y) {
        std::vector<int> cls(y.data(), y.data() + y.size());
        std::sort(cls.begin(), cls.end());
        cls.erase(std::unique(cls.begin(), cls.end()), cls.end());
        return cls;
    };
    std::vector<int> cls_s = present_classes(y_s);
    std::vector<int> cls_t = present_classes(y_t);
    std::vector<int> shared;
    std::set_intersection(cls_s.begin(), cls_s.end(), cls_t.begin(), cls_t.end(),
                          std::back_inserter(shared));
    require(!shared.empty(), "cross_domain_contrastive: no cross-domain anchors");

    TapeT<S>& t = *z_s.tape;
    // centroid = normalize(mean of class rows) = normalize(W z) with W the
    // per-class averaging matrix
    auto centroids = [&t](VarT<S> z, const VecI& y, const std::vector<int>& classes,
                          const char* domain) {
        MatT<S> w = MatT<S>::Zero(static_cast<Eigen::Index>(classes.size()), z.rows());
        for (size_t c = 0; c < classes.size(); ++c) {
            Eigen::Index count = 0;
            for (Eigen::Index b = 0; b < y.size(); ++b)
                if (y[b] == classes[c]) ++count;
            for (Eigen::Index b = 0; b < y.size(); ++b)
                if (y[b] == classes[c])
                    w(static_cast<Eigen::Index>(c), b) = S(1) / static_cast<S>(count);
        }
        MatT<S> raw = w * z.value();
        for (size_t c = 0; c < classes.size(); ++c) {
            Eigen::Index r = static_cast<Eigen::Index>(c);
            require(raw.row(r).allFinite() && raw.row(r).norm() > S(1e-12),
                    std::string("cross_domain_contrastive: degenerate ") + domain +
                        " centroid for class " + std::to_string(classes[c]));
        }
        return l2_normalize_rows(matmul(t.constant(std::move(w)), z));
    };
    VarT<S> c_s = centroids(z_s, y_s, shared, "source");  // anchors only
    VarT<S> c_t = centroids(z_t, y_t, cls_t, "target");   // all target classes

    // position of each shared class among the target-class columns
    MatT<S> posmask = MatT<S>::Zero(static_cast<Eigen::Index>(shared.size()),
                                    static_cast<Eigen::Index>(cls_t.size()));
    for (size_t a = 0; a < shared.size(); ++a) {
        auto it = std::lower_bound(cls_t.begin(), cls_t.end(), shared[a]);
        posmask(static_cast<Eigen::Index>(a),
                static_cast<Eigen::Index>(it - cls_t.begin())) = S(1);
    }

    VarT<S> sim = affine(matmul(c_s, transpose(c_t)), S(1) / tau, S(0));  // [A x Ct]
    MatT<S> m = detail::row_max_values(sim);
    VarT<S> shifted = add_colvec(sim, t.constant(MatT<S>(-m)));
    VarT<S> e = exp(shifted);
    MatT<S> negmask = MatT<S>::Ones(posmask.rows(), posmask.cols()) - posmask;
    VarT<S> e_pos = sum_axis(mul(e, t.constant(posmask)), 1);   // [A x 1]
    VarT<S> negsum = sum_axis(mul(e, t.constant(negmask)), 1);  // [A x 1]
    // -log(pos/(pos+negsum)) as log(1 + negsum/pos): exactly zero when the
    // shared class has no competing target class
    VarT<S> terms = log(affine(div(negsum, e_pos), S(1), S(1)));
    return {mean_all(terms), LossKind::kCrossCL};
}

}  // namespace cda
