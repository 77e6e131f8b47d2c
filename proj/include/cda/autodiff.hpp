#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A TapeT is a define-by-run graph: every op appends one node holding its
// forward value, and backward() walks the nodes once in reverse insertion
// order. Values are immutable after creation; only grad buffers are written
// during backward. Everything is single-threaded and bit-deterministic for
// identical inputs.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cda/types.hpp"

namespace cda {

enum class OpKind {
    kLeaf,        // trainable input; grad is collected here
    kConst,       // constant; no grad
    kMatMul,
    kAdd,         // same-shape elementwise
    kSub,
    kAddRowVec,   // broadcast a [1 x C] row over every row
    kAddColVec,   // broadcast a [R x 1] column over every column
    kMul,         // Hadamard
    kDiv,         // elementwise
    kRelu,
    kExp,
    kLog,
    kSigmoid,
    kSumAxis0,    // [R x C] -> [1 x C]
    kSumAxis1,    // [R x C] -> [R x 1]
    kSumAll,      // -> [1 x 1]
    kMeanAxis0,
    kMeanAxis1,
    kMeanAll,
    kMaxAxis0,    // subgradient to the first maximum
    kMaxAxis1,
    kTranspose,
    kConcatRows,
    kDropoutMask, // x .* mask * scale, mask is a kConst input
    kAffine,      // p0 * x + p1 elementwise
    kGradReverse, // identity forward, grad *= -p0
    kL2NormRows,  // row-wise x / ||x||
};

template <typename S>
class TapeT;

// Cheap handle into a tape; copyable, valid as long as the tape lives.
template <typename S>
struct VarT {
    TapeT<S>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const MatT<S>& value() const { return tape->node(id).value; }
    const MatT<S>& grad() const { return tape->node(id).grad; }
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    S scalar() const {
        require(rows() == 1 && cols() == 1, "scalar(): node is " + shape_str(value()));
        return value()(0, 0);
    }
};

template <typename S>
class TapeT {
  public:
    using Mat = MatT<S>;
    using Var = VarT<S>;

    struct Node {
        OpKind kind;
        int in0 = -1;
        int in1 = -1;
        Mat value;
        Mat grad;       // allocated by backward(); same shape as value
        Mat aux;        // op-specific saved state (norms, argmax indices)
        S p0 = S(0);
        S p1 = S(0);
        bool needs_grad = false;
    };

    Var input(Mat v) { return push(OpKind::kLeaf, std::move(v), -1, -1, true, "input"); }
    Var constant(Mat v) { return push(OpKind::kConst, std::move(v), -1, -1, false, "constant"); }
    Var constant(S v) {
        Mat m(1, 1);
        m(0, 0) = v;
        return constant(std::move(m));
    }

    const Node& node(int id) const { return nodes_.at(static_cast<size_t>(id)); }
    std::size_t size() const { return nodes_.size(); }

    // Populates grad buffers for every node that the scalar loss depends on.
    // Grads of unreachable nodes stay zero. Visits each node exactly once in
    // reverse insertion order.
    void backward(Var loss) {
        require(loss.valid() && loss.tape == this, "backward: loss not on this tape");
        const Node& top = node(loss.id);
        require(top.value.rows() == 1 && top.value.cols() == 1,
                "backward: loss must be scalar, got " + shape_str(top.value));
        for (Node& n : nodes_) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        nodes_[static_cast<size_t>(loss.id)].grad(0, 0) = S(1);
        for (int id = loss.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (!n.needs_grad && n.kind != OpKind::kLeaf) continue;
            accumulate(n);
        }
    }

    // --- op construction (free functions below call these) -----------------

    Var make_unary(OpKind kind, Var x, Mat value, S p0 = S(0), S p1 = S(0), Mat aux = Mat()) {
        check_owned(x);
        Var v = push(kind, std::move(value), x.id, -1, node(x.id).needs_grad, "op");
        Node& n = nodes_.back();
        n.p0 = p0;
        n.p1 = p1;
        n.aux = std::move(aux);
        return v;
    }

    Var make_binary(OpKind kind, Var a, Var b, Mat value, S p0 = S(0)) {
        check_owned(a);
        check_owned(b);
        bool ng = node(a.id).needs_grad || node(b.id).needs_grad;
        Var v = push(kind, std::move(value), a.id, b.id, ng, "op");
        nodes_.back().p0 = p0;
        return v;
    }

  private:
    std::vector<Node> nodes_;

    void check_owned(Var v) const {
        require(v.valid() && v.tape == this, "op input is not a node of this tape");
    }

    Var push(OpKind kind, Mat value, int in0, int in1, bool needs_grad, const char* what) {
        require(value.allFinite(), std::string(what) + ": non-finite values in tensor " +
                                       shape_str(value));
        Node n;
        n.kind = kind;
        n.in0 = in0;
        n.in1 = in1;
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int>(nodes_.size() - 1)};
    }

    Mat& grad_of(int id) { return nodes_[static_cast<size_t>(id)].grad; }
    const Mat& val_of(int id) const { return nodes_[static_cast<size_t>(id)].value; }

    bool wants_grad(int id) const {
        return id >= 0 && nodes_[static_cast<size_t>(id)].needs_grad;
    }

    void accumulate(Node& n) {
        const Mat& g = n.grad;
        switch (n.kind) {
            case OpKind::kLeaf:
            case OpKind::kConst:
                break;
            case OpKind::kMatMul:
                if (wants_grad(n.in0)) grad_of(n.in0).noalias() += g * val_of(n.in1).transpose();
                if (wants_grad(n.in1)) grad_of(n.in1).noalias() += val_of(n.in0).transpose() * g;
                break;
            case OpKind::kAdd:
                if (wants_grad(n.in0)) grad_of(n.in0) += g;
                if (wants_grad(n.in1)) grad_of(n.in1) += g;
                break;
            case OpKind::kSub:
                if (wants_grad(n.in0)) grad_of(n.in0) += g;
                if (wants_grad(n.in1)) grad_of(n.in1) -= g;
                break;
            case OpKind::kAddRowVec:
                if (wants_grad(n.in0)) grad_of(n.in0) += g;
                if (wants_grad(n.in1)) grad_of(n.in1) += g.colwise().sum();
                break;
            case OpKind::kAddColVec:
                if (wants_grad(n.in0)) grad_of(n.in0) += g;
                if (wants_grad(n.in1)) grad_of(n.in1) += g.rowwise().sum();
                break;
            case OpKind::kMul:
                if (wants_grad(n.in0)) grad_of(n.in0).array() += g.array() * val_of(n.in1).array();
                if (wants_grad(n.in1)) grad_of(n.in1).array() += g.array() * val_of(n.in0).array();
                break;
            case OpKind::kDiv:
                if (wants_grad(n.in0)) grad_of(n.in0).array() += g.array() / val_of(n.in1).array();
                if (wants_grad(n.in1))
                    grad_of(n.in1).array() -=
                        g.array() * val_of(n.in0).array() /
                        (val_of(n.in1).array() * val_of(n.in1).array());
                break;
            case OpKind::kRelu:
                if (wants_grad(n.in0))
                    grad_of(n.in0).array() +=
                        g.array() * (val_of(n.in0).array() > S(0)).template cast<S>();
                break;
            case OpKind::kExp:
                if (wants_grad(n.in0)) grad_of(n.in0).array() += g.array() * n.value.array();
                break;
            case OpKind::kLog:
                if (wants_grad(n.in0)) grad_of(n.in0).array() += g.array() / val_of(n.in0).array();
                break;
            case OpKind::kSigmoid:
                if (wants_grad(n.in0))
                    grad_of(n.in0).array() +=
                        g.array() * n.value.array() * (S(1) - n.value.array());
                break;
            case OpKind::kSumAxis0:
                if (wants_grad(n.in0))
                    grad_of(n.in0) += g.replicate(val_of(n.in0).rows(), 1);
                break;
            case OpKind::kSumAxis1:
                if (wants_grad(n.in0))
                    grad_of(n.in0) += g.replicate(1, val_of(n.in0).cols());
                break;
            case OpKind::kSumAll:
                if (wants_grad(n.in0))
                    grad_of(n.in0).array() += g(0, 0);
                break;
            case OpKind::kMeanAxis0:
                if (wants_grad(n.in0))
                    grad_of(n.in0) += g.replicate(val_of(n.in0).rows(), 1) /
                                      static_cast<S>(val_of(n.in0).rows());
                break;
            case OpKind::kMeanAxis1:
                if (wants_grad(n.in0))
                    grad_of(n.in0) += g.replicate(1, val_of(n.in0).cols()) /
                                      static_cast<S>(val_of(n.in0).cols());
                break;
            case OpKind::kMeanAll:
                if (wants_grad(n.in0))
                    grad_of(n.in0).array() += g(0, 0) / static_cast<S>(val_of(n.in0).size());
                break;
            case OpKind::kMaxAxis0:
                if (wants_grad(n.in0)) {
                    Mat& gi = grad_of(n.in0);
                    for (Eigen::Index c = 0; c < n.value.cols(); ++c)
                        gi(static_cast<Eigen::Index>(n.aux(0, c)), c) += g(0, c);
                }
                break;
            case OpKind::kMaxAxis1:
                if (wants_grad(n.in0)) {
                    Mat& gi = grad_of(n.in0);
                    for (Eigen::Index r = 0; r < n.value.rows(); ++r)
                        gi(r, static_cast<Eigen::Index>(n.aux(r, 0))) += g(r, 0);
                }
                break;
            case OpKind::kTranspose:
                if (wants_grad(n.in0)) grad_of(n.in0) += g.transpose();
                break;
            case OpKind::kConcatRows:
                if (wants_grad(n.in0))
                    grad_of(n.in0) += g.topRows(val_of(n.in0).rows());
                if (wants_grad(n.in1))
                    grad_of(n.in1) += g.bottomRows(val_of(n.in1).rows());
                break;
            case OpKind::kDropoutMask:
                if (wants_grad(n.in0))
                    grad_of(n.in0).array() += g.array() * val_of(n.in1).array() * n.p0;
                break;
            case OpKind::kAffine:
                if (wants_grad(n.in0)) grad_of(n.in0) += n.p0 * g;
                break;
            case OpKind::kGradReverse:
                if (wants_grad(n.in0)) grad_of(n.in0) -= n.p0 * g;
                break;
            case OpKind::kL2NormRows:
                if (wants_grad(n.in0)) {
                    // y = z / ||z||; dz = (g - (g.y) y) / ||z|| per row
                    Mat& gi = grad_of(n.in0);
                    for (Eigen::Index r = 0; r < n.value.rows(); ++r) {
                        S dot = g.row(r).dot(n.value.row(r));
                        gi.row(r) += (g.row(r) - dot * n.value.row(r)) / n.aux(r, 0);
                    }
                }
                break;
        }
    }
};

// ---------------------------------------------------------------------------
// Op free functions
// ---------------------------------------------------------------------------

template <typename S>
VarT<S> matmul(VarT<S> a, VarT<S> b) {
    require(a.cols() == b.rows(), "matmul: shape mismatch " + shape_str(a.value()) + " * " +
                                      shape_str(b.value()));
    MatT<S> v = a.value() * b.value();
    return a.tape->make_binary(OpKind::kMatMul, a, b, std::move(v));
}

template <typename S>
VarT<S> add(VarT<S> a, VarT<S> b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(),
            "add: shape mismatch " + shape_str(a.value()) + " + " + shape_str(b.value()));
    return a.tape->make_binary(OpKind::kAdd, a, b, a.value() + b.value());
}

template <typename S>
VarT<S> sub(VarT<S> a, VarT<S> b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(),
            "sub: shape mismatch " + shape_str(a.value()) + " - " + shape_str(b.value()));
    return a.tape->make_binary(OpKind::kSub, a, b, a.value() - b.value());
}

// x + row broadcast over every row of x.
template <typename S>
VarT<S> add_rowvec(VarT<S> x, VarT<S> row) {
    require(row.rows() == 1 && row.cols() == x.cols(),
            "add_rowvec: shape mismatch " + shape_str(x.value()) + " + " +
                shape_str(row.value()));
    MatT<S> v = x.value();
    v.rowwise() += row.value().row(0);
    return x.tape->make_binary(OpKind::kAddRowVec, x, row, std::move(v));
}

template <typename S>
VarT<S> add_colvec(VarT<S> x, VarT<S> col) {
    require(col.cols() == 1 && col.rows() == x.rows(),
            "add_colvec: shape mismatch " + shape_str(x.value()) + " + " +
                shape_str(col.value()));
    MatT<S> v = x.value();
    v.colwise() += col.value().col(0);
    return x.tape->make_binary(OpKind::kAddColVec, x, col, std::move(v));
}

template <typename S>
VarT<S> mul(VarT<S> a, VarT<S> b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(),
            "mul: shape mismatch " + shape_str(a.value()) + " .* " + shape_str(b.value()));
    MatT<S> v = a.value().cwiseProduct(b.value());
    return a.tape->make_binary(OpKind::kMul, a, b, std::move(v));
}

template <typename S>
VarT<S> div(VarT<S> a, VarT<S> b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(),
            "div: shape mismatch " + shape_str(a.value()) + " ./ " + shape_str(b.value()));
    MatT<S> v = a.value().cwiseQuotient(b.value());
    return a.tape->make_binary(OpKind::kDiv, a, b, std::move(v));
}

template <typename S>
VarT<S> relu(VarT<S> x) {
    MatT<S> v = x.value().cwiseMax(S(0));
    return x.tape->make_unary(OpKind::kRelu, x, std::move(v));
}

template <typename S>
VarT<S> exp(VarT<S> x) {
    MatT<S> v = x.value().array().exp();
    return x.tape->make_unary(OpKind::kExp, x, std::move(v));
}

template <typename S>
VarT<S> log(VarT<S> x) {
    MatT<S> v = x.value().array().log();
    return x.tape->make_unary(OpKind::kLog, x, std::move(v));
}

template <typename S>
VarT<S> sigmoid(VarT<S> x) {
    MatT<S> v(x.rows(), x.cols());
    const MatT<S>& in = x.value();
    for (Eigen::Index j = 0; j < in.cols(); ++j)
        for (Eigen::Index i = 0; i < in.rows(); ++i) {
            S z = in(i, j);
            v(i, j) = z >= S(0) ? S(1) / (S(1) + std::exp(-z))
                                : std::exp(z) / (S(1) + std::exp(z));
        }
    return x.tape->make_unary(OpKind::kSigmoid, x, std::move(v));
}

template <typename S>
VarT<S> sum_axis(VarT<S> x, int axis) {
    require(axis == 0 || axis == 1, "sum_axis: axis must be 0 or 1");
    if (axis == 0) {
        MatT<S> v = x.value().colwise().sum();
        return x.tape->make_unary(OpKind::kSumAxis0, x, std::move(v));
    }
    MatT<S> v = x.value().rowwise().sum();
    return x.tape->make_unary(OpKind::kSumAxis1, x, std::move(v));
}

template <typename S>
VarT<S> sum_all(VarT<S> x) {
    MatT<S> v(1, 1);
    v(0, 0) = x.value().sum();
    return x.tape->make_unary(OpKind::kSumAll, x, std::move(v));
}

template <typename S>
VarT<S> mean_axis(VarT<S> x, int axis) {
    require(axis == 0 || axis == 1, "mean_axis: axis must be 0 or 1");
    if (axis == 0) {
        require(x.rows() > 0, "mean_axis: empty axis 0 in " + shape_str(x.value()));
        MatT<S> v = x.value().colwise().mean();
        return x.tape->make_unary(OpKind::kMeanAxis0, x, std::move(v));
    }
    require(x.cols() > 0, "mean_axis: empty axis 1 in " + shape_str(x.value()));
    MatT<S> v = x.value().rowwise().mean();
    return x.tape->make_unary(OpKind::kMeanAxis1, x, std::move(v));
}

template <typename S>
VarT<S> mean_all(VarT<S> x) {
    require(x.value().size() > 0, "mean_all: empty tensor");
    MatT<S> v(1, 1);
    v(0, 0) = x.value().mean();
    return x.tape->make_unary(OpKind::kMeanAll, x, std::move(v));
}

// Max along an axis. Ties route the subgradient to the lowest index.
template <typename S>
VarT<S> max_axis(VarT<S> x, int axis) {
    require(axis == 0 || axis == 1, "max_axis: axis must be 0 or 1");
    const MatT<S>& in = x.value();
    if (axis == 0) {
        require(in.rows() > 0, "max_axis: empty axis 0 in " + shape_str(in));
        MatT<S> v(1, in.cols());
        MatT<S> arg(1, in.cols());
        for (Eigen::Index c = 0; c < in.cols(); ++c) {
            Eigen::Index best = 0;
            for (Eigen::Index r = 1; r < in.rows(); ++r)
                if (in(r, c) > in(best, c)) best = r;
            v(0, c) = in(best, c);
            arg(0, c) = static_cast<S>(best);
        }
        return x.tape->make_unary(OpKind::kMaxAxis0, x, std::move(v), S(0), S(0), std::move(arg));
    }
    require(in.cols() > 0, "max_axis: empty axis 1 in " + shape_str(in));
    MatT<S> v(in.rows(), 1);
    MatT<S> arg(in.rows(), 1);
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < in.cols(); ++c)
            if (in(r, c) > in(r, best)) best = c;
        v(r, 0) = in(r, best);
        arg(r, 0) = static_cast<S>(best);
    }
    return x.tape->make_unary(OpKind::kMaxAxis1, x, std::move(v), S(0), S(0), std::move(arg));
}

template <typename S>
VarT<S> transpose(VarT<S> x) {
    MatT<S> v = x.value().transpose();
    return x.tape->make_unary(OpKind::kTranspose, x, std::move(v));
}

template <typename S>
VarT<S> concat_rows(VarT<S> a, VarT<S> b) {
    require(a.cols() == b.cols(), "concat_rows: column mismatch " + shape_str(a.value()) +
                                      " vs " + shape_str(b.value()));
    MatT<S> v(a.rows() + b.rows(), a.cols());
    v.topRows(a.rows()) = a.value();
    v.bottomRows(b.rows()) = b.value();
    return a.tape->make_binary(OpKind::kConcatRows, a, b, std::move(v));
}

// Inverted-dropout application: x .* mask * scale. The mask must be a
// constant node of the same shape; scale is typically 1/(1-rate).
template <typename S>
VarT<S> dropout_apply(VarT<S> x, VarT<S> mask, S scale) {
    require(mask.rows() == x.rows() && mask.cols() == x.cols(),
            "dropout_apply: mask shape " + shape_str(mask.value()) + " vs input " +
                shape_str(x.value()));
    MatT<S> v = x.value().cwiseProduct(mask.value()) * scale;
    return x.tape->make_binary(OpKind::kDropoutMask, x, mask, std::move(v), scale);
}

// a * x + b, elementwise.
template <typename S>
VarT<S> affine(VarT<S> x, S a, S b) {
    MatT<S> v = (x.value().array() * a + b).matrix();
    return x.tape->make_unary(OpKind::kAffine, x, std::move(v), a, b);
}

// Identity in the forward pass (bit-exact copy); multiplies the upstream
// gradient by -lambda in the backward pass.
template <typename S>
VarT<S> gradient_reversal(VarT<S> x, S lambda) {
    require(std::isfinite(lambda) && lambda >= S(0),
            "gradient_reversal: lambda must be finite and >= 0, got " +
                format_real(static_cast<double>(lambda)));
    MatT<S> v = x.value();
    return x.tape->make_unary(OpKind::kGradReverse, x, std::move(v), lambda);
}

// Row-wise L2 normalization. Rows whose norm is near zero or overflows are
// rejected; both are collapse states, not representable directions.
template <typename S>
VarT<S> l2_normalize_rows(VarT<S> x) {
    const MatT<S>& in = x.value();
    MatT<S> v(in.rows(), in.cols());
    MatT<S> norms(in.rows(), 1);
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
        S n = in.row(r).norm();
        require(std::isfinite(n),
                "l2_normalize: row " + std::to_string(r) + " has non-finite norm");
        require(n > S(1e-12),
                "l2_normalize: row " + std::to_string(r) + " has near-zero norm");
        v.row(r) = in.row(r) / n;
        norms(r, 0) = n;
    }
    return x.tape->make_unary(OpKind::kL2NormRows, x, std::move(v), S(0), S(0),
                              std::move(norms));
}

template <typename S>
VarT<S> operator+(VarT<S> a, VarT<S> b) {
    return add(a, b);
}
template <typename S>
VarT<S> operator-(VarT<S> a, VarT<S> b) {
    return sub(a, b);
}
template <typename S>
VarT<S> operator*(S a, VarT<S> x) {
    return affine(x, a, S(0));
}

// ---------------------------------------------------------------------------
// Finite-difference check
// ---------------------------------------------------------------------------

// build: (TapeT<S>&, VarT<S> x) -> scalar VarT<S>. Returns the max over
// coordinates of |analytic - central difference| / max(1, |analytic|).
template <typename S, typename F>
S grad_check(F&& build, const MatT<S>& x0, S eps) {
    require(eps > S(0), "grad_check: eps must be positive");
    TapeT<S> tape;
    VarT<S> x = tape.input(x0);
    VarT<S> loss = build(tape, x);
    tape.backward(loss);
    MatT<S> analytic = x.grad();

    auto eval = [&](const MatT<S>& pt) {
        TapeT<S> t;
        VarT<S> xi = t.input(pt);
        return build(t, xi).scalar();
    };

    S worst = S(0);
    MatT<S> pt = x0;
    for (Eigen::Index j = 0; j < pt.cols(); ++j)
        for (Eigen::Index i = 0; i < pt.rows(); ++i) {
            S keep = pt(i, j);
            pt(i, j) = keep + eps;
            S f_plus = eval(pt);
            pt(i, j) = keep - eps;
            S f_minus = eval(pt);
            pt(i, j) = keep;
            S fd = (f_plus - f_minus) / (S(2) * eps);
            S a = analytic(i, j);
            S rel = std::abs(a - fd) / std::max(S(1), std::abs(a));
            if (rel > worst) worst = rel;
        }
    return worst;
}

using Tape = TapeT<Real>;
using Var = VarT<Real>;

}  // namespace cda
