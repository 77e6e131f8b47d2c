#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <functional>
#include <random>
#include <vector>

#include "cda/autodiff.hpp"

using cda::Mat;
using cda::Tape;
using cda::Var;

namespace {

bool bits_equal(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<size_t>(a.size())) == 0;
}

Mat random_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo = -2.0,
               double hi = 2.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Mat m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = dist(rng);
    return m;
}

// Random matrix whose entries are bounded away from the given point, so
// finite differences do not straddle a kink.
Mat random_mat_away_from(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double point,
                         double margin) {
    Mat m = random_mat(rng, r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) {
            double d = m(i, j) - point;
            if (std::abs(d) < margin) m(i, j) = point + (d >= 0 ? margin : -margin) * 2.0;
        }
    return m;
}

Eigen::Index random_dim(std::mt19937_64& rng) {
    return 1 + static_cast<Eigen::Index>(rng() % 5);
}

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-4;
constexpr int kCases = 100;

}  // namespace

TEST_CASE("forward examples match hand arithmetic") {
    Tape t;
    Mat a(2, 2), id2(2, 2);
    a << 1, 2, 3, 4;
    id2 << 1, 0, 0, 1;
    Var va = t.input(a);
    Var vi = t.constant(id2);
    CHECK(bits_equal(matmul(va, vi).value(), a));

    Mat x(1, 3);
    x << -1, 0, 2;
    Mat want(1, 3);
    want << 0, 0, 2;
    CHECK(bits_equal(relu(t.input(x)).value(), want));

    Mat s(2, 2);
    s << 1, 2, 3, 4;
    Mat colsum(1, 2);
    colsum << 4, 6;
    CHECK(bits_equal(sum_axis(t.input(s), 0).value(), colsum));
    Mat rowsum(2, 1);
    rowsum << 3, 7;
    CHECK(bits_equal(sum_axis(t.input(s), 1).value(), rowsum));
}

TEST_CASE("backward of sum(x.*x) is 2x") {
    Tape t;
    Mat x(1, 3);
    x << 1, 2, 3;
    Var vx = t.input(x);
    Var loss = sum_all(mul(vx, vx));
    t.backward(loss);
    Mat want(1, 3);
    want << 2, 4, 6;
    CHECK(bits_equal(vx.grad(), want));
}

TEST_CASE("constant loss leaves all grads zero") {
    std::mt19937_64 rng(1);
    Tape t;
    Var vx = t.input(random_mat(rng, 2, 2));
    Var loss = t.constant(5.0);
    t.backward(loss);
    CHECK(vx.grad().isZero(0.0));
}

TEST_CASE("input not reached by the loss keeps a zero grad") {
    std::mt19937_64 rng(7);
    Tape t;
    Var used = t.input(random_mat(rng, 2, 3));
    Var unused = t.input(random_mat(rng, 4, 4));
    t.backward(sum_all(mul(used, used)));
    CHECK(unused.grad().isZero(0.0));
    CHECK_FALSE(used.grad().isZero(0.0));
}

TEST_CASE("backward rejects a non-scalar loss") {
    Tape t;
    Var vx = t.input(Mat::Ones(2, 3));
    CHECK_THROWS_WITH_AS(t.backward(vx), doctest::Contains("[2x3]"), cda::Error);
}

TEST_CASE("shape mismatch errors name the op and both shapes") {
    Tape t;
    Var a = t.input(Mat::Ones(2, 3));
    Var b = t.input(Mat::Ones(2, 3));
    try {
        matmul(a, b);
        FAIL("expected a shape error");
    } catch (const cda::Error& e) {
        std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
    CHECK_THROWS_WITH_AS(add(a, t.input(Mat::Ones(3, 2))), doctest::Contains("add"),
                         cda::Error);
}

TEST_CASE("non-finite values are rejected at construction") {
    Tape t;
    Mat bad(1, 2);
    bad << 1.0, std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(t.input(bad), cda::Error);
    Mat inf(1, 1);
    inf << std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(t.constant(inf), cda::Error);
}

// Finite-difference property checks. Each op is wrapped in a scalar loss
// sum(op(x) .* w) with fixed random weights so upstream gradients are
// non-uniform.

namespace {

template <typename Build>
void check_op_grads(const char* name, Build&& build_from, int cases = kCases) {
    std::mt19937_64 rng(std::hash<std::string>{}(name));
    for (int k = 0; k < cases; ++k) {
        auto [x0, builder] = build_from(rng);
        double err = cda::grad_check(builder, x0, kEps);
        INFO(name << " case " << k);
        CHECK(err < kTol);
    }
}

using Builder = std::function<Var(Tape&, Var)>;

}  // namespace

TEST_CASE("gradients match central differences on random inputs") {
    SUBCASE("matmul wrt left operand") {
        check_op_grads("matmul_l", [](std::mt19937_64& rng) {
            Eigen::Index r = random_dim(rng), k = random_dim(rng), c = random_dim(rng);
            Mat x0 = random_mat(rng, r, k);
            Mat b = random_mat(rng, k, c);
            Mat w = random_mat(rng, r, c);
            auto builder = [b, w](Tape& t, Var x) {
                return sum_all(mul(matmul(x, t.constant(b)), t.constant(w)));
            };
            return std::pair<Mat, Builder>(x0, builder);
        });
    }
    SUBCASE("matmul wrt right operand") {
        check_op_grads("matmul_r", [](std::mt19937_64& rng) {
            Eigen::Index r = random_dim(rng), k = random_dim(rng), c = random_dim(rng);
            Mat a = random_mat(rng, r, k);
            Mat x0 = random_mat(rng, k, c);
            Mat w = random_mat(rng, r, c);
            auto builder = [a, w](Tape& t, Var x) {
                return sum_all(mul(matmul(t.constant(a), x), t.constant(w)));
            };
            return std::pair<Mat, Builder>(x0, builder);
        });
    }
    SUBCASE("add and sub") {
        check_op_grads("addsub", [](std::mt19937_64& rng) {
            Eigen::Index r = random_dim(rng), c = random_dim(rng);
            Mat x0 = random_mat(rng, r, c);
            Mat b = random_mat(rng, r, c);
            Mat w = random_mat(rng, r, c);
            auto builder = [b, w](Tape& t, Var x) {
                Var vb = t.constant(b);
                return sum_all(mul(sub(add(x, vb), mul(vb, x)), t.constant(w)));
            };
            return std::pair<Mat, Builder>(x0, builder);
        });
    }
    SUBCASE("row and column broadcasts, wrt the broadcast operand") {
        check_op_grads("rowvec", [](std::mt19937_64& rng) {
            Eigen::Index r = random_dim(rng), c = random_dim(rng);
            Mat base = random_mat(rng, r, c);
            Mat x0 = random_mat(rng, 1, c);
            Mat w = random_mat(rng, r, c);
            auto builder = [base, w](Tape& t, Var x) {
                return sum_all(mul(add_rowvec(t.constant(base), x), t.constant(w)));
            };
            return std::pair<Mat, Builder>(x0, builder);
        });
        check_op_grads("colvec", [](std::mt19937_64& rng) {
            Eigen::Index r = random_dim(rng), c = random_dim(rng);
            Mat base = random_mat(rng, r, c);
            Mat x0 = random_mat(rng, r, 1);
            Mat w = random_mat(rng, r, c);
            auto builder = [base, w](Tape& t, Var x) {
                return sum_all(mul(add_colvec(t.constant(base), x), t.constant(w)));
            };
            return std::pair<Mat, Builder>(x0, builder);
        });
    }
    SUBCASE("elementwise division, both operands") {
        check_op_grads("div", [](std::mt19937_64& rng) {
            Eigen::Index r = random_dim(rng), c = random_dim(rng);
            Mat b = random_mat_away_from(rng, r, c, 0.0, 0.5);
            Mat w = random_mat(rng, r, c);
            auto builder = [b, w](Tape& t, Var x) {
                Var vb = t.constant(b);
                return sum_all(mul(add(div(x, vb), div(vb, x)), t.constant(w)));
            };
            // x appears as a denominator too, so keep it away from zero
            Mat x0 = random_mat_away_from(rng, r, c, 0.0, 0.5);
            return std::pair<Mat, Builder>(x0, builder);
        });
    }
    SUBCASE("relu away from the kink") {
        check_op_grads("relu", [](std::mt19937_64& rng) {
            Eigen::Index r = random_dim(rng), c = random_dim(rng);
            Mat x0 = random_mat_away_from(rng, r, c, 0.0, 0.05);
            Mat w = random_mat(rng, r, c);
            auto builder = [w](Tape& t, Var x) {
                return sum_all(mul(relu(x), t.constant(w)));
            };
            return std::pair<Mat, Builder>(x0, builder);
        });
    }
    SUBCASE("exp, log, sigmoid") {
        check_op_grads("exp", [](std::mt19937_64& rng) {
            Eigen::Index r = random_dim(rng), c = random_dim(rng);
            Mat x0 = random_mat(rng, r, c);
            Mat w = random_mat(rng, r, c);
            auto builder = [w](Tape& t, Var x) {
                return sum_all(mul(cda::exp(x), t.constant(w)));
            };
            return std::pair<Mat, Builder>(x0, builder);
        });
        check_op_grads("log", [](std::mt19937_64& rng) {
            Eigen::Index r = random_dim(rng), c = random_dim(rng);
            Mat x0 = random_mat(rng, r, c, 0.1, 3.0);
            Mat w = random_mat(rng, r, c);
            auto builder = [w](Tape& t, Var x) {
                return sum_all(mul(cda::log(x), t.constant(w)));
            };
            return std::pair<Mat, Builder>(x0, builder);
        });
        check_op_grads("sigmoid", [](std::mt19937_64& rng) {
            Eigen::Index r = random_dim(rng), c = random_dim(rng);
            Mat x0 = random_mat(rng, r, c, -4.0, 4.0);
            Mat w = random_mat(rng, r, c);
            auto builder = [w](Tape& t, Var x) {
                return sum_all(mul(cda::sigmoid(x), t.constant(w)));
            };
            return std::pair<Mat, Builder>(x0, builder);
        });
    }
    SUBCASE("reductions") {
        check_op_grads("sums_means", [](std::mt19937_64& rng) {
            Eigen::Index r = random_dim(rng), c = random_dim(rng);
            Mat x0 = random_mat(rng, r, c);
            Mat wr = random_mat(rng, 1, c);
            Mat wc = random_mat(rng, r, 1);
            auto builder = [wr, wc](Tape& t, Var x) {
                Var a = sum_all(mul(sum_axis(x, 0), t.constant(wr)));
                Var b = sum_all(mul(mean_axis(x, 0), t.constant(wr)));
                Var c2 = sum_all(mul(sum_axis(x, 1), t.constant(wc)));
                Var d = sum_all(mul(mean_axis(x, 1), t.constant(wc)));
                return add(add(a, b), add(add(c2, d), mean_all(x)));
            };
            return std::pair<Mat, Builder>(x0, builder);
        });
    }
    SUBCASE("max along each axis, ties excluded") {
        check_op_grads("max", [](std::mt19937_64& rng) {
            Eigen::Index r = 2 + static_cast<Eigen::Index>(rng() % 3);
            Eigen::Index c = 2 + static_cast<Eigen::Index>(rng() % 3);
            // entries spaced well apart so eps-perturbation cannot flip the argmax
            std::vector<double> vals(static_cast<size_t>(r * c));
            for (size_t i = 0; i < vals.size(); ++i)
                vals[i] = static_cast<double>(i) * 0.11;
            std::shuffle(vals.begin(), vals.end(), rng);
            Mat x0(r, c);
            for (Eigen::Index j = 0; j < c; ++j)
                for (Eigen::Index i = 0; i < r; ++i)
                    x0(i, j) = vals[static_cast<size_t>(j * r + i)];
            Mat wr = random_mat(rng, 1, c);
            Mat wc = random_mat(rng, r, 1);
            auto builder = [wr, wc](Tape& t, Var x) {
                Var a = sum_all(mul(max_axis(x, 0), t.constant(wr)));
                Var b = sum_all(mul(max_axis(x, 1), t.constant(wc)));
                return add(a, b);
            };
            return std::pair<Mat, Builder>(x0, builder);
        });
    }
    SUBCASE("transpose and concat") {
        check_op_grads("transpose_concat", [](std::mt19937_64& rng) {
            Eigen::Index r = random_dim(rng), c = random_dim(rng);
            Mat x0 = random_mat(rng, r, c);
            Mat other = random_mat(rng, 2, c);
            Mat w = random_mat(rng, c, r);
            Mat w2 = random_mat(rng, r + 2, c);
            auto builder = [other, w, w2](Tape& t, Var x) {
                Var a = sum_all(mul(transpose(x), t.constant(w)));
                Var b = sum_all(mul(concat_rows(x, t.constant(other)), t.constant(w2)));
                return add(a, b);
            };
            return std::pair<Mat, Builder>(x0, builder);
        });
    }
    SUBCASE("dropout mask application") {
        check_op_grads("dropout", [](std::mt19937_64& rng) {
            Eigen::Index r = random_dim(rng), c = random_dim(rng);
            Mat x0 = random_mat(rng, r, c);
            Mat mask(r, c);
            for (Eigen::Index j = 0; j < c; ++j)
                for (Eigen::Index i = 0; i < r; ++i) mask(i, j) = (rng() % 2) ? 1.0 : 0.0;
            Mat w = random_mat(rng, r, c);
            double scale = 1.0 / 0.7;
            auto builder = [mask, w, scale](Tape& t, Var x) {
                return sum_all(mul(cda::dropout_apply(x, t.constant(mask), scale),
                                   t.constant(w)));
            };
            return std::pair<Mat, Builder>(x0, builder);
        });
    }
    SUBCASE("affine scalar op") {
        check_op_grads("affine", [](std::mt19937_64& rng) {
            Eigen::Index r = random_dim(rng), c = random_dim(rng);
            Mat x0 = random_mat(rng, r, c);
            Mat w = random_mat(rng, r, c);
            std::uniform_real_distribution<double> dist(-2.0, 2.0);
            double a = dist(rng), b = dist(rng);
            auto builder = [w, a, b](Tape& t, Var x) {
                return sum_all(mul(cda::affine(x, a, b), t.constant(w)));
            };
            return std::pair<Mat, Builder>(x0, builder);
        });
    }
    SUBCASE("row-wise l2 normalization") {
        check_op_grads("l2norm", [](std::mt19937_64& rng) {
            Eigen::Index r = random_dim(rng);
            Eigen::Index c = 2 + static_cast<Eigen::Index>(rng() % 4);
            Mat x0 = random_mat(rng, r, c);
            for (Eigen::Index i = 0; i < r; ++i)
                if (x0.row(i).norm() < 0.3) x0(i, 0) += 1.0;
            Mat w = random_mat(rng, r, c);
            auto builder = [w](Tape& t, Var x) {
                return sum_all(mul(cda::l2_normalize_rows(x), t.constant(w)));
            };
            return std::pair<Mat, Builder>(x0, builder);
        });
    }
}

TEST_CASE("gradient reversal: forward is bit-identical") {
    std::mt19937_64 rng(11);
    for (double lambda : {0.0, 0.5, 0.7, 1.0}) {
        Tape t;
        Mat x0 = random_mat(rng, 3, 4);
        Var x = t.input(x0);
        Var y = cda::gradient_reversal(x, lambda);
        CHECK(bits_equal(y.value(), x0));
    }
}

TEST_CASE("gradient reversal: backward scales by minus lambda, exactly") {
    std::mt19937_64 rng(12);
    Mat x0 = random_mat(rng, 2, 3);
    for (double lambda : {0.0, 0.5, 1.0}) {
        Tape t;
        Var x = t.input(x0);
        // loss = sum(grl(x)) so the upstream gradient is all ones
        t.backward(sum_all(cda::gradient_reversal(x, lambda)));
        Mat want = Mat::Constant(2, 3, -lambda);
        CHECK((x.grad().array() == want.array()).all());
    }
}

TEST_CASE("gradient reversal: lambda and 2*lambda give grads in exact ratio 1:2") {
    std::mt19937_64 rng(13);
    Mat x0 = random_mat(rng, 3, 3);
    Mat w = random_mat(rng, 3, 3);
    auto grad_at = [&](double lambda) {
        Tape t;
        Var x = t.input(x0);
        Var loss = sum_all(mul(cda::gradient_reversal(x, lambda), t.constant(w)));
        t.backward(loss);
        return Mat(x.grad());
    };
    Mat g1 = grad_at(0.35);
    Mat g2 = grad_at(0.70);
    Mat doubled = 2.0 * g1;
    CHECK(bits_equal(g2, doubled));
}

TEST_CASE("gradient reversal rejects negative lambda") {
    Tape t;
    Var x = t.input(Mat::Ones(1, 2));
    CHECK_THROWS_WITH_AS(cda::gradient_reversal(x, -0.1), doctest::Contains("lambda"),
                         cda::Error);
}

TEST_CASE("max with tied entries routes the subgradient to the lowest index") {
    Tape t;
    Mat x0(1, 3);
    x0 << 3.0, 3.0, 1.0;
    Var x = t.input(x0);
    t.backward(sum_all(max_axis(x, 1)));
    Mat want(1, 3);
    want << 1, 0, 0;
    CHECK(bits_equal(x.grad(), want));
}

TEST_CASE("sigmoid is stable at extreme inputs") {
    Tape t;
    Mat x0(1, 2);
    x0 << 1000.0, -1000.0;
    Var y = cda::sigmoid(t.input(x0));
    CHECK(y.value()(0, 0) == 1.0);
    CHECK(y.value()(0, 1) == 0.0);
    CHECK(y.value().allFinite());
}

TEST_CASE("l2 normalization yields unit rows and rejects near-zero rows") {
    std::mt19937_64 rng(21);
    Tape t;
    Mat x0 = random_mat(rng, 4, 3);
    Var y = cda::l2_normalize_rows(t.input(x0));
    for (Eigen::Index i = 0; i < 4; ++i)
        CHECK(y.value().row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));

    Mat z = Mat::Zero(3, 2);
    z(0, 0) = 1.0;
    z(2, 1) = 1.0;
    CHECK_THROWS_WITH_AS(cda::l2_normalize_rows(t.input(z)), doctest::Contains("row 1"),
                         cda::Error);
}

TEST_CASE("repeated forward+backward is byte-deterministic") {
    std::mt19937_64 rng(31);
    Mat x0 = random_mat(rng, 4, 3);
    Mat w1 = random_mat(rng, 3, 5);
    Mat w2 = random_mat(rng, 5, 1);
    auto run = [&]() {
        Tape t;
        Var x = t.input(x0);
        Var h = relu(matmul(x, t.constant(w1)));
        Var out = matmul(h, t.constant(w2));
        Var loss = mean_all(mul(out, out));
        t.backward(loss);
        return std::pair<Mat, Mat>(Mat(loss.value()), Mat(x.grad()));
    };
    auto [l1, g1] = run();
    auto [l2, g2] = run();
    CHECK(bits_equal(l1, l2));
    CHECK(bits_equal(g1, g2));
}

TEST_CASE("two-layer network gradients match finite differences") {
    std::mt19937_64 rng(41);
    Mat w1 = random_mat(rng, 4, 6);
    Mat b1 = random_mat(rng, 1, 6);
    Mat w2 = random_mat(rng, 6, 2);
    Mat x = random_mat(rng, 3, 4);

    // check the gradient wrt each parameter, holding the rest fixed
    auto check_param = [&](const Mat& p0, auto&& rebuild) {
        double err = cda::grad_check(rebuild, p0, kEps);
        CHECK(err < kTol);
    };
    check_param(w1, [&](Tape& t, Var p) {
        Var h = relu(add_rowvec(matmul(t.constant(x), p), t.constant(b1)));
        Var out = matmul(h, t.constant(w2));
        return mean_all(mul(out, out));
    });
    check_param(b1, [&](Tape& t, Var p) {
        Var h = relu(add_rowvec(matmul(t.constant(x), t.constant(w1)), p));
        Var out = matmul(h, t.constant(w2));
        return mean_all(mul(out, out));
    });
    check_param(w2, [&](Tape& t, Var p) {
        Var h = relu(add_rowvec(matmul(t.constant(x), t.constant(w1)), t.constant(b1)));
        Var out = matmul(h, p);
        return mean_all(mul(out, out));
    });
}

TEST_CASE("grad_check on a linear function is exact to 1e-8") {
    std::mt19937_64 rng(51);
    Mat w = random_mat(rng, 3, 3);
    Mat x0 = random_mat(rng, 3, 3);
    double err = cda::grad_check(
        [&](Tape& t, Var x) { return sum_all(mul(x, t.constant(w))); }, x0, 1e-5);
    CHECK(err < 1e-8);
}
