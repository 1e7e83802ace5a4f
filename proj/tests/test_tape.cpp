// Gradient checks: every tape op is compared against central finite
// differences computed by re-running the forward pass, and the optimizer is
// checked against a hand-computed Adam update.

#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "sli/core/tape.hpp"

using namespace sli;

namespace {

Mat random_mat(int rows, int cols, std::mt19937_64& rng, double s = 1.0) {
    std::normal_distribution<double> dist(0.0, s);
    Mat m(rows, cols);
    for (auto& v : m.data) v = dist(rng);
    return m;
}

// Scalar loss from a forward builder; the builder gets fresh params each call
// so finite differences can perturb the underlying values.
using Forward = std::function<NodePtr(Tape&, const std::vector<NodePtr>&)>;

// Compares tape gradients with central differences on every parameter entry.
void grad_check(const std::vector<Mat>& param_vals, const Forward& fwd, double tol = 1e-6,
                double eps = 1e-5) {
    std::vector<NodePtr> params;
    for (size_t i = 0; i < param_vals.size(); ++i)
        params.push_back(make_param("p" + std::to_string(i), param_vals[i]));

    Tape t;
    auto loss = fwd(t, params);
    REQUIRE(loss->val.rows == 1);
    REQUIRE(loss->val.cols == 1);
    t.backward(loss);

    auto eval_at = [&](const std::vector<Mat>& vals) {
        std::vector<NodePtr> ps;
        for (size_t i = 0; i < vals.size(); ++i)
            ps.push_back(make_param("p" + std::to_string(i), vals[i]));
        Tape tt;
        return fwd(tt, ps)->val.data[0];
    };

    for (size_t pi = 0; pi < param_vals.size(); ++pi) {
        for (size_t k = 0; k < param_vals[pi].data.size(); ++k) {
            std::vector<Mat> lo = param_vals, hi = param_vals;
            lo[pi].data[k] -= eps;
            hi[pi].data[k] += eps;
            const double num = (eval_at(hi) - eval_at(lo)) / (2 * eps);
            const double ana = params[pi]->grad.data[k];
            const double scale = std::max({1.0, std::fabs(num), std::fabs(ana)});
            INFO("param ", pi, " entry ", k, " numeric ", num, " analytic ", ana);
            CHECK(std::fabs(num - ana) / scale < tol);
        }
    }
}

}  // namespace

TEST_CASE("matmul gradient") {
    std::mt19937_64 rng(1);
    grad_check({random_mat(3, 4, rng), random_mat(4, 2, rng)},
               [](Tape& t, const std::vector<NodePtr>& p) {
                   return t.mse(t.matmul(p[0], p[1]), Mat(3, 2));
               });
}

TEST_CASE("matmul_nt gradient") {
    std::mt19937_64 rng(2);
    grad_check({random_mat(3, 4, rng), random_mat(5, 4, rng)},
               [](Tape& t, const std::vector<NodePtr>& p) {
                   return t.mse(t.matmul_nt(p[0], p[1]), Mat(3, 5));
               });
}

TEST_CASE("add, add_rowvec, scale, add_scaled gradients") {
    std::mt19937_64 rng(3);
    grad_check({random_mat(3, 4, rng), random_mat(3, 4, rng), random_mat(1, 4, rng)},
               [](Tape& t, const std::vector<NodePtr>& p) {
                   auto x = t.add_rowvec(t.add(p[0], p[1]), p[2]);
                   auto a = t.mse(t.scale(x, 1.7), Mat(3, 4));
                   auto b = t.mse(x, Mat(3, 4));
                   return t.add_scaled(a, b, 0.31);
               });
}

TEST_CASE("gelu gradient") {
    std::mt19937_64 rng(4);
    grad_check({random_mat(4, 5, rng)}, [](Tape& t, const std::vector<NodePtr>& p) {
        return t.mse(t.gelu(p[0]), Mat(4, 5));
    });
}

TEST_CASE("mse gradient against a fixed target") {
    std::mt19937_64 rng(5);
    Mat target = random_mat(3, 3, rng);
    grad_check({random_mat(3, 3, rng)}, [target](Tape& t, const std::vector<NodePtr>& p) {
        return t.mse(p[0], target);
    });
}

TEST_CASE("layer_norm gradient") {
    std::mt19937_64 rng(6);
    grad_check({random_mat(3, 6, rng), random_mat(1, 6, rng, 0.3), random_mat(1, 6, rng, 0.3)},
               [](Tape& t, const std::vector<NodePtr>& p) {
                   return t.mse(t.layer_norm(p[0], p[1], p[2]), Mat(3, 6));
               },
               1e-5);
}

TEST_CASE("attention gradient, causal and bidirectional") {
    std::mt19937_64 rng(7);
    for (bool causal : {true, false}) {
        grad_check({random_mat(4, 6, rng, 0.5), random_mat(4, 6, rng, 0.5),
                    random_mat(4, 6, rng, 0.5)},
                   [causal](Tape& t, const std::vector<NodePtr>& p) {
                       return t.mse(t.attention(p[0], p[1], p[2], 2, causal), Mat(4, 6));
                   },
                   1e-5);
    }
}

TEST_CASE("embed, concat_rows and slice_rows gradients") {
    std::mt19937_64 rng(8);
    const std::vector<int> ids{2, 0, 3, 2};
    grad_check({random_mat(5, 4, rng), random_mat(2, 4, rng)},
               [&](Tape& t, const std::vector<NodePtr>& p) {
                   auto e = t.embed(p[0], ids);
                   auto c = t.concat_rows(p[1], e);
                   return t.mse(t.slice_rows(c, 1, 4), Mat(4, 4));
               });
}

TEST_CASE("cross_entropy_sum matches a manual log-softmax oracle") {
    std::mt19937_64 rng(9);
    const Mat logits = random_mat(4, 6, rng);
    const std::vector<int> tgt{1, 5, 0, 3};

    Tape t;
    auto node = make_node(logits);
    auto ce = t.cross_entropy_sum(node, tgt);

    double expect = 0.0;
    for (int r = 0; r < 4; ++r) {
        double mx = logits.at(r, 0);
        for (int c = 1; c < 6; ++c) mx = std::max(mx, logits.at(r, c));
        double sum = 0.0;
        for (int c = 0; c < 6; ++c) sum += std::exp(logits.at(r, c) - mx);
        const double nll = -(logits.at(r, tgt[r]) - mx - std::log(sum));
        CHECK(ce.nll[r] == doctest::Approx(nll).epsilon(1e-12));
        expect += nll;
    }
    CHECK(ce.loss->val.data[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("cross_entropy_sum gradient") {
    std::mt19937_64 rng(10);
    const std::vector<int> tgt{1, 3, 0};
    grad_check({random_mat(3, 5, rng)}, [&](Tape& t, const std::vector<NodePtr>& p) {
        return t.cross_entropy_sum(p[0], tgt).loss;
    });
}

TEST_CASE("parameter gradients accumulate across tapes until cleared") {
    auto p = make_param("w", Mat(1, 1));
    p->val.data[0] = 2.0;
    for (int i = 0; i < 2; ++i) {
        Tape t;
        auto loss = t.mse(p, Mat(1, 1));  // d/dw (w^2) = 2w = 4
        t.backward(loss);
    }
    CHECK(p->grad.data[0] == doctest::Approx(8.0));
}

TEST_CASE("Adam first step matches the closed form") {
    // After one step with gradient g: m_hat = g, v_hat = g^2, so the update
    // is -lr * g / (|g| + eps) regardless of magnitude.
    auto p = make_param("w", Mat(1, 2));
    p->val.data = {1.0, -3.0};
    AdamOptimizer opt({p}, 0.1);
    p->grad.data = {0.5, -2.0};
    opt.step();
    CHECK(p->val.data[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-9));
    CHECK(p->val.data[1] == doctest::Approx(-3.0 + 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-9));
}
