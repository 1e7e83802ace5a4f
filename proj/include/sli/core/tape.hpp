#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sli/core/matrix.hpp"

namespace sli {

struct Node {
    Mat val;
    Mat grad;
    std::string name;  // set for parameters, empty for intermediates

    explicit Node(Mat v) : val(std::move(v)), grad(val.rows, val.cols) {}
};

using NodePtr = std::shared_ptr<Node>;

NodePtr make_node(Mat v);
NodePtr make_param(std::string name, Mat v);

// Reverse-mode tape over Mat-valued nodes. One tape per forward pass;
// parameter nodes outlive tapes and accumulate gradients until the
// optimizer clears them.
class Tape {
  public:
    NodePtr matmul(const NodePtr& a, const NodePtr& b);
    NodePtr matmul_nt(const NodePtr& a, const NodePtr& b);  // a * b^T
    NodePtr add(const NodePtr& a, const NodePtr& b);
    NodePtr add_rowvec(const NodePtr& a, const NodePtr& bias);  // bias is 1 x cols
    NodePtr scale(const NodePtr& a, double s);
    NodePtr gelu(const NodePtr& a);
    NodePtr mse(const NodePtr& pred, const Mat& target);  // mean over all elements, 1x1
    NodePtr add_scaled(const NodePtr& a, const NodePtr& b, double sb);  // a + sb*b, both 1x1 ok
    NodePtr layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias);
    NodePtr attention(const NodePtr& q, const NodePtr& k, const NodePtr& v, int n_heads,
                      bool causal);
    NodePtr embed(const NodePtr& table, const std::vector<int>& ids);
    NodePtr concat_rows(const NodePtr& a, const NodePtr& b);
    NodePtr slice_rows(const NodePtr& a, int start, int len);

    struct CeResult {
        NodePtr loss;                 // 1x1, sum of per-position nll
        std::vector<double> nll;      // per-position negative log likelihood
    };
    // logits: T x V; targets: length T. Softmax cross entropy, summed.
    CeResult cross_entropy_sum(const NodePtr& logits, const std::vector<int>& targets);

    void backward(const NodePtr& root);

  private:
    std::vector<std::function<void()>> ops_;
};

// Mutable parameter set with Adam state, shared by victim and attacker training.
class AdamOptimizer {
  public:
    AdamOptimizer(std::vector<NodePtr> params, double lr, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8);

    void step();
    void zero_grad();
    void set_lr(double lr) { lr_ = lr; }
    const std::vector<NodePtr>& params() const { return params_; }

  private:
    std::vector<NodePtr> params_;
    std::vector<Mat> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

}  // namespace sli
