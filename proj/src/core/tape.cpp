#include "sli/core/tape.hpp"

#include <cmath>
#include <stdexcept>

#include "sli/core/kernels.hpp"

namespace sli {

NodePtr make_node(Mat v) { return std::make_shared<Node>(std::move(v)); }

NodePtr make_param(std::string name, Mat v) {
    auto n = std::make_shared<Node>(std::move(v));
    n->name = std::move(name);
    return n;
}

NodePtr Tape::matmul(const NodePtr& a, const NodePtr& b) {
    Mat out;
    kernels::matmul(out, a->val, b->val);
    auto r = make_node(std::move(out));
    ops_.push_back([a, b, r] {
        kernels::matmul_nt_acc(a->grad, r->grad, b->val);  // dA += dC * B^T
        kernels::matmul_tn_acc(b->grad, a->val, r->grad);  // dB += A^T * dC
    });
    return r;
}

NodePtr Tape::matmul_nt(const NodePtr& a, const NodePtr& b) {
    Mat out;
    kernels::matmul_nt(out, a->val, b->val);
    auto r = make_node(std::move(out));
    ops_.push_back([a, b, r] {
        kernels::matmul_acc(a->grad, r->grad, b->val);     // dA += dC * B
        kernels::matmul_tn_acc(b->grad, r->grad, a->val);  // dB += dC^T * A
    });
    return r;
}

NodePtr Tape::add(const NodePtr& a, const NodePtr& b) {
    assert(a->val.same_shape(b->val));
    Mat out = a->val;
    for (size_t i = 0; i < out.size(); ++i) out.data[i] += b->val.data[i];
    auto r = make_node(std::move(out));
    ops_.push_back([a, b, r] {
        for (size_t i = 0; i < r->grad.size(); ++i) {
            a->grad.data[i] += r->grad.data[i];
            b->grad.data[i] += r->grad.data[i];
        }
    });
    return r;
}

NodePtr Tape::add_rowvec(const NodePtr& a, const NodePtr& bias) {
    assert(bias->val.rows == 1 && bias->val.cols == a->val.cols);
    Mat out = a->val;
    for (int i = 0; i < out.rows; ++i)
        for (int j = 0; j < out.cols; ++j) out.at(i, j) += bias->val.at(0, j);
    auto r = make_node(std::move(out));
    ops_.push_back([a, bias, r] {
        for (size_t i = 0; i < r->grad.size(); ++i) a->grad.data[i] += r->grad.data[i];
        for (int i = 0; i < r->grad.rows; ++i)
            for (int j = 0; j < r->grad.cols; ++j) bias->grad.at(0, j) += r->grad.at(i, j);
    });
    return r;
}

NodePtr Tape::scale(const NodePtr& a, double s) {
    Mat out = a->val;
    for (auto& x : out.data) x *= s;
    auto r = make_node(std::move(out));
    ops_.push_back([a, r, s] {
        for (size_t i = 0; i < r->grad.size(); ++i) a->grad.data[i] += s * r->grad.data[i];
    });
    return r;
}

NodePtr Tape::gelu(const NodePtr& a) {
    Mat out = a->val;
    for (auto& x : out.data) x = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
    auto r = make_node(std::move(out));
    ops_.push_back([a, r] {
        constexpr double inv_sqrt2 = 0.7071067811865476;
        constexpr double inv_sqrt2pi = 0.3989422804014327;
        for (size_t i = 0; i < r->grad.size(); ++i) {
            const double x = a->val.data[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            a->grad.data[i] += r->grad.data[i] * (cdf + x * pdf);
        }
    });
    return r;
}

NodePtr Tape::mse(const NodePtr& pred, const Mat& target) {
    assert(pred->val.same_shape(target));
    const double n = static_cast<double>(pred->val.size());
    double s = 0.0;
    for (size_t i = 0; i < pred->val.size(); ++i) {
        const double d = pred->val.data[i] - target.data[i];
        s += d * d;
    }
    Mat out(1, 1);
    out.data[0] = s / n;
    auto r = make_node(std::move(out));
    Mat tgt = target;
    ops_.push_back([pred, r, tgt = std::move(tgt), n] {
        const double g = r->grad.data[0] * 2.0 / n;
        for (size_t i = 0; i < pred->val.size(); ++i)
            pred->grad.data[i] += g * (pred->val.data[i] - tgt.data[i]);
    });
    return r;
}

NodePtr Tape::add_scaled(const NodePtr& a, const NodePtr& b, double sb) {
    assert(a->val.same_shape(b->val));
    Mat out = a->val;
    for (size_t i = 0; i < out.size(); ++i) out.data[i] += sb * b->val.data[i];
    auto r = make_node(std::move(out));
    ops_.push_back([a, b, r, sb] {
        for (size_t i = 0; i < r->grad.size(); ++i) {
            a->grad.data[i] += r->grad.data[i];
            b->grad.data[i] += sb * r->grad.data[i];
        }
    });
    return r;
}

NodePtr Tape::layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias) {
    constexpr double eps = 1e-5;
    const int T = x->val.rows, d = x->val.cols;
    assert(gain->val.cols == d && bias->val.cols == d);
    Mat out(T, d);
    auto mean = std::make_shared<std::vector<double>>(T);
    auto rstd = std::make_shared<std::vector<double>>(T);
    auto xhat = std::make_shared<Mat>(T, d);
    for (int i = 0; i < T; ++i) {
        const double* row = x->val.row(i);
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += row[j];
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= d;
        const double rs = 1.0 / std::sqrt(var + eps);
        (*mean)[i] = mu;
        (*rstd)[i] = rs;
        for (int j = 0; j < d; ++j) {
            const double h = (row[j] - mu) * rs;
            xhat->at(i, j) = h;
            out.at(i, j) = h * gain->val.at(0, j) + bias->val.at(0, j);
        }
    }
    auto r = make_node(std::move(out));
    ops_.push_back([x, gain, bias, r, rstd, xhat] {
        const int T = x->val.rows, d = x->val.cols;
        for (int i = 0; i < T; ++i) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int j = 0; j < d; ++j) {
                const double dy = r->grad.at(i, j) * gain->val.at(0, j);
                sum_dy += dy;
                sum_dy_xhat += dy * xhat->at(i, j);
                gain->grad.at(0, j) += r->grad.at(i, j) * xhat->at(i, j);
                bias->grad.at(0, j) += r->grad.at(i, j);
            }
            const double rs = (*rstd)[i];
            for (int j = 0; j < d; ++j) {
                const double dy = r->grad.at(i, j) * gain->val.at(0, j);
                x->grad.at(i, j) +=
                    rs * (dy - sum_dy / d - xhat->at(i, j) * sum_dy_xhat / d);
            }
        }
    });
    return r;
}

NodePtr Tape::attention(const NodePtr& q, const NodePtr& k, const NodePtr& v, int n_heads,
                        bool causal) {
    const int T = q->val.rows, d = q->val.cols;
    if (d % n_heads != 0) throw std::invalid_argument("attention: d not divisible by heads");
    const int dh = d / n_heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    Mat out(T, d);
    // Per-head attention probabilities, saved for backward.
    auto probs = std::make_shared<std::vector<Mat>>();
    probs->reserve(n_heads);
    for (int h = 0; h < n_heads; ++h) {
        Mat p(T, T);
#pragma omp parallel for schedule(static)
        for (int i = 0; i < T; ++i) {
            const int jmax = causal ? i : T - 1;
            double mx = -1e300;
            for (int j = 0; j <= jmax; ++j) {
                double s = 0.0;
                const double* qi = q->val.row(i) + h * dh;
                const double* kj = k->val.row(j) + h * dh;
                for (int c = 0; c < dh; ++c) s += qi[c] * kj[c];
                s *= inv_sqrt_dh;
                p.at(i, j) = s;
                if (s > mx) mx = s;
            }
            double sum = 0.0;
            for (int j = 0; j <= jmax; ++j) {
                p.at(i, j) = std::exp(p.at(i, j) - mx);
                sum += p.at(i, j);
            }
            const double inv = 1.0 / sum;
            for (int j = 0; j <= jmax; ++j) p.at(i, j) *= inv;
            for (int j = jmax + 1; j < T; ++j) p.at(i, j) = 0.0;
            double* oi = out.row(i) + h * dh;
            for (int j = 0; j <= jmax; ++j) {
                const double pij = p.at(i, j);
                const double* vj = v->val.row(j) + h * dh;
                for (int c = 0; c < dh; ++c) oi[c] += pij * vj[c];
            }
        }
        probs->push_back(std::move(p));
    }
    auto r = make_node(std::move(out));
    ops_.push_back([q, k, v, r, probs, n_heads, dh, inv_sqrt_dh, causal] {
        const int T = q->val.rows;
        for (int h = 0; h < n_heads; ++h) {
            const Mat& p = (*probs)[h];
            for (int i = 0; i < T; ++i) {
                const int jmax = causal ? i : T - 1;
                const double* doi = r->grad.row(i) + h * dh;
                // dP and dS for row i
                std::vector<double> dp(jmax + 1, 0.0);
                for (int j = 0; j <= jmax; ++j) {
                    const double* vj = v->val.row(j) + h * dh;
                    double s = 0.0;
                    for (int c = 0; c < dh; ++c) s += doi[c] * vj[c];
                    dp[j] = s;
                    // dV += P^T * dO
                    double* dvj = v->grad.row(j) + h * dh;
                    const double pij = p.at(i, j);
                    for (int c = 0; c < dh; ++c) dvj[c] += pij * doi[c];
                }
                double dot = 0.0;
                for (int j = 0; j <= jmax; ++j) dot += dp[j] * p.at(i, j);
                for (int j = 0; j <= jmax; ++j) {
                    const double ds = p.at(i, j) * (dp[j] - dot) * inv_sqrt_dh;
                    const double* kj = k->val.row(j) + h * dh;
                    const double* qi = q->val.row(i) + h * dh;
                    double* dqi = q->grad.row(i) + h * dh;
                    double* dkj = k->grad.row(j) + h * dh;
                    for (int c = 0; c < dh; ++c) {
                        dqi[c] += ds * kj[c];
                        dkj[c] += ds * qi[c];
                    }
                }
            }
        }
    });
    return r;
}

NodePtr Tape::embed(const NodePtr& table, const std::vector<int>& ids) {
    const int d = table->val.cols;
    Mat out(static_cast<int>(ids.size()), d);
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table->val.rows)
            throw std::out_of_range("embed: id out of range");
        const double* src = table->val.row(ids[i]);
        std::copy(src, src + d, out.row(static_cast<int>(i)));
    }
    auto r = make_node(std::move(out));
    ops_.push_back([table, r, ids] {
        const int d = table->val.cols;
        for (size_t i = 0; i < ids.size(); ++i) {
            const double* g = r->grad.row(static_cast<int>(i));
            double* dst = table->grad.row(ids[i]);
            for (int j = 0; j < d; ++j) dst[j] += g[j];
        }
    });
    return r;
}

NodePtr Tape::concat_rows(const NodePtr& a, const NodePtr& b) {
    assert(a->val.cols == b->val.cols);
    Mat out(a->val.rows + b->val.rows, a->val.cols);
    std::copy(a->val.data.begin(), a->val.data.end(), out.data.begin());
    std::copy(b->val.data.begin(), b->val.data.end(), out.data.begin() + a->val.size());
    auto r = make_node(std::move(out));
    ops_.push_back([a, b, r] {
        for (size_t i = 0; i < a->grad.size(); ++i) a->grad.data[i] += r->grad.data[i];
        for (size_t i = 0; i < b->grad.size(); ++i)
            b->grad.data[i] += r->grad.data[a->grad.size() + i];
    });
    return r;
}

NodePtr Tape::slice_rows(const NodePtr& a, int start, int len) {
    assert(start >= 0 && start + len <= a->val.rows);
    Mat out(len, a->val.cols);
    std::copy(a->val.row(start), a->val.row(start) + static_cast<size_t>(len) * a->val.cols,
              out.data.begin());
    auto r = make_node(std::move(out));
    ops_.push_back([a, r, start, len] {
        const size_t off = static_cast<size_t>(start) * a->val.cols;
        for (size_t i = 0; i < r->grad.size(); ++i) a->grad.data[off + i] += r->grad.data[i];
    });
    return r;
}

Tape::CeResult Tape::cross_entropy_sum(const NodePtr& logits, const std::vector<int>& targets) {
    const int T = logits->val.rows;
    if (static_cast<int>(targets.size()) != T)
        throw std::invalid_argument("cross_entropy_sum: target length mismatch");
    auto soft = std::make_shared<Mat>(logits->val);
    kernels::softmax_rows(*soft);
    CeResult res;
    res.nll.resize(T);
    double total = 0.0;
    for (int i = 0; i < T; ++i) {
        const double p = soft->at(i, targets[i]);
        res.nll[i] = -std::log(std::max(p, 1e-300));
        total += res.nll[i];
    }
    Mat out(1, 1);
    out.data[0] = total;
    res.loss = make_node(std::move(out));
    auto r = res.loss;
    ops_.push_back([logits, r, soft, targets] {
        const double g = r->grad.data[0];
        const int T = logits->val.rows, V = logits->val.cols;
        for (int i = 0; i < T; ++i) {
            const double* s = soft->row(i);
            double* dl = logits->grad.row(i);
            for (int j = 0; j < V; ++j) dl[j] += g * s[j];
            dl[targets[i]] -= g;
        }
    });
    return res;
}

void Tape::backward(const NodePtr& root) {
    if (root->val.rows != 1 || root->val.cols != 1)
        throw std::invalid_argument("backward: root must be scalar");
    root->grad.data[0] = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

AdamOptimizer::AdamOptimizer(std::vector<NodePtr> params, double lr, double beta1, double beta2,
                             double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p->val.rows, p->val.cols);
        v_.emplace_back(p->val.rows, p->val.cols);
    }
}

void AdamOptimizer::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t k = 0; k < params_.size(); ++k) {
        auto& p = *params_[k];
        for (size_t i = 0; i < p.val.size(); ++i) {
            const double g = p.grad.data[i];
            m_[k].data[i] = beta1_ * m_[k].data[i] + (1.0 - beta1_) * g;
            v_[k].data[i] = beta2_ * v_[k].data[i] + (1.0 - beta2_) * g * g;
            const double mhat = m_[k].data[i] / bc1;
            const double vhat = v_[k].data[i] / bc2;
            p.val.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void AdamOptimizer::zero_grad() {
    for (auto& p : params_) p->grad.zero();
}

}  // namespace sli
