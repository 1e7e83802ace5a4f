#include "sli/attack/attacker.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>

namespace sli {

std::string purifier_variant_name(PurifierVariant v) {
    switch (v) {
        case PurifierVariant::none: return "none";
        case PurifierVariant::linear_projection: return "linear_projection";
        case PurifierVariant::linear_with_tester: return "linear_with_tester";
        case PurifierVariant::autoencoder: return "autoencoder";
    }
    return "?";
}

PurifierVariant purifier_variant_from_name(const std::string& s) {
    if (s == "none") return PurifierVariant::none;
    if (s == "linear_projection") return PurifierVariant::linear_projection;
    if (s == "linear_with_tester") return PurifierVariant::linear_with_tester;
    if (s == "autoencoder") return PurifierVariant::autoencoder;
    throw std::invalid_argument("unknown purifier variant: " + s);
}

nlohmann::json PurifierConfig::to_json() const {
    return {{"variant", purifier_variant_name(variant)},
            {"bottleneck_dim", bottleneck_dim},
            {"tester_weight", tester_weight}};
}

PurifierConfig PurifierConfig::from_json(const nlohmann::json& j) {
    PurifierConfig c;
    c.variant = purifier_variant_from_name(j.at("variant"));
    c.bottleneck_dim = j.value("bottleneck_dim", 0);
    c.tester_weight = j.value("tester_weight", 0.1);
    return c;
}

nlohmann::json TrainRecipe::to_json() const {
    return {{"step1", {{"epochs", step1.epochs}, {"lr", step1.lr}}},
            {"step2", {{"epochs", step2.epochs}, {"lr", step2.lr}}},
            {"step3", {{"epochs", step3.epochs}, {"lr", step3.lr}}},
            {"ppl_eval_every", ppl_eval_every},
            {"lm_loss_weight", lm_loss_weight}};
}

TrainRecipe TrainRecipe::from_json(const nlohmann::json& j) {
    TrainRecipe r;
    auto stage = [&](const char* k, StageConfig& s) {
        if (!j.contains(k)) return;
        s.epochs = j.at(k).value("epochs", s.epochs);
        s.lr = j.at(k).value("lr", s.lr);
    };
    stage("step1", r.step1);
    stage("step2", r.step2);
    stage("step3", r.step3);
    r.ppl_eval_every = j.value("ppl_eval_every", r.ppl_eval_every);
    r.lm_loss_weight = j.value("lm_loss_weight", r.lm_loss_weight);
    return r;
}

nlohmann::json AttackerConfig::to_json() const {
    return {{"n_blocks", n_blocks}, {"d_model", d_model},       {"n_heads", n_heads},
            {"d_ff", d_ff},         {"vocab_size", vocab_size}, {"max_seq_len", max_seq_len},
            {"max_prefix", max_prefix}, {"seed", seed}};
}

AttackerConfig AttackerConfig::from_json(const nlohmann::json& j) {
    AttackerConfig c;
    c.n_blocks = j.at("n_blocks");
    c.d_model = j.at("d_model");
    c.n_heads = j.at("n_heads");
    c.d_ff = j.at("d_ff");
    c.vocab_size = j.at("vocab_size");
    c.max_seq_len = j.at("max_seq_len");
    c.max_prefix = j.at("max_prefix");
    c.seed = j.at("seed");
    return c;
}

namespace {

Mat randn(std::mt19937_64& rng, int rows, int cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Mat m(rows, cols);
    for (auto& x : m.data) x = dist(rng);
    return m;
}

Mat ones_row(int cols) {
    Mat m(1, cols);
    std::fill(m.data.begin(), m.data.end(), 1.0);
    return m;
}

Mat trace_to_mat(const RepresentationTrace& tr, int max_rows) {
    const int T = std::min(tr.token_count, max_rows);
    Mat m(T, tr.d_model);
    for (int i = 0; i < T; ++i)
        for (int j = 0; j < tr.d_model; ++j) m.at(i, j) = static_cast<double>(tr.at(i, j));
    return m;
}

}  // namespace

Purifier::Purifier(PurifierConfig cfg, int d_in, int d_out, uint64_t seed)
    : cfg_(cfg), d_in_(d_in), d_out_(d_out) {
    std::mt19937_64 rng(seed ^ 0xa5a5a5a5ULL);
    const double s = 0.02;
    switch (cfg_.variant) {
        case PurifierVariant::none:
            if (d_in != d_out)
                throw std::invalid_argument("identity purifier requires matching dims");
            break;
        case PurifierVariant::linear_projection:
        case PurifierVariant::linear_with_tester:
            w1_ = make_param("purifier.w1", randn(rng, d_in, d_out, s));
            b1_ = make_param("purifier.b1", Mat(1, d_out));
            break;
        case PurifierVariant::autoencoder: {
            const int bot = cfg_.bottleneck_dim > 0 ? cfg_.bottleneck_dim : d_out;
            if (bot > d_in) throw std::invalid_argument("bottleneck_dim exceeds input dim");
            w1_ = make_param("purifier.w1", randn(rng, d_in, bot, s));
            b1_ = make_param("purifier.b1", Mat(1, bot));
            w2_ = make_param("purifier.w2", randn(rng, bot, d_out, s));
            b2_ = make_param("purifier.b2", Mat(1, d_out));
            break;
        }
    }
}

NodePtr Purifier::apply(Tape& t, const NodePtr& x) const {
    switch (cfg_.variant) {
        case PurifierVariant::none:
            return x;
        case PurifierVariant::linear_projection:
        case PurifierVariant::linear_with_tester:
            return t.add_rowvec(t.matmul(x, w1_), b1_);
        case PurifierVariant::autoencoder: {
            auto h = t.gelu(t.add_rowvec(t.matmul(x, w1_), b1_));
            return t.add_rowvec(t.matmul(h, w2_), b2_);
        }
    }
    throw std::logic_error("unreachable");
}

Mat Purifier::apply(const Mat& x) const {
    Tape t;
    return apply(t, make_node(x))->val;
}

std::vector<NodePtr> Purifier::parameters() const {
    std::vector<NodePtr> out;
    for (const auto& p : {w1_, b1_, w2_, b2_})
        if (p) out.push_back(p);
    return out;
}

void Purifier::set_tester(NodePtr w, NodePtr b) {
    tester_w_ = std::move(w);
    tester_b_ = std::move(b);
}

NodePtr Purifier::tester_logits(Tape& t, const NodePtr& purified) const {
    if (!tester_w_) throw std::logic_error("tester not set");
    return t.add_rowvec(t.matmul(purified, tester_w_), tester_b_);
}

std::vector<std::pair<std::string, Mat>> Purifier::named_tensors(const std::string& prefix) const {
    std::vector<std::pair<std::string, Mat>> out;
    const char* names[] = {"w1", "b1", "w2", "b2"};
    const NodePtr ps[] = {w1_, b1_, w2_, b2_};
    for (int i = 0; i < 4; ++i)
        if (ps[i]) out.emplace_back(prefix + names[i], ps[i]->val);
    if (tester_w_) {
        out.emplace_back(prefix + "tester_w", tester_w_->val);
        out.emplace_back(prefix + "tester_b", tester_b_->val);
    }
    return out;
}

void Purifier::load_tensors(const Checkpoint& ck, const std::string& prefix) {
    const char* names[] = {"w1", "b1", "w2", "b2"};
    NodePtr ps[] = {w1_, b1_, w2_, b2_};
    for (int i = 0; i < 4; ++i)
        if (ps[i]) ps[i]->val = ck.tensor(prefix + names[i]);
    for (const auto& [name, t] : ck.tensors) {
        if (name == prefix + "tester_w") {
            tester_w_ = make_param(name, t);
        } else if (name == prefix + "tester_b") {
            tester_b_ = make_param(name, t);
        }
    }
}

PurifierPretrainReport pretrain_purifier(Purifier& purifier,
                                         const std::vector<PurifierPair>& aux_pairs, int epochs,
                                         double lr, int vocab_size) {
    if (aux_pairs.empty()) throw std::invalid_argument("pretrain_purifier: no aux pairs");
    const size_t n_held = std::max<size_t>(1, aux_pairs.size() / 10);
    const size_t n_train = aux_pairs.size() - n_held;

    PurifierPretrainReport rep;
    {
        // Constant-predictor baseline: per-dim mean from the training part,
        // squared error on the held-out part.
        const int d = aux_pairs[0].embedding.cols;
        std::vector<double> mean(d, 0.0);
        long rows = 0;
        for (size_t i = 0; i < n_train; ++i) {
            const auto& e = aux_pairs[i].embedding;
            for (int r = 0; r < e.rows; ++r)
                for (int j = 0; j < d; ++j) mean[j] += e.at(r, j);
            rows += e.rows;
        }
        for (auto& m : mean) m /= std::max<long>(1, rows);
        {
            // Per-element variance of the training-part embeddings; used to
            // keep the tester term on the same scale as the MSE term.
            double tse = 0.0;
            long tvals = 0;
            for (size_t i = 0; i < n_train; ++i) {
                const auto& e = aux_pairs[i].embedding;
                for (int r = 0; r < e.rows; ++r)
                    for (int j = 0; j < d; ++j) {
                        const double dd = e.at(r, j) - mean[j];
                        tse += dd * dd;
                    }
                tvals += e.rows * d;
            }
            rep.train_variance = tse / std::max<long>(1, tvals);
        }
        double se = 0.0;
        long held_vals = 0;
        for (size_t i = n_train; i < aux_pairs.size(); ++i) {
            const auto& e = aux_pairs[i].embedding;
            for (int r = 0; r < e.rows; ++r)
                for (int j = 0; j < d; ++j) {
                    const double dd = e.at(r, j) - mean[j];
                    se += dd * dd;
                }
            held_vals += e.rows * d;
        }
        rep.baseline_variance = se / std::max<long>(1, held_vals);
    }

    if (purifier.config().variant == PurifierVariant::linear_with_tester &&
        !purifier.has_tester()) {
        // Train the tester probe on true embeddings -> token id, then freeze.
        std::mt19937_64 rng(0xbeefULL);
        std::normal_distribution<double> dist(0.0, 0.02);
        Mat w(purifier.d_out(), vocab_size), b(1, vocab_size);
        for (auto& x : w.data) x = dist(rng);
        auto wn = make_param("purifier.tester_w", w);
        auto bn = make_param("purifier.tester_b", b);
        AdamOptimizer opt({wn, bn}, 1e-2);
        for (int e = 0; e < 3; ++e) {
            for (size_t i = 0; i < n_train; ++i) {
                Tape t;
                auto logits = t.add_rowvec(t.matmul(make_node(aux_pairs[i].embedding), wn), bn);
                auto ce = t.cross_entropy_sum(logits, aux_pairs[i].tokens);
                opt.zero_grad();
                t.backward(ce.loss);
                opt.step();
            }
        }
        purifier.set_tester(wn, bn);
    }

    auto heldout_mse = [&] {
        double se = 0.0;
        long vals = 0;
        for (size_t i = n_train; i < aux_pairs.size(); ++i) {
            const Mat out = purifier.apply(aux_pairs[i].rep);
            const Mat& tgt = aux_pairs[i].embedding;
            for (size_t k = 0; k < out.size(); ++k) {
                const double d = out.data[k] - tgt.data[k];
                se += d * d;
            }
            vals += static_cast<long>(out.size());
        }
        return se / std::max<long>(1, vals);
    };

    if (purifier.config().variant == PurifierVariant::none) {
        rep.heldout_mse = heldout_mse();
        rep.flagged = rep.heldout_mse >= rep.baseline_variance;
        return rep;
    }

    AdamOptimizer opt(purifier.parameters(), lr);
    for (int e = 0; e < epochs; ++e) {
        for (size_t i = 0; i < n_train; ++i) {
            Tape t;
            auto purified = purifier.apply(t, make_node(aux_pairs[i].rep));
            auto loss = t.mse(purified, aux_pairs[i].embedding);
            if (purifier.config().variant == PurifierVariant::linear_with_tester) {
                auto tl = purifier.tester_logits(t, purified);
                auto ce = t.cross_entropy_sum(tl, aux_pairs[i].tokens);
                // Per-token CE scaled by the embedding variance so the tester
                // term stays comparable to the MSE term regardless of the
                // victim's embedding scale.
                const double w = purifier.config().tester_weight * rep.train_variance /
                                 std::max<size_t>(1, aux_pairs[i].tokens.size());
                loss = t.add_scaled(loss, ce.loss, w);
            }
            if (!std::isfinite(loss->val.data[0]))
                throw TrainingDivergence("purifier pretraining diverged");
            opt.zero_grad();
            t.backward(loss);
            opt.step();
        }
    }
    // Snap to f32 now: the purifier is frozen through step 2, so later
    // whole-model snaps must leave it untouched.
    for (const auto& p : purifier.parameters()) snap_f32(p->val);
    if (purifier.has_tester()) {
        snap_f32(purifier.tester_w_->val);
        snap_f32(purifier.tester_b_->val);
    }
    rep.heldout_mse = heldout_mse();
    rep.flagged = rep.heldout_mse >= rep.baseline_variance;
    return rep;
}

double perplexity(double mean_ce) { return std::exp(mean_ce); }

AttackerModel::AttackerModel(AttackerConfig cfg, PurifierConfig pcfg, int d_rep, int d_embed,
                             const Hash128& victim_model_id, AttackKnowledge knowledge)
    : cfg_(cfg),
      purifier_(pcfg, d_rep, d_embed, cfg.seed),
      knowledge_(knowledge),
      victim_id_(victim_model_id) {
    knowledge_.validate();
    if (cfg_.vocab_size <= 0) throw std::invalid_argument("attacker vocab_size must be positive");
    std::mt19937_64 rng(cfg_.seed);
    const double s = 0.02;
    mapper_w_ = make_param("mapper.w", randn(rng, d_embed, cfg_.d_model, s));
    mapper_b_ = make_param("mapper.b", Mat(1, cfg_.d_model));
    tok_emb_ = make_param("decoder.tok_emb", randn(rng, cfg_.vocab_size, cfg_.d_model, s));
    pos_emb_ = make_param("decoder.pos_emb",
                          randn(rng, cfg_.max_prefix + cfg_.max_seq_len, cfg_.d_model, s));
    for (int b = 0; b < cfg_.n_blocks; ++b) {
        const std::string p = "decoder.block" + std::to_string(b) + ".";
        BlockParams bp;
        bp.ln1_g = make_param(p + "ln1_g", ones_row(cfg_.d_model));
        bp.ln1_b = make_param(p + "ln1_b", Mat(1, cfg_.d_model));
        bp.wq = make_param(p + "wq", randn(rng, cfg_.d_model, cfg_.d_model, s));
        bp.wk = make_param(p + "wk", randn(rng, cfg_.d_model, cfg_.d_model, s));
        bp.wv = make_param(p + "wv", randn(rng, cfg_.d_model, cfg_.d_model, s));
        bp.wo = make_param(p + "wo", randn(rng, cfg_.d_model, cfg_.d_model, s));
        bp.ln2_g = make_param(p + "ln2_g", ones_row(cfg_.d_model));
        bp.ln2_b = make_param(p + "ln2_b", Mat(1, cfg_.d_model));
        bp.w_ff1 = make_param(p + "w_ff1", randn(rng, cfg_.d_model, cfg_.d_ff, s));
        bp.b_ff1 = make_param(p + "b_ff1", Mat(1, cfg_.d_ff));
        bp.w_ff2 = make_param(p + "w_ff2", randn(rng, cfg_.d_ff, cfg_.d_model, s));
        bp.b_ff2 = make_param(p + "b_ff2", Mat(1, cfg_.d_model));
        blocks_.push_back(bp);
    }
    lnf_g_ = make_param("decoder.lnf_g", ones_row(cfg_.d_model));
    lnf_b_ = make_param("decoder.lnf_b", Mat(1, cfg_.d_model));
}

std::vector<NodePtr> AttackerModel::decoder_parameters() const {
    std::vector<NodePtr> out{mapper_w_, mapper_b_, tok_emb_, pos_emb_};
    for (const auto& b : blocks_)
        for (const auto& p : b.all()) out.push_back(p);
    out.push_back(lnf_g_);
    out.push_back(lnf_b_);
    return out;
}

std::vector<NodePtr> AttackerModel::all_parameters() const {
    auto out = purifier_.parameters();
    auto dec = decoder_parameters();
    out.insert(out.end(), dec.begin(), dec.end());
    return out;
}

NodePtr AttackerModel::decode_logits(Tape& t, const Mat& purified_prefix,
                                     const NodePtr& purified_prefix_node,
                                     const std::vector<int>& input_tokens) const {
    NodePtr prefix = purified_prefix_node ? purified_prefix_node : make_node(purified_prefix);
    auto mapped = t.add_rowvec(t.matmul(prefix, mapper_w_), mapper_b_);
    NodePtr x;
    if (!input_tokens.empty()) {
        auto tok = t.embed(tok_emb_, input_tokens);
        x = t.concat_rows(mapped, tok);
    } else {
        x = mapped;
    }
    const int total = x->val.rows;
    if (total > pos_emb_->val.rows) throw std::invalid_argument("attacker sequence too long");
    x = t.add(x, t.slice_rows(pos_emb_, 0, total));
    for (const auto& bp : blocks_) {
        auto a = t.layer_norm(x, bp.ln1_g, bp.ln1_b);
        auto q = t.matmul(a, bp.wq);
        auto k = t.matmul(a, bp.wk);
        auto v = t.matmul(a, bp.wv);
        auto att = t.attention(q, k, v, cfg_.n_heads, true);
        auto h1 = t.add(x, t.matmul(att, bp.wo));
        auto b = t.layer_norm(h1, bp.ln2_g, bp.ln2_b);
        auto f = t.gelu(t.add_rowvec(t.matmul(b, bp.w_ff1), bp.b_ff1));
        x = t.add(h1, t.add_rowvec(t.matmul(f, bp.w_ff2), bp.b_ff2));
    }
    auto hn = t.layer_norm(x, lnf_g_, lnf_b_);
    return t.matmul_nt(hn, tok_emb_);
}

Mat AttackerModel::purified_prefix(const RepresentationTrace& trace) const {
    const Mat rep = trace_to_mat(trace, cfg_.max_prefix);
    return purifier_.apply(rep);
}

AttackerModel::LossResult AttackerModel::sequence_loss(Tape& t, const RepresentationTrace& trace,
                                                       const std::vector<int>& tokens,
                                                       bool through_purifier) const {
    if (static_cast<int>(tokens.size()) < 2)
        throw std::invalid_argument("sequence_loss: need at least BOS + one token");
    std::vector<int> inp(tokens.begin(), tokens.end() - 1);
    if (static_cast<int>(inp.size()) > cfg_.max_seq_len) inp.resize(cfg_.max_seq_len);
    std::vector<int> tgt(tokens.begin() + 1, tokens.begin() + 1 + inp.size());

    const Mat rep = trace_to_mat(trace, cfg_.max_prefix);
    NodePtr prefix_node;
    Mat prefix_mat;
    if (through_purifier)
        prefix_node = purifier_.apply(t, make_node(rep));
    else
        prefix_mat = purifier_.apply(rep);
    auto logits = decode_logits(t, prefix_mat, prefix_node, inp);
    const int P = logits->val.rows - static_cast<int>(inp.size());
    auto pred = t.slice_rows(logits, P, static_cast<int>(inp.size()));
    auto ce = t.cross_entropy_sum(pred, tgt);
    return {ce.loss, std::move(ce.nll)};
}

AttackerModel::LossResult AttackerModel::lm_loss(Tape& t, const std::vector<int>& tokens) const {
    if (static_cast<int>(tokens.size()) < 2)
        throw std::invalid_argument("lm_loss: need at least BOS + one token");
    std::vector<int> inp(tokens.begin(), tokens.end() - 1);
    if (static_cast<int>(inp.size()) > cfg_.max_seq_len) inp.resize(cfg_.max_seq_len);
    std::vector<int> tgt(tokens.begin() + 1, tokens.begin() + 1 + inp.size());
    auto logits = decode_logits(t, Mat(0, purifier_.d_out()), nullptr, inp);
    auto ce = t.cross_entropy_sum(logits, tgt);
    return {ce.loss, std::move(ce.nll)};
}

double AttackerModel::eval_mean_ce(const CaptureSet& captures, const Corpus& corpus,
                                   Split split) const {
    double total = 0.0;
    long n = 0;
    for (const auto& item : captures.items) {
        if (item.split != split) continue;
        const auto* rec = corpus.find(item.record_id);
        if (!rec) throw std::runtime_error("capture references unknown record " + item.record_id);
        const auto fr = deserialize_frame(item.frame_bytes);
        Tape t;
        auto res = sequence_loss(t, fr.trace, rec->tokens, false);
        total += res.loss->val.data[0];
        n += static_cast<long>(res.nll.size());
    }
    if (n == 0) throw std::runtime_error("eval_mean_ce: no captures in requested split");
    return total / n;
}

std::string AttackerModel::invert(const RepresentationFrame& frame, const Vocab& vocab,
                                  const DecodeConfig& decode) const {
    if (frame.model_id != victim_id_)
        throw std::invalid_argument("attacker/victim mismatch");
    const Mat prefix = purified_prefix(frame.trace);
    const int max_new = cfg_.max_seq_len - 1;

    auto step_logprobs = [&](const std::vector<int>& inp) {
        Tape t;
        auto logits = decode_logits(t, prefix, nullptr, inp);
        const int last = logits->val.rows - 1;
        std::vector<double> lp(logits->val.cols);
        const double* row = logits->val.row(last);
        double mx = row[0];
        for (int j = 1; j < logits->val.cols; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < logits->val.cols; ++j) sum += std::exp(row[j] - mx);
        const double lse = mx + std::log(sum);
        for (int j = 0; j < logits->val.cols; ++j) lp[j] = row[j] - lse;
        return lp;
    };

    std::vector<int> out_tokens;
    if (decode.mode == DecodeMode::beam) {
        struct Beam {
            std::vector<int> tokens;
            double logprob = 0.0;
            bool done = false;
        };
        std::vector<Beam> beams{{{Vocab::kBos}, 0.0, false}};
        for (int step = 0; step < max_new; ++step) {
            std::vector<Beam> next;
            for (const auto& b : beams) {
                if (b.done) {
                    next.push_back(b);
                    continue;
                }
                const auto lp = step_logprobs(b.tokens);
                std::vector<int> idx(lp.size());
                std::iota(idx.begin(), idx.end(), 0);
                std::partial_sort(idx.begin(), idx.begin() + decode.beam_width, idx.end(),
                                  [&](int a, int c) { return lp[a] > lp[c]; });
                for (int k = 0; k < decode.beam_width; ++k) {
                    Beam nb = b;
                    nb.tokens.push_back(idx[k]);
                    nb.logprob += lp[idx[k]];
                    nb.done = idx[k] == Vocab::kEos;
                    next.push_back(std::move(nb));
                }
            }
            std::sort(next.begin(), next.end(), [](const Beam& a, const Beam& b) {
                return a.logprob > b.logprob;
            });
            next.resize(std::min<size_t>(next.size(), decode.beam_width));
            beams = std::move(next);
            if (std::all_of(beams.begin(), beams.end(), [](const Beam& b) { return b.done; }))
                break;
        }
        out_tokens = beams.front().tokens;
    } else {
        std::mt19937_64 rng(decode.sample_seed);
        std::vector<int> inp{Vocab::kBos};
        for (int step = 0; step < max_new; ++step) {
            const auto lp = step_logprobs(inp);
            int tok;
            if (decode.mode == DecodeMode::greedy) {
                tok = 0;
                for (size_t j = 1; j < lp.size(); ++j)
                    if (lp[j] > lp[tok]) tok = static_cast<int>(j);
            } else {
                std::vector<double> w(lp.size());
                for (size_t j = 0; j < lp.size(); ++j)
                    w[j] = std::exp(lp[j] / std::max(1e-6, decode.temperature));
                std::discrete_distribution<int> dist(w.begin(), w.end());
                tok = dist(rng);
            }
            inp.push_back(tok);
            if (tok == Vocab::kEos) break;
        }
        out_tokens = inp;
    }
    return detokenize(out_tokens, vocab);
}

std::vector<std::string> AttackerModel::computation_graph_components() const {
    // Every named tensor reachable from the attacker's forward pass. A
    // black-box attacker must see only its own three submodules here, never a
    // server- or victim-owned parameter.
    std::vector<std::string> out{"input.representation_frames"};
    for (const auto& p : all_parameters()) out.push_back(p->name);
    if (purifier_.tester_w_) {
        out.push_back(purifier_.tester_w_->name);
        out.push_back(purifier_.tester_b_->name);
    }
    return out;
}

void AttackerModel::snap_parameters() {
    for (const auto& p : all_parameters()) snap_f32(p->val);
    if (purifier_.tester_w_) {
        snap_f32(purifier_.tester_w_->val);
        snap_f32(purifier_.tester_b_->val);
    }
}

Checkpoint AttackerModel::to_checkpoint(const TrainRecipe& recipe) const {
    Checkpoint ck;
    ck.meta = {{"kind", "attacker"},
               {"config", cfg_.to_json()},
               {"purifier_config", purifier_.config().to_json()},
               {"recipe", recipe.to_json()},
               {"d_rep", purifier_.d_in()},
               {"d_embed", purifier_.d_out()},
               {"victim_model_id", hash_hex(victim_id_)},
               {"knowledge",
                {{"level", knowledge_.level == KnowledgeLevel::white_box ? "white_box" : "black_box"},
                 {"server_arch_known", knowledge_.server_arch_known}}}};
    for (const auto& [n, m] : purifier_.named_tensors("purifier.")) ck.tensors.emplace_back(n, m);
    for (const auto& p : decoder_parameters()) ck.tensors.emplace_back(p->name, p->val);
    return ck;
}

AttackerModel AttackerModel::from_checkpoint(const Checkpoint& ck) {
    if (ck.meta.at("kind") != "attacker") throw std::runtime_error("not an attacker checkpoint");
    const auto cfg = AttackerConfig::from_json(ck.meta.at("config"));
    const auto pcfg = PurifierConfig::from_json(ck.meta.at("purifier_config"));
    AttackKnowledge know;
    if (ck.meta.contains("knowledge")) {
        const auto& kj = ck.meta.at("knowledge");
        know.level = kj.at("level") == "white_box" ? KnowledgeLevel::white_box
                                                  : KnowledgeLevel::black_box;
        know.server_arch_known = kj.at("server_arch_known");
    }
    Hash128 vid{};
    const std::string hex = ck.meta.at("victim_model_id");
    for (int i = 0; i < 16; ++i)
        vid[i] = static_cast<uint8_t>(std::stoi(hex.substr(2 * i, 2), nullptr, 16));
    AttackerModel m(cfg, pcfg, ck.meta.at("d_rep"), ck.meta.at("d_embed"), vid, know);
    m.purifier_.load_tensors(ck, "purifier.");
    for (const auto& p : m.decoder_parameters()) p->val = ck.tensor(p->name);
    return m;
}

namespace {

struct CaptureTrainItem {
    const CaptureItem* item;
    const TextRecord* record;
    RepresentationTrace trace;
};

std::vector<CaptureTrainItem> prepare(const CaptureSet& captures, const Corpus& corpus) {
    std::vector<CaptureTrainItem> out;
    for (const auto& it : captures.items) {
        const auto* rec = corpus.find(it.record_id);
        if (!rec) throw std::runtime_error("capture references unknown record " + it.record_id);
        auto fr = deserialize_frame(it.frame_bytes);
        out.push_back({&it, rec, std::move(fr.trace)});
    }
    return out;
}

}  // namespace

Step2Report train_attacker(AttackerModel& attacker, const CaptureSet& train_captures,
                           const CaptureSet& val_captures, const Corpus& corpus,
                           const TrainRecipe& recipe) {
    auto items = prepare(train_captures, corpus);
    if (items.empty()) throw std::runtime_error("train_attacker: no training captures");
    Step2Report rep;
    rep.val_ce_before = attacker.eval_mean_ce(val_captures, corpus, val_captures.items.front().split);

    AdamOptimizer opt(attacker.decoder_parameters(), recipe.step2.lr);
    std::vector<size_t> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    long step = 0;
    const Split val_split = val_captures.items.front().split;
    for (int e = 0; e < recipe.step2.epochs; ++e) {
        std::mt19937_64 rng(attacker.config().seed ^ (0x9e3779b9ULL * (e + 1)));
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t idx : order) {
            const auto& it = items[idx];
            Tape t;
            auto seq = attacker.sequence_loss(t, it.trace, it.record->tokens, false);
            NodePtr loss = seq.loss;
            if (recipe.lm_loss_weight > 0.0) {
                auto lm = attacker.lm_loss(t, it.record->tokens);
                loss = t.add_scaled(seq.loss, lm.loss, recipe.lm_loss_weight);
            }
            if (!std::isfinite(loss->val.data[0]))
                throw TrainingDivergence("attacker training diverged");
            opt.zero_grad();
            t.backward(loss);
            opt.step();
            ++step;
            if (recipe.ppl_eval_every > 0 && step % recipe.ppl_eval_every == 0) {
                const double ce = attacker.eval_mean_ce(val_captures, corpus, val_split);
                rep.ppl_log.push_back({step, ce, perplexity(ce)});
            }
        }
    }
    attacker.snap_parameters();
    rep.val_ce_after = attacker.eval_mean_ce(val_captures, corpus, val_split);
    return rep;
}

Step3Report joint_finetune(AttackerModel& attacker, const CaptureSet& train_captures,
                           const CaptureSet& val_captures, const Corpus& corpus,
                           const TrainRecipe& recipe) {
    auto items = prepare(train_captures, corpus);
    if (items.empty()) throw std::runtime_error("joint_finetune: no training captures");
    const Split val_split = val_captures.items.front().split;
    Step3Report rep;
    rep.val_ce_step2 = attacker.eval_mean_ce(val_captures, corpus, val_split);

    const auto all = attacker.all_parameters();
    std::vector<Mat> snapshot;
    snapshot.reserve(all.size());
    for (const auto& p : all) snapshot.push_back(p->val);

    AdamOptimizer opt(all, recipe.step3.lr);
    std::vector<size_t> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    for (int e = 0; e < recipe.step3.epochs; ++e) {
        std::mt19937_64 rng(attacker.config().seed ^ (0x7f4a7c15ULL * (e + 1)));
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t idx : order) {
            const auto& it = items[idx];
            Tape t;
            auto seq = attacker.sequence_loss(t, it.trace, it.record->tokens, true);
            if (!std::isfinite(seq.loss->val.data[0]))
                throw TrainingDivergence("joint finetune diverged");
            opt.zero_grad();
            t.backward(seq.loss);
            opt.step();
        }
    }
    attacker.snap_parameters();

    auto delta_norm = [&](const std::vector<NodePtr>& group, size_t offset_in_all) {
        double s = 0.0;
        for (size_t i = 0; i < group.size(); ++i) {
            const Mat& before = snapshot[offset_in_all + i];
            const Mat& after = group[i]->val;
            for (size_t k = 0; k < after.size(); ++k) {
                const double d = after.data[k] - before.data[k];
                s += d * d;
            }
        }
        return std::sqrt(s);
    };
    const auto pur = attacker.purifier().parameters();
    rep.purifier_delta = delta_norm(pur, 0);
    // mapper is the first two tensors of the decoder group
    const auto dec = attacker.decoder_parameters();
    rep.mapper_delta = delta_norm({dec[0], dec[1]}, pur.size());
    rep.decoder_delta =
        delta_norm(std::vector<NodePtr>(dec.begin() + 2, dec.end()), pur.size() + 2);

    rep.val_ce_step3 = attacker.eval_mean_ce(val_captures, corpus, val_split);
    if (rep.val_ce_step3 > rep.val_ce_step2 * 1.01) {
        for (size_t i = 0; i < all.size(); ++i) all[i]->val = snapshot[i];
        rep.reverted = true;
        rep.val_ce_step3 = attacker.eval_mean_ce(val_captures, corpus, val_split);
    }
    return rep;
}

}  // namespace sli
