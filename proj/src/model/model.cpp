#include "sli/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>

namespace sli {

void ModelConfig::validate() const {
    if (d_model % n_heads != 0) throw std::invalid_argument("d_model not divisible by n_heads");
    if (n_blocks < 2) throw std::invalid_argument("need at least 2 blocks to split");
    if (vocab_size <= 0) throw std::invalid_argument("vocab_size must be positive");
    if (max_seq_len <= 0) throw std::invalid_argument("max_seq_len must be positive");
}

nlohmann::json ModelConfig::to_json() const {
    return {{"arch", arch == Arch::decoder_only ? "decoder_only" : "encoder_decoder"},
            {"n_blocks", n_blocks},
            {"d_model", d_model},
            {"n_heads", n_heads},
            {"d_ff", d_ff},
            {"vocab_size", vocab_size},
            {"max_seq_len", max_seq_len},
            {"seed", seed},
            {"mlp_head_layers", mlp_head_layers}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    const std::string a = j.at("arch");
    if (a == "decoder_only")
        c.arch = Arch::decoder_only;
    else if (a == "encoder_decoder")
        c.arch = Arch::encoder_decoder;
    else
        throw std::invalid_argument("unknown arch: " + a);
    c.n_blocks = j.at("n_blocks");
    c.d_model = j.at("d_model");
    c.n_heads = j.at("n_heads");
    c.d_ff = j.at("d_ff");
    c.vocab_size = j.at("vocab_size");
    c.max_seq_len = j.at("max_seq_len");
    c.seed = j.at("seed");
    c.mlp_head_layers = j.value("mlp_head_layers", 4);
    return c;
}

ModelConfig ModelConfig::case1(int vocab_size, uint64_t seed) {
    ModelConfig c;
    c.arch = Arch::encoder_decoder;
    c.n_blocks = 4;
    c.d_model = 64;
    c.n_heads = 4;
    c.d_ff = 256;
    c.vocab_size = vocab_size;
    c.max_seq_len = 32;
    c.seed = seed;
    c.mlp_head_layers = 4;
    return c;
}

std::string tap_position_name(TapPosition p) {
    switch (p) {
        case TapPosition::embedding: return "embedding";
        case TapPosition::attention_out: return "attention_out";
        case TapPosition::ffn_out: return "ffn_out";
        case TapPosition::block_out: return "block_out";
    }
    return "?";
}

TapPosition tap_position_from_name(const std::string& s) {
    if (s == "embedding") return TapPosition::embedding;
    if (s == "attention_out") return TapPosition::attention_out;
    if (s == "ffn_out") return TapPosition::ffn_out;
    if (s == "block_out") return TapPosition::block_out;
    throw std::invalid_argument("unknown tap position: " + s);
}

std::string TapPoint::str() const {
    return std::to_string(block_index) + ":" + tap_position_name(position);
}

TapPoint TapPoint::parse(const std::string& s) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("tap format is BLOCK:POSITION");
    TapPoint t;
    t.block_index = std::stoi(s.substr(0, colon));
    t.position = tap_position_from_name(s.substr(colon + 1));
    return t;
}

std::vector<NodePtr> BlockParams::all() const {
    return {ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w_ff1, b_ff1, w_ff2, b_ff2};
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

void record_trace(const NodePtr& node, const TapPoint& tap, RepresentationTrace* trace) {
    if (!trace) return;
    trace->tap = tap;
    trace->token_count = node->val.rows;
    trace->d_model = node->val.cols;
    trace->states.resize(node->val.size());
    for (size_t i = 0; i < node->val.size(); ++i)
        trace->states[i] = static_cast<float>(node->val.data[i]);
}

}  // namespace

VictimModel::VictimModel(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    const double s = 0.02;
    tok_emb = make_param("tok_emb", randn(rng, cfg_.vocab_size, cfg_.d_model, s));
    pos_emb = make_param("pos_emb", randn(rng, cfg_.max_seq_len, cfg_.d_model, s));
    for (int b = 0; b < cfg_.n_blocks; ++b) {
        const std::string p = "block" + std::to_string(b) + ".";
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
        blocks.push_back(bp);
    }
    if (cfg_.arch == Arch::encoder_decoder) {
        for (int l = 0; l < cfg_.mlp_head_layers; ++l) {
            const std::string p = "mlp" + std::to_string(l) + ".";
            mlp_head_w.push_back(make_param(p + "w", randn(rng, cfg_.d_model, cfg_.d_model, s)));
            mlp_head_b.push_back(make_param(p + "b", Mat(1, cfg_.d_model)));
        }
    }
    lnf_g = make_param("lnf_g", ones_row(cfg_.d_model));
    lnf_b = make_param("lnf_b", Mat(1, cfg_.d_model));
}

std::vector<NodePtr> VictimModel::parameters() const {
    std::vector<NodePtr> out{tok_emb, pos_emb};
    for (const auto& b : blocks)
        for (const auto& p : b.all()) out.push_back(p);
    for (size_t i = 0; i < mlp_head_w.size(); ++i) {
        out.push_back(mlp_head_w[i]);
        out.push_back(mlp_head_b[i]);
    }
    out.push_back(lnf_g);
    out.push_back(lnf_b);
    return out;
}

long VictimModel::param_scalar_count() const {
    long n = 0;
    for (const auto& p : parameters()) n += static_cast<long>(p->val.size());
    return n;
}

Hash128 VictimModel::model_id() const {
    const auto bytes = to_checkpoint().serialize();
    return fnv128(bytes.data(), bytes.size());
}

void VictimModel::validate_tap(const TapPoint& tap) const {
    if (tap.block_index < 0 || tap.block_index >= cfg_.n_blocks)
        throw std::invalid_argument("tap block index out of range");
    if (tap.position == TapPosition::embedding && tap.block_index != 0)
        throw std::invalid_argument("embedding tap is only valid at block 0");
}

NodePtr VictimModel::run_block(Tape& t, const BlockParams& bp, NodePtr x, bool causal,
                               NodePtr* attn_out) const {
    auto a = t.layer_norm(x, bp.ln1_g, bp.ln1_b);
    auto q = t.matmul(a, bp.wq);
    auto k = t.matmul(a, bp.wk);
    auto v = t.matmul(a, bp.wv);
    auto att = t.attention(q, k, v, cfg_.n_heads, causal);
    auto h1 = t.add(x, t.matmul(att, bp.wo));
    if (attn_out) *attn_out = h1;
    auto b = t.layer_norm(h1, bp.ln2_g, bp.ln2_b);
    auto f = t.gelu(t.add_rowvec(t.matmul(b, bp.w_ff1), bp.b_ff1));
    auto f2 = t.add_rowvec(t.matmul(f, bp.w_ff2), bp.b_ff2);
    return t.add(h1, f2);
}

NodePtr VictimModel::head(Tape& t, NodePtr h) const {
    if (cfg_.arch == Arch::encoder_decoder) {
        for (size_t l = 0; l < mlp_head_w.size(); ++l)
            h = t.gelu(t.add_rowvec(t.matmul(h, mlp_head_w[l]), mlp_head_b[l]));
    }
    auto hn = t.layer_norm(h, lnf_g, lnf_b);
    return t.matmul_nt(hn, tok_emb);  // tied unembedding
}

NodePtr VictimModel::forward(Tape& t, const std::vector<int>& tokens,
                             const std::optional<TapPoint>& tap,
                             RepresentationTrace* trace_out) const {
    const int T = static_cast<int>(tokens.size());
    if (T == 0) throw std::invalid_argument("empty token sequence");
    if (T > cfg_.max_seq_len) throw std::invalid_argument("sequence exceeds max_seq_len");
    if (tap) validate_tap(*tap);
    auto x = t.add(t.embed(tok_emb, tokens), t.slice_rows(pos_emb, 0, T));
    if (tap && tap->position == TapPosition::embedding) record_trace(x, *tap, trace_out);
    const bool causal = cfg_.arch == Arch::decoder_only;
    for (int b = 0; b < cfg_.n_blocks; ++b) {
        NodePtr attn_out;
        x = run_block(t, blocks[b], x, causal, &attn_out);
        if (tap && tap->block_index == b) {
            if (tap->position == TapPosition::attention_out)
                record_trace(attn_out, *tap, trace_out);
            else if (tap->position == TapPosition::ffn_out ||
                     tap->position == TapPosition::block_out)
                record_trace(x, *tap, trace_out);
        }
    }
    return head(t, x);
}

Mat VictimModel::logits(const std::vector<int>& tokens) const {
    Tape t;
    return forward(t, tokens)->val;
}

std::pair<RepresentationTrace, Mat> VictimModel::forward_with_tap(const std::vector<int>& tokens,
                                                                  const TapPoint& tap) const {
    Tape t;
    RepresentationTrace trace;
    auto logits = forward(t, tokens, tap, &trace);
    trace.source_id.clear();
    for (int i = 0; i < trace.token_count; ++i)
        for (int j = 0; j < trace.d_model; ++j)
            if (!std::isfinite(trace.at(i, j)))
                throw std::runtime_error("non-finite value in representation trace");
    return {std::move(trace), logits->val};
}

double VictimModel::train(const Corpus& corpus, int epochs, double lr, int log_every) {
    auto records = corpus.slice(Split::train);
    {
        // Aux records are attacker-owned training data; the victim trains on
        // them too since aux is carved out of the train portion.
        auto aux = corpus.slice(Split::aux);
        records.insert(records.end(), aux.begin(), aux.end());
    }
    if (records.empty()) throw std::runtime_error("train_victim: no training records");
    AdamOptimizer opt(parameters(), lr);
    double last = 0.0;
    std::vector<size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    for (int e = 0; e < epochs; ++e) {
        std::mt19937_64 rng(cfg_.seed ^ (0x5deece66dULL * (e + 1)));
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        long epoch_tokens = 0;
        for (size_t idx : order) {
            const auto& tok = records[idx]->tokens;
            if (static_cast<int>(tok.size()) < 2) continue;
            std::vector<int> inp(tok.begin(), tok.end() - 1);
            if (static_cast<int>(inp.size()) > cfg_.max_seq_len)
                inp.resize(cfg_.max_seq_len);
            std::vector<int> tgt(tok.begin() + 1, tok.begin() + 1 + inp.size());
            Tape t;
            auto logits = forward(t, inp);
            auto ce = t.cross_entropy_sum(logits, tgt);
            const double loss = ce.loss->val.data[0];
            if (!std::isfinite(loss))
                throw TrainingDivergence("victim training diverged (non-finite loss)");
            epoch_loss += loss;
            epoch_tokens += static_cast<long>(tgt.size());
            opt.zero_grad();
            t.backward(ce.loss);
            opt.step();
        }
        last = epoch_loss / std::max<long>(1, epoch_tokens);
        if (log_every > 0 && (e + 1) % log_every == 0)
            std::cerr << "[victim] epoch " << (e + 1) << " train ce/token " << last << "\n";
    }
    snap_parameters();
    return last;
}

double VictimModel::eval_ce(const std::vector<const TextRecord*>& records) const {
    double total = 0.0;
    long n = 0;
    for (const auto* r : records) {
        const auto& tok = r->tokens;
        if (static_cast<int>(tok.size()) < 2) continue;
        std::vector<int> inp(tok.begin(), tok.end() - 1);
        if (static_cast<int>(inp.size()) > cfg_.max_seq_len) inp.resize(cfg_.max_seq_len);
        std::vector<int> tgt(tok.begin() + 1, tok.begin() + 1 + inp.size());
        Tape t;
        auto logits = forward(t, inp);
        auto ce = t.cross_entropy_sum(logits, tgt);
        total += ce.loss->val.data[0];
        n += static_cast<long>(tgt.size());
    }
    return total / std::max<long>(1, n);
}

void VictimModel::snap_parameters() {
    for (const auto& p : parameters()) snap_f32(p->val);
}

Checkpoint VictimModel::to_checkpoint() const {
    Checkpoint ck;
    ck.meta = {{"kind", "victim"}, {"config", cfg_.to_json()}};
    for (const auto& p : parameters()) ck.tensors.emplace_back(p->name, p->val);
    return ck;
}

VictimModel VictimModel::from_checkpoint(const Checkpoint& ck) {
    if (ck.meta.at("kind") != "victim") throw std::runtime_error("not a victim checkpoint");
    VictimModel m(ModelConfig::from_json(ck.meta.at("config")));
    for (const auto& p : m.parameters()) {
        const Mat& t = ck.tensor(p->name);
        if (!t.same_shape(p->val)) throw std::runtime_error("checkpoint shape mismatch: " + p->name);
        p->val = t;
    }
    return m;
}

void VictimModel::save(const std::string& path) const { to_checkpoint().save(path); }

VictimModel VictimModel::load(const std::string& path) {
    return from_checkpoint(Checkpoint::load(path));
}

ClientPart::ClientPart(std::shared_ptr<const VictimModel> model, TapPoint tap)
    : model_(std::move(model)), tap_(tap) {
    if (tap_.position == TapPosition::embedding)
        throw std::invalid_argument("cannot split before block 0 output");
    model_->validate_tap(tap_);
}

Mat ClientPart::forward(const std::vector<int>& tokens) const {
    Tape t;
    const auto& m = *model_;
    const int T = static_cast<int>(tokens.size());
    if (T > m.cfg_.max_seq_len) throw std::invalid_argument("sequence exceeds max_seq_len");
    auto x = t.add(t.embed(m.tok_emb, tokens), t.slice_rows(m.pos_emb, 0, T));
    const bool causal = m.cfg_.arch == Arch::decoder_only;
    for (int b = 0; b < tap_.block_index; ++b) x = m.run_block(t, m.blocks[b], x, causal, nullptr);
    NodePtr attn_out;
    x = m.run_block(t, m.blocks[tap_.block_index], x, causal, &attn_out);
    return tap_.position == TapPosition::attention_out ? attn_out->val : x->val;
}

RepresentationTrace ClientPart::capture(const std::vector<int>& tokens,
                                        const std::string& source_id) const {
    const Mat states = forward(tokens);
    RepresentationTrace tr;
    tr.tap = tap_;
    tr.token_count = states.rows;
    tr.d_model = states.cols;
    tr.source_id = source_id;
    tr.states.resize(states.size());
    for (size_t i = 0; i < states.size(); ++i) tr.states[i] = static_cast<float>(states.data[i]);
    return tr;
}

long ClientPart::param_scalar_count() const {
    // The tied embedding table is owned by the device side.
    long n = static_cast<long>(model_->tok_emb->val.size()) +
             static_cast<long>(model_->pos_emb->val.size());
    for (int b = 0; b < tap_.block_index; ++b)
        for (const auto& p : model_->blocks[b].all()) n += static_cast<long>(p->val.size());
    const auto& bp = model_->blocks[tap_.block_index];
    std::vector<NodePtr> own;
    if (tap_.position == TapPosition::attention_out)
        own = {bp.ln1_g, bp.ln1_b, bp.wq, bp.wk, bp.wv, bp.wo};
    else
        own = bp.all();
    for (const auto& p : own) n += static_cast<long>(p->val.size());
    return n;
}

ServerPart::ServerPart(std::shared_ptr<const VictimModel> model, TapPoint tap)
    : model_(std::move(model)), tap_(tap) {
    if (tap_.position == TapPosition::embedding)
        throw std::invalid_argument("cannot split before block 0 output");
    model_->validate_tap(tap_);
}

Mat ServerPart::forward(const Mat& tap_states) const {
    Tape t;
    const auto& m = *model_;
    auto x = make_node(tap_states);
    const bool causal = m.cfg_.arch == Arch::decoder_only;
    int next_block = tap_.block_index + 1;
    if (tap_.position == TapPosition::attention_out) {
        // Finish the tapped block: its FFN sublayer with the residual add.
        const auto& bp = m.blocks[tap_.block_index];
        auto b = t.layer_norm(x, bp.ln2_g, bp.ln2_b);
        auto f = t.gelu(t.add_rowvec(t.matmul(b, bp.w_ff1), bp.b_ff1));
        x = t.add(x, t.add_rowvec(t.matmul(f, bp.w_ff2), bp.b_ff2));
    }
    for (int b = next_block; b < m.cfg_.n_blocks; ++b)
        x = m.run_block(t, m.blocks[b], x, causal, nullptr);
    return m.head(t, x)->val;
}

long ServerPart::param_scalar_count() const {
    return model_->param_scalar_count() - ClientPart(model_, tap_).param_scalar_count();
}

std::pair<ClientPart, ServerPart> split(std::shared_ptr<const VictimModel> model,
                                        const TapPoint& tap) {
    return {ClientPart(model, tap), ServerPart(model, tap)};
}

}  // namespace sli
