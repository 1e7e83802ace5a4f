#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "sli/attack/attacker.hpp"

using namespace sli;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    Corpus corpus;
    std::shared_ptr<VictimModel> victim;
    TapPoint tap{0, TapPosition::block_out};
    CaptureSet train_caps, val_caps;

    explicit Fixture(uint64_t seed = 7, int n = 60, int d = 16) {
        corpus = make_splits(synth_corpus(seed, n, TemplateGrammar::persona_default()), 0.7, 0.15,
                             0.15, 0.2, seed);
        ModelConfig mc;
        mc.n_blocks = 2;
        mc.d_model = d;
        mc.n_heads = 2;
        mc.d_ff = 2 * d;
        mc.vocab_size = corpus.vocab.size();
        mc.seed = seed;
        victim = std::make_shared<VictimModel>(mc);
        train_caps = capture_dataset(*victim, tap, corpus, Split::train);
        val_caps = capture_dataset(*victim, tap, corpus, Split::val);
    }

    AttackerConfig attacker_config(int blocks = 2, int d_model = 16) const {
        AttackerConfig ac;
        ac.n_blocks = blocks;
        ac.d_model = d_model;
        ac.n_heads = 2;
        ac.d_ff = 2 * d_model;
        ac.vocab_size = corpus.vocab.size();
        ac.max_seq_len = victim->config().max_seq_len;
        ac.seed = 5;
        return ac;
    }

    AttackerModel make_attacker(PurifierVariant v = PurifierVariant::linear_projection) const {
        PurifierConfig pc;
        pc.variant = v;
        const int d = victim->config().d_model;
        return AttackerModel(attacker_config(), pc, d, d, victim->model_id());
    }

    std::vector<PurifierPair> aux_pairs() const {
        std::vector<PurifierPair> pairs;
        for (const auto* rec : corpus.slice(Split::aux)) {
            const auto [rep, l1] = victim->forward_with_tap(rec->tokens, tap);
            const auto [emb, l2] =
                victim->forward_with_tap(rec->tokens, {0, TapPosition::embedding});
            PurifierPair p;
            p.rep = Mat(rep.token_count, rep.d_model);
            p.embedding = Mat(emb.token_count, emb.d_model);
            for (size_t i = 0; i < rep.states.size(); ++i) p.rep.data[i] = rep.states[i];
            for (size_t i = 0; i < emb.states.size(); ++i) p.embedding.data[i] = emb.states[i];
            p.tokens = rec->tokens;
            pairs.push_back(std::move(p));
        }
        return pairs;
    }
};

}  // namespace

TEST_CASE("uniform logits give CE = ln(vocab) and PPL = vocab") {
    Fixture fx;
    auto attacker = fx.make_attacker();
    // Zeroing every parameter makes the decoder emit all-zero logits, i.e. a
    // uniform distribution over the vocabulary.
    for (auto& p : attacker.all_parameters()) p->val.zero();
    const double ce = attacker.eval_mean_ce(fx.val_caps, fx.corpus, Split::val);
    const double uniform = std::log(fx.corpus.vocab.size());
    CHECK(std::fabs(ce - uniform) <= 1e-6);
    CHECK(perplexity(ce) ==
          doctest::Approx(static_cast<double>(fx.corpus.vocab.size())).epsilon(1e-3));
}

TEST_CASE("perplexity is exp of mean CE") {
    for (double ce : {0.0, 0.3, 1.7, 5.2})
        CHECK(perplexity(ce) == doctest::Approx(std::exp(ce)).epsilon(1e-12));
}

TEST_CASE("sequence loss equals the sum of its per-token NLL entries") {
    Fixture fx;
    auto attacker = fx.make_attacker();
    for (const auto& item : fx.val_caps.items) {
        const auto fr = deserialize_frame(item.frame_bytes);
        const auto* rec = fx.corpus.find(item.record_id);
        Tape t;
        const auto res = attacker.sequence_loss(t, fr.trace, rec->tokens, false);
        double sum = 0.0;
        for (double v : res.nll) sum += v;
        CHECK(res.loss->val.data[0] == doctest::Approx(sum).epsilon(1e-9));
        CHECK(res.nll.size() == rec->tokens.size() - 1);
    }
}

TEST_CASE("eval_mean_ce matches a brute-force recomputation") {
    Fixture fx;
    auto attacker = fx.make_attacker();
    double total = 0.0;
    long count = 0;
    for (const auto& item : fx.val_caps.items) {
        const auto fr = deserialize_frame(item.frame_bytes);
        const auto* rec = fx.corpus.find(item.record_id);
        Tape t;
        const auto res = attacker.sequence_loss(t, fr.trace, rec->tokens, false);
        for (double v : res.nll) {
            total += v;
            ++count;
        }
    }
    CHECK(attacker.eval_mean_ce(fx.val_caps, fx.corpus, Split::val) ==
          doctest::Approx(total / count).epsilon(1e-12));
}

TEST_CASE("attacker micro-model gradients match finite differences") {
    Fixture fx(3, 40, 8);
    auto attacker = fx.make_attacker();
    const auto& item = fx.train_caps.items.front();
    const auto fr = deserialize_frame(item.frame_bytes);
    std::vector<int> toks = fx.corpus.find(item.record_id)->tokens;
    if (toks.size() > 6) toks.resize(6);

    Tape t;
    auto res = attacker.sequence_loss(t, fr.trace, toks, true);
    t.backward(res.loss);

    auto loss_now = [&] {
        Tape tt;
        return attacker.sequence_loss(tt, fr.trace, toks, true).loss->val.data[0];
    };

    std::mt19937_64 rng(17);
    auto params = attacker.all_parameters();
    int checked = 0;
    const double eps = 1e-5;
    while (checked < 50) {
        auto& p = params[rng() % params.size()];
        const size_t k = rng() % p->val.data.size();
        const double saved = p->val.data[k];
        p->val.data[k] = saved + eps;
        const double hi = loss_now();
        p->val.data[k] = saved - eps;
        const double lo = loss_now();
        p->val.data[k] = saved;
        const double num = (hi - lo) / (2 * eps);
        const double ana = p->grad.data[k];
        if (std::fabs(num) < 1e-7 && std::fabs(ana) < 1e-7) continue;
        const double rel = std::fabs(num - ana) / std::max(std::fabs(num), std::fabs(ana));
        INFO("param ", p->name, " entry ", k, " numeric ", num, " analytic ", ana);
        CHECK(rel <= 1e-3);
        ++checked;
    }
}

TEST_CASE("identity purifier requires matching dims and passes data through") {
    PurifierConfig pc;
    pc.variant = PurifierVariant::none;
    CHECK_THROWS(Purifier(pc, 8, 16, 1));
    Purifier p(pc, 8, 8, 1);
    Mat x(3, 8);
    for (size_t i = 0; i < x.data.size(); ++i) x.data[i] = 0.1 * static_cast<double>(i);
    const Mat y = p.apply(x);
    CHECK(std::memcmp(x.data.data(), y.data.data(), x.data.size() * sizeof(double)) == 0);
    CHECK(p.parameters().empty());
}

TEST_CASE("purifier pretraining beats the constant-predictor baseline") {
    Fixture fx(5, 80);
    for (auto v : {PurifierVariant::linear_projection, PurifierVariant::linear_with_tester,
                   PurifierVariant::autoencoder}) {
        PurifierConfig pc;
        pc.variant = v;
        const int d = fx.victim->config().d_model;
        Purifier purifier(pc, d, d, 11);
        const auto rep =
            pretrain_purifier(purifier, fx.aux_pairs(), 12, 2e-3, fx.corpus.vocab.size());
        INFO("variant ", purifier_variant_name(v), " mse ", rep.heldout_mse, " baseline ",
             rep.baseline_variance);
        CHECK(rep.heldout_mse < rep.baseline_variance);
        CHECK_FALSE(rep.flagged);
    }
}

TEST_CASE("step 2 improves validation CE with the purifier frozen") {
    Fixture fx(9, 60);
    auto attacker = fx.make_attacker();
    pretrain_purifier(attacker.purifier(), fx.aux_pairs(), 6, 2e-3, fx.corpus.vocab.size());

    std::vector<Mat> purifier_before;
    for (const auto& p : attacker.purifier().parameters()) purifier_before.push_back(p->val);

    TrainRecipe recipe;
    recipe.step2.epochs = 2;
    recipe.ppl_eval_every = 20;
    const auto rep = train_attacker(attacker, fx.train_caps, fx.val_caps, fx.corpus, recipe);
    CHECK(rep.val_ce_after < rep.val_ce_before);
    CHECK(!rep.ppl_log.empty());
    for (const auto& e : rep.ppl_log)
        CHECK(e.ppl == doctest::Approx(std::exp(e.mean_ce)).epsilon(1e-6));

    const auto purifier_after = attacker.purifier().parameters();
    for (size_t i = 0; i < purifier_after.size(); ++i)
        CHECK(std::memcmp(purifier_before[i].data.data(), purifier_after[i]->val.data.data(),
                          purifier_before[i].data.size() * sizeof(double)) == 0);
}

TEST_CASE("step 3 reports per-component deltas and guards regressions") {
    Fixture fx(11, 60);
    auto attacker = fx.make_attacker();
    pretrain_purifier(attacker.purifier(), fx.aux_pairs(), 6, 2e-3, fx.corpus.vocab.size());
    TrainRecipe recipe;
    recipe.step2.epochs = 2;
    recipe.step3.epochs = 1;
    train_attacker(attacker, fx.train_caps, fx.val_caps, fx.corpus, recipe);
    const auto rep = joint_finetune(attacker, fx.train_caps, fx.val_caps, fx.corpus, recipe);
    if (rep.reverted) {
        // Reverting restores the step-2 score exactly.
        CHECK(attacker.eval_mean_ce(fx.val_caps, fx.corpus, Split::val) ==
              doctest::Approx(rep.val_ce_step2).epsilon(1e-9));
    } else {
        CHECK(rep.val_ce_step3 <= rep.val_ce_step2 * 1.01);
        CHECK(rep.purifier_delta > 0.0);
        CHECK(rep.mapper_delta > 0.0);
        CHECK(rep.decoder_delta > 0.0);
    }
}

TEST_CASE("greedy decoding is deterministic; frames from another model are rejected") {
    Fixture fx(13, 50);
    auto attacker = fx.make_attacker();
    const auto fr = deserialize_frame(fx.val_caps.items.front().frame_bytes);
    RepresentationFrame frame{fx.val_caps.model_id, fr.trace};
    const std::string a = attacker.invert(frame, fx.corpus.vocab);
    const std::string b = attacker.invert(frame, fx.corpus.vocab);
    CHECK(a == b);

    RepresentationFrame alien = frame;
    alien.model_id.fill(0xee);
    CHECK_THROWS_WITH_AS(attacker.invert(alien, fx.corpus.vocab), "attacker/victim mismatch",
                         std::invalid_argument);
}

TEST_CASE("beam width 1 matches greedy; sampling is seed-deterministic") {
    Fixture fx(15, 50);
    auto attacker = fx.make_attacker();
    const auto fr = deserialize_frame(fx.val_caps.items.front().frame_bytes);
    RepresentationFrame frame{fx.val_caps.model_id, fr.trace};

    DecodeConfig beam1;
    beam1.mode = DecodeMode::beam;
    beam1.beam_width = 1;
    CHECK(attacker.invert(frame, fx.corpus.vocab, beam1) == attacker.invert(frame, fx.corpus.vocab));

    DecodeConfig samp;
    samp.mode = DecodeMode::sample;
    samp.sample_seed = 42;
    const std::string s1 = attacker.invert(frame, fx.corpus.vocab, samp);
    const std::string s2 = attacker.invert(frame, fx.corpus.vocab, samp);
    CHECK(s1 == s2);
}

TEST_CASE("attacker checkpoints round trip bit-exactly") {
    Fixture fx(17, 50);
    auto attacker = fx.make_attacker(PurifierVariant::autoencoder);
    pretrain_purifier(attacker.purifier(), fx.aux_pairs(), 4, 2e-3, fx.corpus.vocab.size());
    TrainRecipe recipe;
    recipe.step2.epochs = 1;
    train_attacker(attacker, fx.train_caps, fx.val_caps, fx.corpus, recipe);

    const auto ck = attacker.to_checkpoint(recipe);
    const std::string p = (fs::temp_directory_path() / "sli_test_attacker.slck").string();
    ck.save(p);
    auto loaded = AttackerModel::from_checkpoint(Checkpoint::load(p));
    fs::remove(p);

    CHECK(loaded.victim_model_id() == attacker.victim_model_id());
    CHECK(loaded.purifier().config().variant == PurifierVariant::autoencoder);
    const double a = attacker.eval_mean_ce(fx.val_caps, fx.corpus, Split::val);
    const double b = loaded.eval_mean_ce(fx.val_caps, fx.corpus, Split::val);
    CHECK(std::fabs(a - b) <= 1e-6);

    const auto fr = deserialize_frame(fx.val_caps.items.front().frame_bytes);
    RepresentationFrame frame{fx.val_caps.model_id, fr.trace};
    CHECK(attacker.invert(frame, fx.corpus.vocab) == loaded.invert(frame, fx.corpus.vocab));
}

TEST_CASE("knowledge audit: the attacker graph touches no server-side component") {
    Fixture fx;
    auto attacker = fx.make_attacker(PurifierVariant::linear_with_tester);
    pretrain_purifier(attacker.purifier(), fx.aux_pairs(), 2, 2e-3, fx.corpus.vocab.size());
    const auto parts = attacker.computation_graph_components();
    CHECK(!parts.empty());
    for (const auto& name : parts) {
        INFO("component ", name);
        CHECK(name.find("server") == std::string::npos);
        CHECK(name.find("victim") == std::string::npos);
        const bool allowed = name.rfind("purifier.", 0) == 0 || name.rfind("mapper.", 0) == 0 ||
                             name.rfind("decoder.", 0) == 0 || name.rfind("input.", 0) == 0;
        CHECK(allowed);
    }
}
