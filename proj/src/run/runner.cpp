#include "sli/run/runner.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace sli {

namespace {

nlohmann::json binning_to_json(const BinningConfig& b) {
    std::string rm = b.range_mode == RangeMode::global_minmax ? "global_minmax"
                     : b.range_mode == RangeMode::per_dim_minmax ? "per_dim_minmax"
                                                                 : "fixed";
    std::string dr = b.dim_reduction == DimReduction::none ? "none"
                     : b.dim_reduction == DimReduction::per_dim_then_joint_hash
                         ? "per_dim_then_joint_hash"
                         : "random_projection";
    return {{"n_bins", b.n_bins},         {"range_mode", rm},
            {"fixed_lo", b.fixed_lo},     {"fixed_hi", b.fixed_hi},
            {"dim_reduction", dr},        {"projection_dims", b.projection_dims},
            {"projection_seed", b.projection_seed}};
}

BinningConfig binning_from_json(const nlohmann::json& j) {
    BinningConfig b;
    b.n_bins = j.value("n_bins", 30);
    const std::string rm = j.value("range_mode", "global_minmax");
    if (rm == "global_minmax")
        b.range_mode = RangeMode::global_minmax;
    else if (rm == "per_dim_minmax")
        b.range_mode = RangeMode::per_dim_minmax;
    else if (rm == "fixed")
        b.range_mode = RangeMode::fixed;
    else
        throw ConfigError("unknown range_mode: " + rm);
    b.fixed_lo = j.value("fixed_lo", -1.0);
    b.fixed_hi = j.value("fixed_hi", 1.0);
    const std::string dr = j.value("dim_reduction", "random_projection");
    if (dr == "none")
        b.dim_reduction = DimReduction::none;
    else if (dr == "per_dim_then_joint_hash")
        b.dim_reduction = DimReduction::per_dim_then_joint_hash;
    else if (dr == "random_projection")
        b.dim_reduction = DimReduction::random_projection;
    else
        throw ConfigError("unknown dim_reduction: " + dr);
    b.projection_dims = j.value("projection_dims", 10);
    b.projection_seed = j.value("projection_seed", 17ULL);
    return b;
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
    nlohmann::json taps_j = nlohmann::json::array();
    for (const auto& t : taps) taps_j.push_back(t.str());
    return {{"seed", seed},
            {"out_dir", out_dir},
            {"corpus",
             {{"kind", corpus.kind},
              {"n", corpus.n},
              {"seed", corpus.seed},
              {"path", corpus.path},
              {"train_ratio", corpus.train_ratio},
              {"val_ratio", corpus.val_ratio},
              {"test_ratio", corpus.test_ratio},
              {"aux_fraction", corpus.aux_fraction}}},
            {"victim", victim.to_json()},
            {"victim_preset", victim_preset},
            {"victim_epochs", victim_epochs},
            {"victim_lr", victim_lr},
            {"taps", taps_j},
            {"purifier", purifier.to_json()},
            {"attacker", attacker.to_json()},
            {"recipe", recipe.to_json()},
            {"binning", binning_to_json(binning)},
            {"mi_sample_mode",
             mi_sample_mode == SampleMode::per_timestep ? "per_timestep" : "per_record"},
            {"embedder", embedder},
            {"run_step3", run_step3}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    try {
        RunConfig c;
        c.seed = j.value("seed", 7ULL);
        c.out_dir = j.value("out_dir", "out");
        if (j.contains("corpus")) {
            const auto& cj = j.at("corpus");
            c.corpus.kind = cj.value("kind", "synth");
            if (c.corpus.kind != "synth" && c.corpus.kind != "file")
                throw ConfigError("corpus.kind must be synth or file");
            c.corpus.n = cj.value("n", 5000);
            c.corpus.seed = cj.value("seed", c.seed);
            c.corpus.path = cj.value("path", "");
            c.corpus.train_ratio = cj.value("train_ratio", 0.82);
            c.corpus.val_ratio = cj.value("val_ratio", 0.09);
            c.corpus.test_ratio = cj.value("test_ratio", 0.09);
            c.corpus.aux_fraction = cj.value("aux_fraction", 0.1);
        } else {
            c.corpus.seed = c.seed;
        }
        if (j.contains("victim")) c.victim = ModelConfig::from_json(j.at("victim"));
        c.victim_preset = j.value("victim_preset", "toy");
        c.victim_epochs = j.value("victim_epochs", 6);
        c.victim_lr = j.value("victim_lr", 1e-3);
        if (j.contains("taps")) {
            c.taps.clear();
            for (const auto& t : j.at("taps")) c.taps.push_back(TapPoint::parse(t));
        }
        if (j.contains("purifier")) c.purifier = PurifierConfig::from_json(j.at("purifier"));
        if (j.contains("attacker")) c.attacker = AttackerConfig::from_json(j.at("attacker"));
        if (j.contains("recipe")) c.recipe = TrainRecipe::from_json(j.at("recipe"));
        if (j.contains("binning")) c.binning = binning_from_json(j.at("binning"));
        const std::string sm = j.value("mi_sample_mode", "per_timestep");
        if (sm == "per_timestep")
            c.mi_sample_mode = SampleMode::per_timestep;
        else if (sm == "per_record")
            c.mi_sample_mode = SampleMode::per_record;
        else
            throw ConfigError("unknown mi_sample_mode: " + sm);
        c.embedder = j.value("embedder", "token_count");
        if (c.embedder != "token_count" && c.embedder != "victim_embedding")
            throw ConfigError("unknown embedder: " + c.embedder);
        c.run_step3 = j.value("run_step3", true);
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad run config: ") + e.what());
    }
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw MissingArtifact("cannot open config: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return from_json(j);
}

Hash128 RunConfig::config_hash() const {
    const std::string s = to_json().dump();
    return fnv128(s.data(), s.size());
}

void RunManifest::add(const std::string& path) { artifacts.push_back(path); }

void RunManifest::save(const std::string& path) const {
    nlohmann::json j{{"config_hash", config_hash},
                     {"started_at", started_at},
                     {"finished_at", finished_at},
                     {"provenance", provenance},
                     {"artifacts", artifacts},
                     {"config", config}};
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write manifest: " + path);
    f << j.dump(2) << "\n";
}

RunManifest RunManifest::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw MissingArtifact("cannot open manifest: " + path);
    nlohmann::json j;
    f >> j;
    RunManifest m;
    m.config_hash = j.at("config_hash");
    m.started_at = j.at("started_at");
    m.finished_at = j.at("finished_at");
    m.provenance = j.at("provenance");
    m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
    m.config = j.at("config");
    return m;
}

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

ExperimentContext::ExperimentContext(RunConfig config) : cfg_(std::move(config)) {}

Corpus& ExperimentContext::corpus() {
    if (!corpus_) {
        Corpus c;
        if (cfg_.corpus.kind == "synth")
            c = synth_corpus(cfg_.corpus.seed, cfg_.corpus.n, TemplateGrammar::persona_default());
        else
            c = load_corpus_lines(cfg_.corpus.path);
        corpus_ = make_splits(std::move(c), cfg_.corpus.train_ratio, cfg_.corpus.val_ratio,
                              cfg_.corpus.test_ratio, cfg_.corpus.aux_fraction, cfg_.corpus.seed);
    }
    return *corpus_;
}

std::shared_ptr<VictimModel> ExperimentContext::victim() {
    if (!victim_) {
        auto& c = corpus();
        ModelConfig mc = cfg_.victim;
        if (cfg_.victim_preset == "case1") mc = ModelConfig::case1(c.vocab.size(), cfg_.seed);
        mc.vocab_size = c.vocab.size();
        if (mc.seed == 0) mc.seed = cfg_.seed;
        victim_ = std::make_shared<VictimModel>(mc);
        victim_->train(c, cfg_.victim_epochs, cfg_.victim_lr);
    }
    return victim_;
}

const CaptureSet& ExperimentContext::captures(const TapPoint& tap, Split split) {
    const std::string key = tap.str() + "/" + split_name(split);
    auto it = capture_cache_.find(key);
    if (it == capture_cache_.end())
        it = capture_cache_.emplace(key, capture_dataset(*victim(), tap, corpus(), split)).first;
    return it->second;
}

std::vector<PurifierPair> ExperimentContext::purifier_pairs(const TapPoint& tap) {
    const auto& rep_caps = captures(tap, Split::aux);
    const auto& emb_caps = captures(TapPoint{0, TapPosition::embedding}, Split::aux);
    if (rep_caps.items.size() != emb_caps.items.size())
        throw std::runtime_error("aux capture size mismatch");
    std::vector<PurifierPair> pairs;
    for (size_t i = 0; i < rep_caps.items.size(); ++i) {
        const auto rep = deserialize_frame(rep_caps.items[i].frame_bytes);
        const auto emb = deserialize_frame(emb_caps.items[i].frame_bytes);
        PurifierPair p;
        p.rep = Mat(rep.trace.token_count, rep.trace.d_model);
        for (size_t k = 0; k < p.rep.size(); ++k)
            p.rep.data[k] = static_cast<double>(rep.trace.states[k]);
        p.embedding = Mat(emb.trace.token_count, emb.trace.d_model);
        for (size_t k = 0; k < p.embedding.size(); ++k)
            p.embedding.data[k] = static_cast<double>(emb.trace.states[k]);
        const auto* rec = corpus().find(rep_caps.items[i].record_id);
        p.tokens = rec->tokens;
        if (static_cast<int>(p.tokens.size()) > p.rep.rows) p.tokens.resize(p.rep.rows);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

AttackRunResult run_attack(ExperimentContext& ctx, const TapPoint& tap,
                           const PurifierConfig& purifier_cfg) {
    const auto& cfg = ctx.config();
    auto victim = ctx.victim();
    const int d = victim->config().d_model;

    AttackerConfig acfg = cfg.attacker;
    acfg.vocab_size = victim->config().vocab_size;
    acfg.max_seq_len = victim->config().max_seq_len;
    acfg.seed = cfg.seed;
    PurifierConfig pcfg = purifier_cfg;
    AttackerModel attacker(acfg, pcfg, d, d, victim->model_id());

    AttackRunResult res;
    // Step 1: purifier pretraining on attacker-owned aux data.
    auto pairs = ctx.purifier_pairs(tap);
    res.step1 = pretrain_purifier(attacker.purifier(), pairs, cfg.recipe.step1.epochs,
                                  cfg.recipe.step1.lr, acfg.vocab_size);

    const auto& train_caps = ctx.captures(tap, Split::train);
    const auto& val_caps = ctx.captures(tap, Split::val);
    res.step2 = train_attacker(attacker, train_caps, val_caps, ctx.corpus(), cfg.recipe);
    if (cfg.run_step3 && cfg.recipe.step3.epochs > 0)
        res.step3 = joint_finetune(attacker, train_caps, val_caps, ctx.corpus(), cfg.recipe);

    // Invert the held-out test captures and score them.
    const auto& test_caps = ctx.captures(tap, Split::test);
    for (const auto& item : test_caps.items) {
        const auto fr = deserialize_frame(item.frame_bytes);
        const auto* rec = ctx.corpus().find(item.record_id);
        RepresentationFrame frame{test_caps.model_id, fr.trace};
        res.inversions.push_back(
            {item.record_id, rec->text, attacker.invert(frame, ctx.corpus().vocab)});
    }
    SentenceEmbedder emb = cfg.embedder == "victim_embedding"
                               ? victim_embedding_embedder(victim)
                               : token_count_embedder(ctx.corpus().vocab.size());
    res.report = evaluate_run(res.inversions, ctx.corpus().vocab, emb);
    return res;
}

std::vector<SweepRow> cmd_sublayer_sweep(ExperimentContext& ctx, const std::vector<int>& blocks) {
    std::vector<SweepRow> rows;
    for (int b : blocks) {
        for (auto pos : {TapPosition::attention_out, TapPosition::ffn_out, TapPosition::block_out}) {
            const TapPoint tap{b, pos};
            auto res = run_attack(ctx, tap, ctx.config().purifier);
            rows.push_back({tap_position_name(pos), tap, res.report.rouge_l, res.report.bleu,
                            res.report.cos_sim});
        }
    }
    return rows;
}

std::vector<SweepRow> cmd_depth_sweep(ExperimentContext& ctx) {
    std::vector<SweepRow> rows;
    for (int b = 0; b < ctx.victim()->config().n_blocks; ++b) {
        const TapPoint tap{b, TapPosition::block_out};
        auto res = run_attack(ctx, tap, ctx.config().purifier);
        rows.push_back({"block" + std::to_string(b), tap, res.report.rouge_l, res.report.bleu,
                        res.report.cos_sim});
    }
    return rows;
}

std::vector<SweepRow> cmd_purifier_ablation(ExperimentContext& ctx, const TapPoint& tap) {
    std::vector<SweepRow> rows;
    for (auto v : {PurifierVariant::none, PurifierVariant::linear_projection,
                   PurifierVariant::linear_with_tester, PurifierVariant::autoencoder}) {
        PurifierConfig pc = ctx.config().purifier;
        pc.variant = v;
        auto res = run_attack(ctx, tap, pc);
        rows.push_back({purifier_variant_name(v), tap, res.report.rouge_l, res.report.bleu,
                        res.report.cos_sim});
    }
    return rows;
}

std::vector<MIEstimate> cmd_mi_scan(ExperimentContext& ctx) {
    InfoPlaneConfig ic;
    ic.binning = ctx.config().binning;
    ic.sample_mode = ctx.config().mi_sample_mode;
    auto records = ctx.corpus().slice(Split::test);
    return information_plane(*ctx.victim(), records, ctx.config().taps, ic);
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream ss;
    ss.precision(12);
    ss << "label,block_index,position,rouge_l,bleu,cos_sim\n";
    for (const auto& r : rows)
        ss << r.label << "," << r.tap.block_index << "," << tap_position_name(r.tap.position)
           << "," << r.rouge_l << "," << r.bleu << "," << r.cos_sim << "\n";
    return ss.str();
}

}  // namespace sli
