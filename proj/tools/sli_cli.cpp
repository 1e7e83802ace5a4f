// Experiment CLI: corpus synthesis, victim training, capture, the inversion
// attack, metric reports, and the sweep recipes.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "sli/run/runner.hpp"

namespace fs = std::filesystem;
using namespace sli;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::string tap = "0:block_out";
    std::string purifier;
    std::string victim_path;
    uint64_t seed = 0;
    bool seed_set = false;
};

RunConfig load_config(const CommonOpts& opts) {
    RunConfig cfg;
    if (!opts.config_path.empty()) {
        std::ifstream f(opts.config_path);
        if (!f) throw MissingArtifact("cannot open config: " + opts.config_path);
        nlohmann::json j;
        try {
            f >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config parse error: ") + e.what());
        }
        // A run manifest embeds its config; accept either file.
        cfg = RunConfig::from_json(j.contains("config_hash") ? j.at("config") : j);
    }
    if (opts.seed_set) {
        cfg.seed = opts.seed;
        cfg.corpus.seed = opts.seed;
    }
    if (const char* env_out = std::getenv("SLI_OUT_DIR")) cfg.out_dir = env_out;
    if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;  // flag beats environment
    if (!opts.purifier.empty()) cfg.purifier.variant = purifier_variant_from_name(opts.purifier);
    return cfg;
}

RunManifest begin_manifest(const RunConfig& cfg) {
    RunManifest m;
    m.config_hash = hash_hex(cfg.config_hash());
    m.started_at = timestamp_utc();
    m.provenance = "sli 1.0";
    m.config = cfg.to_json();
    fs::create_directories(cfg.out_dir);
    return m;
}

void finish_manifest(RunManifest& m, const RunConfig& cfg) {
    m.finished_at = timestamp_utc();
    const std::string path = (fs::path(cfg.out_dir) / "manifest.json").string();
    m.save(path);
}

void write_text(RunManifest& m, const RunConfig& cfg, const std::string& name,
                const std::string& content) {
    const std::string path = (fs::path(cfg.out_dir) / name).string();
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << content;
    m.add(path);
}

std::shared_ptr<VictimModel> victim_for(ExperimentContext& ctx, const CommonOpts& opts,
                                        bool require_checkpoint) {
    if (!opts.victim_path.empty()) {
        if (!fs::exists(opts.victim_path))
            throw MissingArtifact("victim checkpoint not found: " + opts.victim_path);
        auto v = std::make_shared<VictimModel>(VictimModel::load(opts.victim_path));
        ctx.set_victim(v);
        return v;
    }
    if (require_checkpoint)
        throw MissingArtifact("this command needs --victim CHECKPOINT");
    return ctx.victim();
}

int cmd_synth_data(const CommonOpts& opts) {
    RunConfig cfg = load_config(opts);
    auto m = begin_manifest(cfg);
    ExperimentContext ctx(cfg);
    auto& corpus = ctx.corpus();
    const fs::path out(cfg.out_dir);
    save_corpus_lines(corpus, (out / "corpus.txt").string());
    corpus.vocab.save((out / "vocab.txt").string());
    save_split_manifest(corpus, (out / "splits.tsv").string());
    for (const char* f : {"corpus.txt", "vocab.txt", "splits.tsv"}) m.add((out / f).string());
    finish_manifest(m, cfg);
    std::cout << "records=" << corpus.records.size() << " vocab=" << corpus.vocab.size() << "\n";
    return kExitOk;
}

int cmd_train_victim(const CommonOpts& opts) {
    RunConfig cfg = load_config(opts);
    auto m = begin_manifest(cfg);
    ExperimentContext ctx(cfg);
    auto victim = ctx.victim();
    const double val_ce = victim->eval_ce(ctx.corpus().slice(Split::val));
    const std::string ck = (fs::path(cfg.out_dir) / "victim.slck").string();
    victim->save(ck);
    m.add(ck);
    finish_manifest(m, cfg);
    std::cout << "val_ce_per_token=" << val_ce
              << " uniform_bound=" << std::log(victim->config().vocab_size) << "\n";
    return kExitOk;
}

int cmd_capture(const CommonOpts& opts) {
    RunConfig cfg = load_config(opts);
    auto m = begin_manifest(cfg);
    ExperimentContext ctx(cfg);
    victim_for(ctx, opts, true);
    const TapPoint tap = TapPoint::parse(opts.tap);
    for (Split s : {Split::train, Split::val, Split::test, Split::aux}) {
        const auto& caps = ctx.captures(tap, s);
        const std::string dir =
            (fs::path(cfg.out_dir) / ("captures_" + tap.str() + "_" + split_name(s))).string();
        caps.write_dir(dir);
        m.add(dir);
        std::cout << split_name(s) << ": " << caps.items.size() << " frames, "
                  << caps.payload_bytes() << " bytes\n";
    }
    finish_manifest(m, cfg);
    return kExitOk;
}

int cmd_attack_train(const CommonOpts& opts) {
    RunConfig cfg = load_config(opts);
    auto m = begin_manifest(cfg);
    ExperimentContext ctx(cfg);
    if (!opts.victim_path.empty()) victim_for(ctx, opts, false);
    const TapPoint tap = TapPoint::parse(opts.tap);
    auto res = run_attack(ctx, tap, cfg.purifier);
    write_text(m, cfg, "report.csv", report_csv(res.report));
    const std::string inv = (fs::path(cfg.out_dir) / "inversions.tsv").string();
    write_inversions(res.inversions, inv, true);
    m.add(inv);
    finish_manifest(m, cfg);
    std::cout << "rouge_l=" << res.report.rouge_l << " bleu=" << res.report.bleu
              << " cos_sim=" << res.report.cos_sim << " val_ppl=" << perplexity(res.step2.val_ce_after)
              << "\n";
    return kExitOk;
}

int cmd_attack_eval(const CommonOpts& opts, const std::string& inversions_path) {
    RunConfig cfg = load_config(opts);
    auto m = begin_manifest(cfg);
    ExperimentContext ctx(cfg);
    if (!fs::exists(inversions_path))
        throw MissingArtifact("inversions file not found: " + inversions_path);
    auto triples = load_inversions(inversions_path);
    SentenceEmbedder emb = cfg.embedder == "victim_embedding"
                               ? victim_embedding_embedder(victim_for(ctx, opts, false))
                               : token_count_embedder(ctx.corpus().vocab.size());
    auto rep = evaluate_run(triples, ctx.corpus().vocab, emb);
    write_text(m, cfg, "report.csv", report_csv(rep));
    finish_manifest(m, cfg);
    std::cout << "rouge_l=" << rep.rouge_l << " bleu=" << rep.bleu << " cos_sim=" << rep.cos_sim
              << " n_pairs=" << rep.n_pairs << "\n";
    return kExitOk;
}

int cmd_mi_scan(const CommonOpts& opts) {
    RunConfig cfg = load_config(opts);
    auto m = begin_manifest(cfg);
    ExperimentContext ctx(cfg);
    if (!opts.victim_path.empty()) victim_for(ctx, opts, false);
    auto est = cmd_mi_scan(ctx);
    write_text(m, cfg, "mi.csv", info_plane_csv(est));
    finish_manifest(m, cfg);
    std::cout << info_plane_csv(est);
    return kExitOk;
}

int cmd_sweep(const CommonOpts& opts, const std::string& which) {
    RunConfig cfg = load_config(opts);
    auto m = begin_manifest(cfg);
    ExperimentContext ctx(cfg);
    if (!opts.victim_path.empty()) victim_for(ctx, opts, false);
    std::vector<SweepRow> rows;
    if (which == "sublayer") {
        std::vector<int> blocks;
        for (const auto& t : cfg.taps) blocks.push_back(t.block_index);
        if (blocks.empty()) blocks.push_back(0);
        std::sort(blocks.begin(), blocks.end());
        blocks.erase(std::unique(blocks.begin(), blocks.end()), blocks.end());
        rows = cmd_sublayer_sweep(ctx, blocks);
    } else if (which == "depth") {
        rows = cmd_depth_sweep(ctx);
    } else {
        rows = cmd_purifier_ablation(ctx, TapPoint::parse(opts.tap));
    }
    write_text(m, cfg, which + "_sweep.csv", sweep_csv(rows));
    finish_manifest(m, cfg);
    std::cout << sweep_csv(rows);
    return kExitOk;
}

int cmd_report(const CommonOpts& opts, const std::string& report_path) {
    if (!fs::exists(report_path)) throw MissingArtifact("report not found: " + report_path);
    std::ifstream f(report_path);
    std::cout << f.rdbuf();
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"split-learning inversion lab"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string inversions_path, report_path;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config_path, "run config (or manifest) JSON");
        auto* seed = sub->add_option("--seed", opts.seed, "run seed override");
        seed->each([&](const std::string&) { opts.seed_set = true; });
        sub->add_option("--out", opts.out_dir, "output directory");
        sub->add_option("--tap", opts.tap, "tap point BLOCK:POSITION");
        sub->add_option("--purifier", opts.purifier, "purifier variant");
        sub->add_option("--victim", opts.victim_path, "victim checkpoint path");
    };

    auto* synth = app.add_subcommand("synth-data", "generate a synthetic corpus");
    auto* trainv = app.add_subcommand("train-victim", "train the victim model");
    auto* capture = app.add_subcommand("capture", "capture representation frames at a tap");
    auto* atrain = app.add_subcommand("attack-train", "run the full three-step attack");
    auto* aeval = app.add_subcommand("attack-eval", "score an inversions file");
    aeval->add_option("--inversions", inversions_path, "inversions.tsv path")->required();
    auto* miscan = app.add_subcommand("mi-scan", "information-plane scan over taps");
    auto* subl = app.add_subcommand("sublayer-sweep", "attack per sublayer tap");
    auto* depth = app.add_subcommand("depth-sweep", "attack per block depth");
    auto* ablat = app.add_subcommand("purifier-ablation", "attack per purifier variant");
    auto* report = app.add_subcommand("report", "print a stored report");
    report->add_option("--report", report_path, "report.csv path")->required();
    for (auto* s : {synth, trainv, capture, atrain, aeval, miscan, subl, depth, ablat})
        add_common(s);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth_data(opts);
        if (trainv->parsed()) return cmd_train_victim(opts);
        if (capture->parsed()) return cmd_capture(opts);
        if (atrain->parsed()) return cmd_attack_train(opts);
        if (aeval->parsed()) return cmd_attack_eval(opts, inversions_path);
        if (miscan->parsed()) return cmd_mi_scan(opts);
        if (subl->parsed()) return cmd_sweep(opts, "sublayer");
        if (depth->parsed()) return cmd_sweep(opts, "depth");
        if (ablat->parsed()) return cmd_sweep(opts, "ablation");
        if (report->parsed()) return cmd_report(opts, report_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const TrainingDivergence& e) {
        std::cerr << "training divergence: " << e.what() << "\n";
        return kExitTrainingDivergence;
    } catch (const MissingArtifact& e) {
        std::cerr << "missing artifact: " << e.what() << "\n";
        return kExitMissingArtifact;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
