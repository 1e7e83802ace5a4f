#pragma once

#include <optional>

#include "sli/attack/attacker.hpp"
#include "sli/eval/metrics.hpp"
#include "sli/mi/mi.hpp"

namespace sli {

// Exit codes shared by the CLI.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitTrainingDivergence = 3;
inline constexpr int kExitMissingArtifact = 4;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MissingArtifact : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CorpusSpec {
    std::string kind = "synth";  // synth | file
    int n = 5000;
    uint64_t seed = 7;
    std::string path;            // file kind
    double train_ratio = 0.82, val_ratio = 0.09, test_ratio = 0.09;
    double aux_fraction = 0.1;
};

struct RunConfig {
    uint64_t seed = 7;
    std::string out_dir = "out";
    CorpusSpec corpus;
    ModelConfig victim;
    std::string victim_preset = "toy";  // toy | case1
    int victim_epochs = 6;
    double victim_lr = 1e-3;
    std::vector<TapPoint> taps{TapPoint{0, TapPosition::block_out}};
    PurifierConfig purifier;
    AttackerConfig attacker;
    TrainRecipe recipe;
    BinningConfig binning;
    SampleMode mi_sample_mode = SampleMode::per_timestep;
    std::string embedder = "token_count";  // token_count | victim_embedding
    bool run_step3 = true;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::string& path);
    Hash128 config_hash() const;
};

struct RunManifest {
    std::string config_hash;
    std::string started_at, finished_at;
    std::string provenance;
    std::vector<std::string> artifacts;
    nlohmann::json config;

    void add(const std::string& path);
    void save(const std::string& path) const;
    static RunManifest load(const std::string& path);
};

// Shared experiment state: corpus, trained victim, capture cache.
class ExperimentContext {
  public:
    explicit ExperimentContext(RunConfig config);

    const RunConfig& config() const { return cfg_; }
    Corpus& corpus();
    std::shared_ptr<VictimModel> victim();  // trains (or loads) on first use
    const CaptureSet& captures(const TapPoint& tap, Split split);
    std::vector<PurifierPair> purifier_pairs(const TapPoint& tap);

    void set_victim(std::shared_ptr<VictimModel> v) { victim_ = std::move(v); }

  private:
    RunConfig cfg_;
    std::optional<Corpus> corpus_;
    std::shared_ptr<VictimModel> victim_;
    std::map<std::string, CaptureSet> capture_cache_;
};

struct AttackRunResult {
    EvalReport report;
    PurifierPretrainReport step1;
    Step2Report step2;
    std::optional<Step3Report> step3;
    std::vector<InversionTriple> inversions;
};

// Full three-step attack at one tap, evaluated on the test split.
AttackRunResult run_attack(ExperimentContext& ctx, const TapPoint& tap,
                           const PurifierConfig& purifier_cfg);

struct SweepRow {
    std::string label;
    TapPoint tap;
    double rouge_l = 0.0, bleu = 0.0, cos_sim = 0.0;
};

std::vector<SweepRow> cmd_sublayer_sweep(ExperimentContext& ctx, const std::vector<int>& blocks);
std::vector<SweepRow> cmd_depth_sweep(ExperimentContext& ctx);
std::vector<SweepRow> cmd_purifier_ablation(ExperimentContext& ctx, const TapPoint& tap);
std::vector<MIEstimate> cmd_mi_scan(ExperimentContext& ctx);

std::string sweep_csv(const std::vector<SweepRow>& rows);

std::string timestamp_utc();

}  // namespace sli
