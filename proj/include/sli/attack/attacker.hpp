#pragma once

#include <optional>

#include "sli/proto/capture.hpp"
#include "sli/proto/session.hpp"

namespace sli {

enum class PurifierVariant { none, linear_projection, linear_with_tester, autoencoder };

std::string purifier_variant_name(PurifierVariant v);
PurifierVariant purifier_variant_from_name(const std::string& s);

struct PurifierConfig {
    PurifierVariant variant = PurifierVariant::linear_projection;
    int bottleneck_dim = 0;       // autoencoder only
    double tester_weight = 0.1;   // linear_with_tester only

    nlohmann::json to_json() const;
    static PurifierConfig from_json(const nlohmann::json& j);
};

// Pretraining data for the purification stage: representation rows captured
// at the tap paired with the victim's embedding-tap rows for the same
// records (attacker-owned aux data pushed through the device side).
struct PurifierPair {
    Mat rep;        // [T x d_rep]
    Mat embedding;  // [T x d_embed]
    std::vector<int> tokens;
};

// First attack stage: maps a tapped representation toward the victim's
// embedding space. `none` is the identity and requires matching dims.
class Purifier {
  public:
    Purifier(PurifierConfig cfg, int d_in, int d_out, uint64_t seed);

    NodePtr apply(Tape& tape, const NodePtr& x) const;
    Mat apply(const Mat& x) const;
    std::vector<NodePtr> parameters() const;  // trainable (tester probe excluded)
    const PurifierConfig& config() const { return cfg_; }
    int d_in() const { return d_in_; }
    int d_out() const { return d_out_; }

    // Frozen probe used by the linear_with_tester variant.
    void set_tester(NodePtr w, NodePtr b);
    NodePtr tester_logits(Tape& tape, const NodePtr& purified) const;
    bool has_tester() const { return tester_w_ != nullptr; }
    NodePtr tester_w_, tester_b_;

    std::vector<std::pair<std::string, Mat>> named_tensors(const std::string& prefix) const;
    void load_tensors(const Checkpoint& ck, const std::string& prefix);

  private:
    PurifierConfig cfg_;
    int d_in_, d_out_;
    NodePtr w1_, b1_, w2_, b2_;
};

struct PurifierPretrainReport {
    double heldout_mse = 0.0;
    double baseline_variance = 0.0;  // constant predictor (per-dim mean) MSE
    double train_variance = 0.0;     // training-part embedding variance
    bool flagged = false;
};

// Step 1 of the training recipe. Returns the held-out reconstruction error
// next to the constant-predictor baseline it must beat.
PurifierPretrainReport pretrain_purifier(Purifier& purifier,
                                         const std::vector<PurifierPair>& aux_pairs,
                                         int epochs, double lr, int vocab_size);

struct StageConfig {
    int epochs = 6;
    double lr = 1e-3;
};

struct TrainRecipe {
    StageConfig step1{8, 2e-3};
    StageConfig step2{6, 1e-3};
    StageConfig step3{2, 3e-4};
    int ppl_eval_every = 500;
    double lm_loss_weight = 0.1;  // weight of the fluency (plain LM) term in step 2

    nlohmann::json to_json() const;
    static TrainRecipe from_json(const nlohmann::json& j);
};

struct AttackerConfig {
    int n_blocks = 2;
    int d_model = 64;
    int n_heads = 4;
    int d_ff = 256;
    int vocab_size = 0;
    int max_seq_len = 32;
    int max_prefix = 32;
    uint64_t seed = 1;

    nlohmann::json to_json() const;
    static AttackerConfig from_json(const nlohmann::json& j);
};

enum class DecodeMode { greedy, beam, sample };

struct DecodeConfig {
    DecodeMode mode = DecodeMode::greedy;
    int beam_width = 4;
    double temperature = 1.0;
    uint64_t sample_seed = 0;
};

struct PplLogEntry {
    long step = 0;
    double mean_ce = 0.0;
    double ppl = 0.0;
};

// The two-stage inversion model: purifier -> dimension mapper -> generative
// decoder conditioned on the purified trace via per-timestep prefix vectors.
class AttackerModel {
  public:
    AttackerModel(AttackerConfig cfg, PurifierConfig pcfg, int d_rep, int d_embed,
                  const Hash128& victim_model_id,
                  AttackKnowledge knowledge = AttackKnowledge::black_box());

    const AttackerConfig& config() const { return cfg_; }
    Purifier& purifier() { return purifier_; }
    const Purifier& purifier() const { return purifier_; }
    const Hash128& victim_model_id() const { return victim_id_; }
    const AttackKnowledge& knowledge() const { return knowledge_; }

    std::vector<NodePtr> decoder_parameters() const;  // mapper + decoder
    std::vector<NodePtr> all_parameters() const;      // purifier + mapper + decoder

    // Teacher-forced loss on one capture. `through_purifier` routes gradients
    // into the purification stage (step 3); otherwise the purified prefix is
    // treated as a constant (step 2).
    struct LossResult {
        NodePtr loss;
        std::vector<double> nll;  // per-target-token
    };
    LossResult sequence_loss(Tape& tape, const RepresentationTrace& trace,
                             const std::vector<int>& tokens, bool through_purifier) const;
    // Plain language-model loss of the decoder on text, no prefix.
    LossResult lm_loss(Tape& tape, const std::vector<int>& tokens) const;

    double eval_mean_ce(const CaptureSet& captures, const Corpus& corpus, Split split) const;

    std::string invert(const RepresentationFrame& frame, const Vocab& vocab,
                       const DecodeConfig& decode = {}) const;

    // Components reachable from the attacker's computation graph; used by the
    // knowledge-hygiene audit.
    std::vector<std::string> computation_graph_components() const;

    void snap_parameters();
    Checkpoint to_checkpoint(const TrainRecipe& recipe) const;
    static AttackerModel from_checkpoint(const Checkpoint& ck);

  private:
    AttackerConfig cfg_;
    Purifier purifier_;
    AttackKnowledge knowledge_;
    Hash128 victim_id_;
    NodePtr mapper_w_, mapper_b_;
    NodePtr tok_emb_, pos_emb_, lnf_g_, lnf_b_;
    std::vector<BlockParams> blocks_;

    NodePtr decode_logits(Tape& tape, const Mat& purified_prefix,
                          const NodePtr& purified_prefix_node,
                          const std::vector<int>& input_tokens) const;
    Mat purified_prefix(const RepresentationTrace& trace) const;
};

double perplexity(double mean_ce);

struct Step2Report {
    double val_ce_before = 0.0;
    double val_ce_after = 0.0;
    std::vector<PplLogEntry> ppl_log;
};

struct Step3Report {
    double val_ce_step2 = 0.0;
    double val_ce_step3 = 0.0;
    bool reverted = false;
    double purifier_delta = 0.0, mapper_delta = 0.0, decoder_delta = 0.0;
};

// Step 2: purifier frozen, decoder + mapper trained with the teacher-forced
// sequence loss plus the weighted fluency term.
Step2Report train_attacker(AttackerModel& attacker, const CaptureSet& train_captures,
                           const CaptureSet& val_captures, const Corpus& corpus,
                           const TrainRecipe& recipe);

// Step 3: all three submodules trained jointly; reverts to the step-2
// parameters if validation CE regresses by more than 1%.
Step3Report joint_finetune(AttackerModel& attacker, const CaptureSet& train_captures,
                           const CaptureSet& val_captures, const Corpus& corpus,
                           const TrainRecipe& recipe);

}  // namespace sli
