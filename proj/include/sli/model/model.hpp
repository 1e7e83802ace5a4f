#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sli/core/checkpoint.hpp"
#include "sli/core/tape.hpp"
#include "sli/corpus/corpus.hpp"

namespace sli {

enum class Arch { decoder_only, encoder_decoder };

struct ModelConfig {
    Arch arch = Arch::decoder_only;
    int n_blocks = 4;
    int d_model = 64;
    int n_heads = 4;
    int d_ff = 256;
    int vocab_size = 0;
    int max_seq_len = 32;
    uint64_t seed = 0;
    // encoder_decoder only: depth of the MLP head stacked on the encoder
    int mlp_head_layers = 4;

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);

    // Encoder + MLP-head preset tapped right after the first block.
    static ModelConfig case1(int vocab_size, uint64_t seed);
};

enum class TapPosition { embedding, attention_out, ffn_out, block_out };

std::string tap_position_name(TapPosition p);
TapPosition tap_position_from_name(const std::string& s);

struct TapPoint {
    int block_index = 0;
    TapPosition position = TapPosition::block_out;

    std::string str() const;
    static TapPoint parse(const std::string& s);  // "BLOCK:POSITION"
};

// Per-timestep hidden states captured at a tap. Stored as f32, matching the
// wire and checkpoint precision.
struct RepresentationTrace {
    TapPoint tap;
    int token_count = 0;
    int d_model = 0;
    std::vector<float> states;  // row-major [T x d_model]
    std::string source_id;

    float at(int t, int j) const { return states[static_cast<size_t>(t) * d_model + j]; }
};

struct TrainingDivergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BlockParams {
    NodePtr ln1_g, ln1_b, wq, wk, wv, wo;
    NodePtr ln2_g, ln2_b, w_ff1, b_ff1, w_ff2, b_ff2;
    std::vector<NodePtr> all() const;
};

class VictimModel {
  public:
    explicit VictimModel(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    std::vector<NodePtr> parameters() const;
    long param_scalar_count() const;
    Hash128 model_id() const;

    // Teacher-forced forward over the full sequence. When `tap` is set, the
    // hidden state at the tap is copied out; taps are pure observers.
    NodePtr forward(Tape& tape, const std::vector<int>& tokens,
                    const std::optional<TapPoint>& tap = std::nullopt,
                    RepresentationTrace* trace_out = nullptr) const;

    // Double-precision logits for inference.
    Mat logits(const std::vector<int>& tokens) const;
    std::pair<RepresentationTrace, Mat> forward_with_tap(const std::vector<int>& tokens,
                                                         const TapPoint& tap) const;

    void validate_tap(const TapPoint& tap) const;

    double train(const Corpus& corpus, int epochs, double lr, int log_every = 0);
    double eval_ce(const std::vector<const TextRecord*>& records) const;  // mean per-token CE

    void snap_parameters();  // round all params through f32
    Checkpoint to_checkpoint() const;
    static VictimModel from_checkpoint(const Checkpoint& ck);
    void save(const std::string& path) const;
    static VictimModel load(const std::string& path);

    // Internals shared with the split parts.
    NodePtr tok_emb, pos_emb, lnf_g, lnf_b;
    std::vector<BlockParams> blocks;
    std::vector<NodePtr> mlp_head_w, mlp_head_b;  // encoder_decoder only

  private:
    ModelConfig cfg_;
    NodePtr run_block(Tape& tape, const BlockParams& bp, NodePtr x, bool causal,
                      NodePtr* attn_out) const;
    NodePtr head(Tape& tape, NodePtr h) const;
    friend class ClientPart;
    friend class ServerPart;
};

// Device-side half: embeddings plus the blocks up to (and including part of)
// the tapped block. Produces the representation that crosses the wire.
class ClientPart {
  public:
    ClientPart(std::shared_ptr<const VictimModel> model, TapPoint tap);
    Mat forward(const std::vector<int>& tokens) const;          // [T x d_model], double
    RepresentationTrace capture(const std::vector<int>& tokens,
                                const std::string& source_id) const;  // f32 trace
    long param_scalar_count() const;
    const TapPoint& tap() const { return tap_; }
    Hash128 model_id() const { return model_->model_id(); }

  private:
    std::shared_ptr<const VictimModel> model_;
    TapPoint tap_;
};

// Server-side half: the remaining computation from the tap to the logits.
class ServerPart {
  public:
    ServerPart(std::shared_ptr<const VictimModel> model, TapPoint tap);
    Mat forward(const Mat& tap_states) const;  // [T x vocab] logits
    long param_scalar_count() const;
    const TapPoint& tap() const { return tap_; }
    const ModelConfig& config() const { return model_->config(); }
    Hash128 model_id() const { return model_->model_id(); }

  private:
    std::shared_ptr<const VictimModel> model_;
    TapPoint tap_;
};

std::pair<ClientPart, ServerPart> split(std::shared_ptr<const VictimModel> model,
                                        const TapPoint& tap);

}  // namespace sli
