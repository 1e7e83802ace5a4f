#pragma once

#include "sli/proto/frame.hpp"

namespace sli {

enum class Transport { in_process, local_socket };

struct TransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SessionLog {
    long frames_sent = 0;
    long forwards = 0;
};

// One device -> server forward over the chosen transport. Both transports
// push the representation through the same serialized frame, so logits are
// bitwise identical between them.
Mat run_session(const ClientPart& client, const ServerPart& server,
                const std::vector<int>& tokens, Transport transport,
                SessionLog* log = nullptr);

// Attacker knowledge levels over the server side of the split.
enum class KnowledgeLevel { black_box, white_box };

struct AttackKnowledge {
    KnowledgeLevel level = KnowledgeLevel::black_box;
    bool server_arch_known = false;
    bool server_layer_traces = false;

    void validate() const;
    static AttackKnowledge black_box(bool arch_known = true);
    static AttackKnowledge white_box();
};

struct PolicyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Gatekeeper in front of a ServerPart: what an attacker may read depends on
// the declared knowledge level. Parameter access under black_box raises a
// PolicyError.
class ServerView {
  public:
    ServerView(std::shared_ptr<const VictimModel> model, TapPoint tap, AttackKnowledge knowledge);

    const ModelConfig& architecture() const;           // needs server_arch_known
    std::vector<NodePtr> parameters() const;           // needs white_box
    const AttackKnowledge& knowledge() const { return knowledge_; }

  private:
    std::shared_ptr<const VictimModel> model_;
    TapPoint tap_;
    AttackKnowledge knowledge_;
};

}  // namespace sli
