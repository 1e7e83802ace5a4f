#include "sli/proto/session.hpp"

#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cstring>
#include <thread>

namespace sli {

namespace {

Mat serve_frame(const ServerPart& server, const std::vector<uint8_t>& frame_bytes) {
    const auto fr = deserialize_frame(frame_bytes);
    if (fr.model_id != server.model_id()) throw FrameError("session: model id mismatch");
    Mat states(fr.trace.token_count, fr.trace.d_model);
    for (size_t i = 0; i < states.size(); ++i)
        states.data[i] = static_cast<double>(fr.trace.states[i]);
    return server.forward(states);
}

void send_all(int fd, const void* buf, size_t len) {
    const char* p = static_cast<const char*>(buf);
    while (len > 0) {
        const ssize_t n = ::send(fd, p, len, 0);
        if (n <= 0) throw TransportError("socket send failed");
        p += n;
        len -= static_cast<size_t>(n);
    }
}

void recv_all(int fd, void* buf, size_t len) {
    char* p = static_cast<char*>(buf);
    while (len > 0) {
        const ssize_t n = ::recv(fd, p, len, 0);
        if (n <= 0) throw TransportError("socket recv failed or connection closed");
        p += n;
        len -= static_cast<size_t>(n);
    }
}

Mat socket_session(const ServerPart& server, const std::vector<uint8_t>& frame_bytes) {
    // Single-session unix-domain transport: u64 length + frame, reply
    // u32 rows, u32 cols, row-major doubles.
    const std::string path =
        "/tmp/sli_session_" + std::to_string(::getpid()) + "_" +
        std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    ::unlink(path.c_str());
    const int listener = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (listener < 0) throw TransportError("cannot create socket");
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    std::strncpy(addr.sun_path, path.c_str(), sizeof(addr.sun_path) - 1);
    if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(listener, 1) != 0) {
        ::close(listener);
        throw TransportError("cannot bind/listen on " + path);
    }

    std::exception_ptr server_error;
    std::thread server_thread([&] {
        try {
            const int conn = ::accept(listener, nullptr, nullptr);
            if (conn < 0) throw TransportError("accept failed");
            uint64_t len = 0;
            recv_all(conn, &len, 8);
            std::vector<uint8_t> bytes(len);
            recv_all(conn, bytes.data(), len);
            const Mat logits = serve_frame(server, bytes);
            const uint32_t rows = static_cast<uint32_t>(logits.rows);
            const uint32_t cols = static_cast<uint32_t>(logits.cols);
            send_all(conn, &rows, 4);
            send_all(conn, &cols, 4);
            send_all(conn, logits.data.data(), logits.size() * sizeof(double));
            ::close(conn);
        } catch (...) {
            server_error = std::current_exception();
        }
    });

    Mat logits;
    try {
        const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
        if (fd < 0) throw TransportError("cannot create client socket");
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
            ::close(fd);
            throw TransportError("cannot connect to " + path);
        }
        const uint64_t len = frame_bytes.size();
        send_all(fd, &len, 8);
        send_all(fd, frame_bytes.data(), frame_bytes.size());
        uint32_t rows = 0, cols = 0;
        recv_all(fd, &rows, 4);
        recv_all(fd, &cols, 4);
        logits = Mat(static_cast<int>(rows), static_cast<int>(cols));
        recv_all(fd, logits.data.data(), logits.size() * sizeof(double));
        ::close(fd);
    } catch (...) {
        server_thread.join();
        ::close(listener);
        ::unlink(path.c_str());
        throw;
    }
    server_thread.join();
    ::close(listener);
    ::unlink(path.c_str());
    if (server_error) std::rethrow_exception(server_error);
    return logits;
}

}  // namespace

Mat run_session(const ClientPart& client, const ServerPart& server,
                const std::vector<int>& tokens, Transport transport, SessionLog* log) {
    if (client.tap().str() != server.tap().str())
        throw std::invalid_argument("client and server come from different splits");
    const auto trace = client.capture(tokens, "");
    // The device stamps its own model id; the server verifies it against its
    // half before running the tail of the network.
    const auto frame_bytes = serialize_frame(trace, client.model_id());
    if (log) {
        log->frames_sent += 1;
        log->forwards += 1;
    }
    if (transport == Transport::in_process) return serve_frame(server, frame_bytes);
    return socket_session(server, frame_bytes);
}

void AttackKnowledge::validate() const {
    if (level == KnowledgeLevel::white_box && !server_arch_known)
        throw std::invalid_argument("white_box implies server_arch_known");
}

AttackKnowledge AttackKnowledge::black_box(bool arch_known) {
    AttackKnowledge k;
    k.level = KnowledgeLevel::black_box;
    k.server_arch_known = arch_known;
    return k;
}

AttackKnowledge AttackKnowledge::white_box() {
    AttackKnowledge k;
    k.level = KnowledgeLevel::white_box;
    k.server_arch_known = true;
    return k;
}

ServerView::ServerView(std::shared_ptr<const VictimModel> model, TapPoint tap,
                       AttackKnowledge knowledge)
    : model_(std::move(model)), tap_(tap), knowledge_(knowledge) {
    knowledge_.validate();
}

const ModelConfig& ServerView::architecture() const {
    if (!knowledge_.server_arch_known)
        throw PolicyError("server architecture is not part of the declared attack knowledge");
    return model_->config();
}

std::vector<NodePtr> ServerView::parameters() const {
    if (knowledge_.level != KnowledgeLevel::white_box)
        throw PolicyError("server parameters are not accessible under black_box knowledge");
    return model_->parameters();
}

}  // namespace sli
