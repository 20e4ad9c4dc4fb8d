#pragma once

// Client side of the line-delimited JSON protocol spoken with an external
// denoiser process.
//
//   -> {"type":"hello","protocol":1,"vocab_size":K}
//   <- {"type":"hello","protocol":1,"vocab_size":K}
//   -> {"type":"denoise","tokens":[int|null,...],"mask_positions":[int,...]}
//   <- {"type":"logits","rows":[[float,...],...]}     rows in mask_positions order
//   <- {"type":"error","message":"..."}               on a rejected request

#include <chrono>
#include <memory>
#include <string>

#include "swd/core.h"
#include "swd/denoiser.h"

namespace swd {

inline constexpr int kProtocolVersion = 1;

/// A bidirectional byte stream carrying one JSON object per line. Owns its
/// file descriptors and, for spawned endpoints, the child process.
class ProtocolEndpoint {
public:
    /// Runs `command` through /bin/sh with its stdin/stdout attached.
    static std::unique_ptr<ProtocolEndpoint> spawn(const std::string& command);
    static std::unique_ptr<ProtocolEndpoint> connect_tcp(const std::string& host, int port);
    /// "tcp://host:port" or "tcp:host:port" connects; anything else is spawned.
    static std::unique_ptr<ProtocolEndpoint> open(const std::string& spec);

    ~ProtocolEndpoint();
    ProtocolEndpoint(const ProtocolEndpoint&) = delete;
    ProtocolEndpoint& operator=(const ProtocolEndpoint&) = delete;

    void set_timeout(std::chrono::milliseconds timeout) { timeout_ = timeout; }
    void send_line(const std::string& line);
    /// Throws TransportError on EOF or timeout.
    std::string read_line();

private:
    ProtocolEndpoint(int read_fd, int write_fd, int child_pid);

    int read_fd_ = -1;
    int write_fd_ = -1;
    int child_pid_ = -1;
    std::string buffer_;
    std::chrono::milliseconds timeout_{30000};
};

std::string hello_json(std::size_t vocab_size);
std::string denoise_request_json(const SequenceState& state);

/// Exchanges hello messages; throws TransportError on version or vocabulary
/// mismatch.
void handshake(ProtocolEndpoint& endpoint, std::size_t vocab_size);

/// Sends one denoise request for the masked positions of `state` and returns
/// the softmax of the returned logit rows.
ProbTable external_marginals(ProtocolEndpoint& endpoint, const SequenceState& state, std::size_t vocab_size);

/// Parses a logits reply into a ProbTable for `positions`. Exposed for tests.
ProbTable parse_logits_reply(const std::string& line, const std::vector<std::size_t>& positions,
                             std::size_t vocab_size);

class ExternalDenoiser final : public Denoiser {
public:
    /// Performs the handshake immediately.
    ExternalDenoiser(std::unique_ptr<ProtocolEndpoint> endpoint, std::size_t vocab_size);
    std::size_t vocab_size() const override { return vocab_size_; }
    ProbTable predict(const SequenceState& state) override;

private:
    std::unique_ptr<ProtocolEndpoint> endpoint_;
    std::size_t vocab_size_;
};

}  // namespace swd
