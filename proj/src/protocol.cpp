#include "swd/protocol.h"

#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <thread>

#include "json.hpp"

namespace swd {

using nlohmann::json;

namespace {

std::string errno_text() { return std::strerror(errno); }

}  // namespace

ProtocolEndpoint::ProtocolEndpoint(int read_fd, int write_fd, int child_pid)
    : read_fd_(read_fd), write_fd_(write_fd), child_pid_(child_pid) {}

ProtocolEndpoint::~ProtocolEndpoint() {
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    if (child_pid_ > 0) {
        // Closing stdin asks the child to exit; give it a moment before killing.
        int status = 0;
        for (int i = 0; i < 50; ++i) {
            if (::waitpid(child_pid_, &status, WNOHANG) == child_pid_) return;
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
        ::kill(child_pid_, SIGKILL);
        ::waitpid(child_pid_, &status, 0);
    }
}

std::unique_ptr<ProtocolEndpoint> ProtocolEndpoint::spawn(const std::string& command) {
    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0) throw TransportError("pipe: " + errno_text());
    if (::pipe(from_child) != 0) {
        ::close(to_child[0]);
        ::close(to_child[1]);
        throw TransportError("pipe: " + errno_text());
    }
    ::signal(SIGPIPE, SIG_IGN);
    const pid_t pid = ::fork();
    if (pid < 0) throw TransportError("fork: " + errno_text());
    if (pid == 0) {
        ::dup2(to_child[0], STDIN_FILENO);
        ::dup2(from_child[1], STDOUT_FILENO);
        ::close(to_child[0]);
        ::close(to_child[1]);
        ::close(from_child[0]);
        ::close(from_child[1]);
        ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    return std::unique_ptr<ProtocolEndpoint>(new ProtocolEndpoint(from_child[0], to_child[1], pid));
}

std::unique_ptr<ProtocolEndpoint> ProtocolEndpoint::connect_tcp(const std::string& host, int port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string service = std::to_string(port);
    if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0) {
        throw TransportError("cannot resolve " + host + ": " + ::gai_strerror(rc));
    }
    int fd = -1;
    for (addrinfo* p = res; p; p = p->ai_next) {
        fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
        if (fd < 0) continue;
        if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) break;
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw TransportError("cannot connect to " + host + ":" + service);
    ::signal(SIGPIPE, SIG_IGN);
    return std::unique_ptr<ProtocolEndpoint>(new ProtocolEndpoint(fd, fd, -1));
}

std::unique_ptr<ProtocolEndpoint> ProtocolEndpoint::open(const std::string& spec) {
    std::string rest;
    if (spec.rfind("tcp://", 0) == 0) {
        rest = spec.substr(6);
    } else if (spec.rfind("tcp:", 0) == 0) {
        rest = spec.substr(4);
    } else {
        return spawn(spec);
    }
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos) throw std::invalid_argument("tcp endpoint needs host:port");
    return connect_tcp(rest.substr(0, colon), std::stoi(rest.substr(colon + 1)));
}

void ProtocolEndpoint::send_line(const std::string& line) {
    std::string data = line;
    data += '\n';
    std::size_t off = 0;
    while (off < data.size()) {
        const ssize_t n = ::write(write_fd_, data.data() + off, data.size() - off);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw TransportError("write to denoiser endpoint failed: " + errno_text());
        }
        off += static_cast<std::size_t>(n);
    }
}

std::string ProtocolEndpoint::read_line() {
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    for (;;) {
        if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
            std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            return line;
        }
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) throw TransportError("timed out waiting for the denoiser endpoint");
        pollfd pfd{read_fd_, POLLIN, 0};
        const int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
        if (rc < 0) {
            if (errno == EINTR) continue;
            throw TransportError("poll failed: " + errno_text());
        }
        if (rc == 0) continue;
        char chunk[65536];
        const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw TransportError("read from denoiser endpoint failed: " + errno_text());
        }
        if (n == 0) throw TransportError("denoiser endpoint closed the connection");
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

// ---------------------------------------------------------------------------

std::string hello_json(std::size_t vocab_size) {
    return json{{"type", "hello"}, {"protocol", kProtocolVersion}, {"vocab_size", vocab_size}}.dump();
}

std::string denoise_request_json(const SequenceState& state) {
    json tokens = json::array();
    for (const auto& slot : state.tokens()) {
        if (slot) {
            tokens.push_back(slot->value);
        } else {
            tokens.push_back(nullptr);
        }
    }
    return json{{"type", "denoise"}, {"tokens", tokens}, {"mask_positions", state.masked()}}.dump();
}

namespace {

json parse_reply(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw TransportError(std::string("protocol violation: unparseable reply: ") + e.what());
    }
    if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
        throw TransportError("protocol violation: reply lacks a string 'type'");
    }
    if (j["type"] == "error") {
        const std::string msg = j.contains("message") && j["message"].is_string() ? j["message"].get<std::string>() : "";
        throw TransportError("denoiser reported an error: " + msg);
    }
    return j;
}

}  // namespace

void handshake(ProtocolEndpoint& endpoint, std::size_t vocab_size) {
    endpoint.send_line(hello_json(vocab_size));
    const json j = parse_reply(endpoint.read_line());
    if (j["type"] != "hello") throw TransportError("protocol violation: expected hello, got " + j["type"].dump());
    if (!j.contains("protocol") || !j["protocol"].is_number_integer() || j["protocol"].get<int>() != kProtocolVersion) {
        throw TransportError("protocol version mismatch: engine speaks " + std::to_string(kProtocolVersion));
    }
    if (!j.contains("vocab_size") || !j["vocab_size"].is_number_unsigned() ||
        j["vocab_size"].get<std::size_t>() != vocab_size) {
        throw TransportError("vocabulary mismatch: engine expects K=" + std::to_string(vocab_size) + ", endpoint reports " +
                             (j.contains("vocab_size") ? j["vocab_size"].dump() : std::string("nothing")));
    }
}

ProbTable parse_logits_reply(const std::string& line, const std::vector<std::size_t>& positions,
                             std::size_t vocab_size) {
    const json j = parse_reply(line);
    if (j["type"] != "logits") throw TransportError("protocol violation: expected logits, got " + j["type"].dump());
    if (!j.contains("rows") || !j["rows"].is_array()) throw TransportError("protocol violation: logits reply lacks rows");
    const auto& rows = j["rows"];
    if (rows.size() != positions.size()) {
        throw TransportError("row count mismatch: expected " + std::to_string(positions.size()) + " rows, received " +
                             std::to_string(rows.size()));
    }
    ProbTable table(vocab_size);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (!rows[r].is_array() || rows[r].size() != vocab_size) {
            throw TransportError("row length mismatch at position " + std::to_string(positions[r]) + ": expected K=" +
                                 std::to_string(vocab_size) + ", received " +
                                 std::to_string(rows[r].is_array() ? rows[r].size() : 0));
        }
        std::vector<double> logits;
        logits.reserve(vocab_size);
        for (const auto& v : rows[r]) {
            if (!v.is_number() || !std::isfinite(v.get<double>())) {
                throw TransportError("non-finite logit at position " + std::to_string(positions[r]));
            }
            logits.push_back(v.get<double>());
        }
        table.add_row(positions[r], softmax(logits));
    }
    return table;
}

ProbTable external_marginals(ProtocolEndpoint& endpoint, const SequenceState& state, std::size_t vocab_size) {
    if (state.masked().empty()) throw std::invalid_argument("state has no masked positions");
    endpoint.send_line(denoise_request_json(state));
    return parse_logits_reply(endpoint.read_line(), state.masked(), vocab_size);
}

ExternalDenoiser::ExternalDenoiser(std::unique_ptr<ProtocolEndpoint> endpoint, std::size_t vocab_size)
    : endpoint_(std::move(endpoint)), vocab_size_(vocab_size) {
    if (!endpoint_) throw std::invalid_argument("null endpoint");
    handshake(*endpoint_, vocab_size_);
}

ProbTable ExternalDenoiser::predict(const SequenceState& state) {
    return external_marginals(*endpoint_, state, vocab_size_);
}

}  // namespace swd
