#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <sstream>
#include <string>
#include <vector>

#include "pun/predictor.hpp"

extern char** environ;

namespace pun {

inline constexpr const char* kHello = "HELLO PUN 1";
inline constexpr const char* kHelloReply = "OK PUN 1";
inline constexpr double kDefaultPeerTimeoutS = 10.0;

// A child process spoken to line by line over its standard streams.
class PeerProcess {
 public:
  PeerProcess(std::vector<std::string> argv, double timeout_s = kDefaultPeerTimeoutS)
      : argv_(std::move(argv)), timeout_s_(timeout_s) {
    require(!argv_.empty(), "peer: empty command");
    // a dead peer must surface as a write error, not kill us
    ::signal(SIGPIPE, SIG_IGN);
    int in[2], out[2];
    if (::pipe(in) != 0 || ::pipe(out) != 0) fail(ErrorKind::kPeer, "peer: pipe failed: " + std::string(std::strerror(errno)));
    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_adddup2(&fa, in[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&fa, out[1], STDOUT_FILENO);
    for (int fd : {in[0], in[1], out[0], out[1]}) posix_spawn_file_actions_addclose(&fa, fd);
    std::vector<char*> args;
    for (auto& a : argv_) args.push_back(a.data());
    args.push_back(nullptr);
    const int rc = ::posix_spawnp(&pid_, args[0], &fa, nullptr, args.data(), environ);
    posix_spawn_file_actions_destroy(&fa);
    ::close(in[0]);
    ::close(out[1]);
    to_child_ = in[1];
    from_child_ = out[0];
    if (rc != 0) {
      pid_ = -1;
      close_fds();
      fail(ErrorKind::kPeer, "peer: cannot start '" + argv_[0] + "': " + std::strerror(rc));
    }
  }

  PeerProcess(const PeerProcess&) = delete;
  PeerProcess& operator=(const PeerProcess&) = delete;

  ~PeerProcess() {
    close_fds();
    if (pid_ > 0) {
      ::kill(pid_, SIGTERM);
      int status = 0;
      ::waitpid(pid_, &status, 0);
    }
  }

  void send_line(const std::string& line) {
    const std::string data = line + "\n";
    std::size_t off = 0;
    while (off < data.size()) {
      const ssize_t n = ::write(to_child_, data.data() + off, data.size() - off);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) fail(ErrorKind::kPeer, "peer: write failed: " + std::string(std::strerror(errno)));
      off += static_cast<std::size_t>(n);
    }
  }

  std::string read_line() {
    using clock = std::chrono::steady_clock;
    const auto deadline = clock::now() + std::chrono::duration<double>(timeout_s_);
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now()).count();
      if (left <= 0) fail(ErrorKind::kPeer, "peer: no reply within " + format_real(timeout_s_, 6) + " s");
      pollfd p{from_child_, POLLIN, 0};
      const int r = ::poll(&p, 1, static_cast<int>(left));
      if (r < 0 && errno == EINTR) continue;
      if (r < 0) fail(ErrorKind::kPeer, "peer: poll failed: " + std::string(std::strerror(errno)));
      if (r == 0) continue;
      char chunk[4096];
      const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) fail(ErrorKind::kPeer, "peer: closed its output");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  std::string request(const std::string& line) {
    send_line(line);
    return read_line();
  }

 private:
  void close_fds() {
    if (to_child_ >= 0) ::close(to_child_);
    if (from_child_ >= 0) ::close(from_child_);
    to_child_ = from_child_ = -1;
  }

  std::vector<std::string> argv_;
  double timeout_s_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

inline std::vector<std::string> split_command(const std::string& cmd) {
  std::istringstream in(cmd);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

inline std::string format_predict_request(const Viewpoint& view, const std::filesystem::path& image_path) {
  return "PREDICT " + format_real(view.elevation_deg()) + " " + format_real(view.azimuth_deg()) + " " +
         format_real(view.radius()) + " " + std::filesystem::absolute(image_path).string();
}

// Parses "UMAP v1 .. v48"; "ERR msg" becomes a peer-error.
inline std::vector<double> parse_umap_response(const std::string& line) {
  const auto toks = detail::split_ws(line);
  if (toks.empty()) fail(ErrorKind::kProtocol, "empty response line");
  if (toks[0] == "ERR") fail(ErrorKind::kPeer, "peer reported: " + line.substr(std::min<std::size_t>(4, line.size())));
  if (toks[0] != "UMAP") fail(ErrorKind::kProtocol, "unexpected response: '" + line + "'");
  if (toks.size() - 1 != kAnchorCount)
    fail(ErrorKind::kProtocol, "expected 48 values, got " + std::to_string(toks.size() - 1) + " in '" + line + "'");
  std::vector<double> v;
  for (std::size_t i = 1; i < toks.size(); ++i) {
    double x = 0.0;
    if (!parse_real(toks[i], x)) fail(ErrorKind::kProtocol, "value " + std::to_string(i) + " is not a number in '" + line + "'");
    if (!(x >= 0.0 && x <= 1.0))
      fail(ErrorKind::kProtocol, "value " + std::to_string(i) + " = " + std::string(toks[i]) + " outside [0, 1]");
    v.push_back(x);
  }
  return v;
}

// Client side of predictor protocol v1. The handshake runs at construction.
class ExternalPredictor : public Predictor {
 public:
  explicit ExternalPredictor(const std::string& command, double timeout_s = kDefaultPeerTimeoutS)
      : peer_(split_command(command), timeout_s) {
    const std::string reply = peer_.request(kHello);
    if (reply != kHelloReply) fail(ErrorKind::kProtocol, "handshake: expected '" + std::string(kHelloReply) + "', got '" + reply + "'");
  }

  std::string name() const override { return "external"; }
  bool needs_image_file() const override { return true; }

  UMap predict(const PredictRequest& req) override {
    require(!req.image_path.empty(), "ExternalPredictor: no image file");
    return external_predict(req.image_path, req.view, req.kind);
  }

  UMap external_predict(const std::filesystem::path& image_path, const Viewpoint& view, UncertaintyKind kind) {
    return UMap::for_view(parse_umap_response(peer_.request(format_predict_request(view, image_path))), view, kind, 0);
  }

 private:
  PeerProcess peer_;
};

}  // namespace pun
