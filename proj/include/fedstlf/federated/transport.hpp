#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "fedstlf/error.hpp"

namespace fedstlf {

using Bytes = std::vector<std::uint8_t>;

/// One direction-agnostic endpoint that moves opaque frames.
class FrameChannel {
 public:
  virtual ~FrameChannel() = default;
  virtual void send(const Bytes& frame) = 0;
  virtual Bytes receive() = 0;
};

namespace detail {

struct FrameQueue {
  std::mutex mutex;
  std::condition_variable ready;
  std::deque<Bytes> frames;
  bool closed = false;
};

}  // namespace detail

/// Endpoint of an in-memory duplex link. Frames are copied, never shared.
class InProcessChannel final : public FrameChannel {
 public:
  InProcessChannel(std::shared_ptr<detail::FrameQueue> out, std::shared_ptr<detail::FrameQueue> in)
      : out_(std::move(out)), in_(std::move(in)) {}

  ~InProcessChannel() override {
    std::lock_guard lock(out_->mutex);
    out_->closed = true;
    out_->ready.notify_all();
  }

  void send(const Bytes& frame) override {
    std::lock_guard lock(out_->mutex);
    if (out_->closed) throw TransportError("send on a closed in-process channel");
    out_->frames.push_back(frame);
    out_->ready.notify_one();
  }

  Bytes receive() override {
    std::unique_lock lock(in_->mutex);
    in_->ready.wait(lock, [&] { return !in_->frames.empty() || in_->closed; });
    if (in_->frames.empty()) throw TransportError("in-process channel closed by peer");
    Bytes f = std::move(in_->frames.front());
    in_->frames.pop_front();
    return f;
  }

 private:
  std::shared_ptr<detail::FrameQueue> out_;
  std::shared_ptr<detail::FrameQueue> in_;
};

/// Frames over a connected stream socket: 4-byte little-endian length, then
/// the payload. Owns the descriptor.
class StreamChannel final : public FrameChannel {
 public:
  static constexpr std::uint32_t kMaxFrame = 1u << 30;

  explicit StreamChannel(int fd) : fd_(fd) {
    if (fd_ < 0) throw TransportError("invalid socket descriptor");
  }
  ~StreamChannel() override {
    if (fd_ >= 0) ::close(fd_);
  }
  StreamChannel(const StreamChannel&) = delete;
  StreamChannel& operator=(const StreamChannel&) = delete;

  void send(const Bytes& frame) override {
    if (frame.size() > kMaxFrame) throw TransportError("frame of " + std::to_string(frame.size()) + " bytes too large");
    const auto n = static_cast<std::uint32_t>(frame.size());
    const std::uint8_t header[4] = {static_cast<std::uint8_t>(n), static_cast<std::uint8_t>(n >> 8),
                                    static_cast<std::uint8_t>(n >> 16), static_cast<std::uint8_t>(n >> 24)};
    write_all(header, 4);
    write_all(frame.data(), frame.size());
  }

  Bytes receive() override {
    std::uint8_t header[4];
    read_all(header, 4);
    const std::uint32_t n = static_cast<std::uint32_t>(header[0]) | static_cast<std::uint32_t>(header[1]) << 8 |
                            static_cast<std::uint32_t>(header[2]) << 16 | static_cast<std::uint32_t>(header[3]) << 24;
    if (n > kMaxFrame) throw TransportError("incoming frame length " + std::to_string(n) + " exceeds limit");
    Bytes frame(n);
    read_all(frame.data(), n);
    return frame;
  }

 private:
  void write_all(const std::uint8_t* p, std::size_t n) {
    while (n > 0) {
      const ssize_t w = ::send(fd_, p, n, MSG_NOSIGNAL);
      if (w < 0 && errno == EINTR) continue;
      if (w <= 0) throw TransportError(std::string("socket send failed: ") + std::strerror(errno));
      p += w;
      n -= static_cast<std::size_t>(w);
    }
  }

  void read_all(std::uint8_t* p, std::size_t n) {
    while (n > 0) {
      const ssize_t r = ::recv(fd_, p, n, 0);
      if (r < 0 && errno == EINTR) continue;
      if (r == 0) throw TransportError("socket closed by peer mid-frame");
      if (r < 0) throw TransportError(std::string("socket receive failed: ") + std::strerror(errno));
      p += r;
      n -= static_cast<std::size_t>(r);
    }
  }

  int fd_;
};

enum class TransportKind { in_process, socket_pair, tcp_loopback };

inline const char* transport_name(TransportKind k) {
  switch (k) {
    case TransportKind::in_process: return "in_process";
    case TransportKind::socket_pair: return "socket_pair";
    case TransportKind::tcp_loopback: return "tcp_loopback";
  }
  return "?";
}

inline TransportKind parse_transport(const std::string& s) {
  if (s == "in_process") return TransportKind::in_process;
  if (s == "socket_pair") return TransportKind::socket_pair;
  if (s == "tcp_loopback") return TransportKind::tcp_loopback;
  throw ConfigError("unknown transport '" + s + "' (expected in_process, socket_pair or tcp_loopback)");
}

/// Server end and client end of one duplex link.
struct Link {
  std::unique_ptr<FrameChannel> server;
  std::unique_ptr<FrameChannel> client;
};

namespace detail {

inline Link tcp_loopback_link() {
  const int listener = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listener < 0) throw TransportError(std::string("socket: ") + std::strerror(errno));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  socklen_t len = sizeof addr;
  if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listener, 1) != 0 ||
      ::getsockname(listener, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
    const std::string err = std::strerror(errno);
    ::close(listener);
    throw TransportError("loopback listener: " + err);
  }
  const int client = ::socket(AF_INET, SOCK_STREAM, 0);
  if (client < 0 || ::connect(client, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    const std::string err = std::strerror(errno);
    if (client >= 0) ::close(client);
    ::close(listener);
    throw TransportError("loopback connect: " + err);
  }
  const int server = ::accept(listener, nullptr, nullptr);
  ::close(listener);
  if (server < 0) {
    ::close(client);
    throw TransportError(std::string("loopback accept: ") + std::strerror(errno));
  }
  return {std::make_unique<StreamChannel>(server), std::make_unique<StreamChannel>(client)};
}

}  // namespace detail

inline Link make_link(TransportKind kind) {
  switch (kind) {
    case TransportKind::in_process: {
      auto down = std::make_shared<detail::FrameQueue>();
      auto up = std::make_shared<detail::FrameQueue>();
      return {std::make_unique<InProcessChannel>(down, up), std::make_unique<InProcessChannel>(up, down)};
    }
    case TransportKind::socket_pair: {
      int fds[2];
      if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) {
        throw TransportError(std::string("socketpair: ") + std::strerror(errno));
      }
      return {std::make_unique<StreamChannel>(fds[0]), std::make_unique<StreamChannel>(fds[1])};
    }
    case TransportKind::tcp_loopback:
      return detail::tcp_loopback_link();
  }
  throw ConfigError("unknown transport");
}

}  // namespace fedstlf
