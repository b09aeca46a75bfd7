#pragma once

// Thin RAII layer over POSIX sockets.

#include <chrono>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include <sys/socket.h>

namespace piico::net {

class NetError : public std::runtime_error {
 public:
  NetError(const std::string& what, int err);
  int errnum() const noexcept { return err_; }

 private:
  int err_;
};

struct HostPort {
  std::string host;
  std::uint16_t port = 0;

  /// Accepts "host:port", ":port" or "[v6]:port". Throws std::invalid_argument.
  static HostPort parse(std::string_view s);
  std::string str() const;
  bool operator==(const HostPort&) const = default;
};

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) noexcept : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(o.release()) {}
  Socket& operator=(Socket&& o) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }
  explicit operator bool() const noexcept { return valid(); }
  int release() noexcept {
    int f = fd_;
    fd_ = -1;
    return f;
  }
  void close() noexcept;
  /// Wakes any thread blocked on this socket without releasing the fd.
  void shutdown() noexcept;

 private:
  int fd_ = -1;
};

Socket tcp_listen(const HostPort& at, int backlog = 64);
Socket tcp_connect(const HostPort& to, std::chrono::milliseconds timeout);
Socket udp_bind(const HostPort& at);
/// Connected UDP socket; send() reports ICMP port-unreachable as ECONNREFUSED.
Socket udp_connect(const HostPort& to);

std::uint16_t local_port(const Socket& s);

/// Writes every byte or throws NetError. Never raises SIGPIPE.
void send_all(const Socket& s, std::span<const std::uint8_t> data);

/// Returns bytes read, 0 on orderly close. Throws NetError on failure.
std::size_t recv_some(const Socket& s, std::span<std::uint8_t> buf);

/// True when the peer has closed or reset the connection. Non-blocking.
bool peer_closed(const Socket& s);

/// Waits until readable. False on timeout.
bool wait_readable(const Socket& s, std::chrono::milliseconds timeout);

/// Self-pipe used to interrupt poll loops.
class Wakeup {
 public:
  Wakeup();
  ~Wakeup();
  Wakeup(const Wakeup&) = delete;
  Wakeup& operator=(const Wakeup&) = delete;
  int fd() const noexcept { return rd_; }
  void notify() noexcept;
  void drain() noexcept;

 private:
  int rd_ = -1;
  int wr_ = -1;
};

}  // namespace piico::net
