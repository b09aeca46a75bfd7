#pragma once

// Shared fixtures for socket-level tests.

#include <chrono>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <thread>

#include "piico/mqtt/packet.hpp"
#include "piico/net.hpp"

namespace support {

using namespace std::chrono_literals;

/// Raw MQTT peer that speaks packets over a plain TCP socket.
class RawMqtt {
 public:
  explicit RawMqtt(std::uint16_t port)
      : sock_(piico::net::tcp_connect({"127.0.0.1", port}, 2s)) {}

  void send(const piico::mqtt::Packet& p) {
    const auto b = piico::mqtt::encode_packet(p);
    piico::net::send_all(sock_, b);
  }

  void send_raw(const piico::mqtt::Bytes& b) { piico::net::send_all(sock_, b); }

  /// Next packet, or nullopt on timeout or close (see closed()).
  std::optional<piico::mqtt::Packet> recv(std::chrono::milliseconds timeout = 1000ms) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (auto p = reader_.next()) return p;
      if (closed_) return std::nullopt;
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0 || !piico::net::wait_readable(sock_, left)) return std::nullopt;
      std::uint8_t buf[4096];
      std::size_t n = 0;
      try {
        n = piico::net::recv_some(sock_, buf);
      } catch (const piico::net::NetError&) {
        n = 0;
      }
      if (n == 0) {
        closed_ = true;
        continue;
      }
      reader_.feed(std::span(buf, n));
    }
  }

  /// CONNECT and expect an accepting CONNACK.
  bool connect(const std::string& client_id, std::uint16_t keepalive_s = 60) {
    send(piico::mqtt::Packet::make_connect(client_id, keepalive_s));
    const auto ack = recv();
    return ack && ack->type == piico::mqtt::PacketType::connack && ack->return_code == 0;
  }

  /// Blocks until the peer closes or the timeout elapses.
  bool wait_closed(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (!closed_ && std::chrono::steady_clock::now() < deadline) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      recv(left);
    }
    return closed_;
  }

  bool closed() const { return closed_; }

 private:
  piico::net::Socket sock_;
  piico::mqtt::PacketReader reader_;
  bool closed_ = false;
};

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("piico-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Polls `pred` until it holds or the timeout elapses.
template <typename Pred>
bool eventually(Pred pred, std::chrono::milliseconds timeout = 5s) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(5ms);
  }
  return pred();
}

/// A TCP port that was free a moment ago.
inline std::uint16_t free_port() {
  auto s = piico::net::tcp_listen({"127.0.0.1", 0});
  return piico::net::local_port(s);
}

}  // namespace support
