#pragma once

// Reconnecting MQTT client. Used for the uplink towards the cloud broker
// and by simulated nodes to follow their configuration topic.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "piico/mqtt/packet.hpp"
#include "piico/net.hpp"

namespace piico::mqtt {

struct ClientOptions {
  net::HostPort broker{"iot.eclipse.org", 1883};
  std::string client_id = "piico-gateway";
  std::uint16_t keepalive_s = 30;
  /// Upper bound on messages held while the broker is unreachable.
  std::size_t buffer_cap = 10'000;
  std::chrono::milliseconds backoff_initial{1'000};
  std::chrono::milliseconds backoff_max{60'000};
  double backoff_jitter = 0.2;
  std::chrono::milliseconds connect_timeout{2'000};
  /// How long a qos 1 publish waits for its PUBACK before reporting queued.
  std::chrono::milliseconds ack_timeout{5'000};
};

enum class PublishStatus { delivered, queued };
enum class ClientState { connecting, connected, closed };

class ClientClosed : public std::runtime_error {
 public:
  ClientClosed() : std::runtime_error("permanently-closed") {}
};

/// Delay before reconnect attempt `attempt` (0-based): initial * 2^attempt,
/// capped, then scaled by a uniform factor in [1 - jitter, 1 + jitter].
std::chrono::milliseconds reconnect_delay(const ClientOptions& o, unsigned attempt,
                                          std::mt19937& rng);

class Client {
 public:
  using MessageHandler = std::function<void(const std::string& topic, const Bytes& payload)>;

  explicit Client(ClientOptions options);
  ~Client();
  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  /// qos 0 is fire-and-forget; qos 1 returns delivered once PUBACKed.
  /// While disconnected the message joins a FIFO of capacity buffer_cap;
  /// overflow evicts the oldest message. Throws ClientClosed after close().
  PublishStatus publish(const std::string& topic, Bytes payload, std::uint8_t qos = 0,
                        bool retain = false);

  /// Registers (and on every reconnect re-sends) a subscription.
  void subscribe(const std::string& filter, std::uint8_t qos, MessageHandler handler);

  bool wait_connected(std::chrono::milliseconds timeout);
  /// Blocks until nothing is buffered or in flight.
  bool wait_drained(std::chrono::milliseconds timeout);

  ClientState state() const;
  bool connected() const { return state() == ClientState::connected; }
  std::size_t buffer_depth() const;
  std::uint64_t dropped() const;
  std::uint64_t connects() const;
  std::uint16_t last_acked_id() const;

  /// Sends DISCONNECT if connected and stops for good.
  void close();

 private:
  struct Outgoing {
    Packet packet;
  };

  void run();
  bool try_connect();
  void flush_locked();
  bool write_locked(const Packet& p);
  void enqueue_locked(Packet p);
  void lost_connection_locked();
  void handle_incoming(Packet&& p);
  std::uint16_t next_id_locked();

  ClientOptions options_;
  std::mt19937 rng_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  net::Socket sock_;
  ClientState state_ = ClientState::connecting;
  bool closing_ = false;
  std::deque<Packet> backlog_;
  std::deque<Packet> inflight_;  // qos 1 awaiting PUBACK, in send order
  std::uint16_t next_id_ = 1;
  std::uint16_t last_acked_ = 0;
  std::uint64_t dropped_ = 0;
  std::uint64_t connects_ = 0;
  std::chrono::steady_clock::time_point last_tx_;
  std::map<std::string, std::pair<std::uint8_t, MessageHandler>> subscriptions_;
  PacketReader reader_;

  std::thread thread_;
};

}  // namespace piico::mqtt
