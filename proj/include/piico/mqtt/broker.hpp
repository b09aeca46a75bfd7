#pragma once

// Embedded MQTT broker for the downlink side: nodes without Internet
// access subscribe here for configuration, the gateway publishes here.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "piico/mqtt/packet.hpp"
#include "piico/net.hpp"

namespace piico::mqtt {

using SessionId = std::uint64_t;

/// Filter -> sessions with their granted qos. Concurrent readers, exclusive writers.
class SubscriptionTable {
 public:
  void add(const std::string& filter, SessionId session, std::uint8_t qos);
  void remove(const std::string& filter, SessionId session);
  void remove_session(SessionId session);

  /// Each matching session appears once, with the highest granted qos
  /// among its matching filters.
  std::map<SessionId, std::uint8_t> match(std::string_view topic) const;

  std::size_t filter_count() const;

 private:
  mutable std::shared_mutex mu_;
  std::map<std::string, std::map<SessionId, std::uint8_t>> filters_;
};

struct BrokerOptions {
  net::HostPort bind{"0.0.0.0", 1883};
  /// Client ids allowed to connect; empty admits everyone.
  std::vector<std::string> allowlist;
  std::chrono::milliseconds connect_timeout{10'000};
};

struct RetainedMessage {
  Bytes payload;
  std::uint8_t qos = 0;
};

class Broker {
 public:
  /// Binds immediately. Throws net::NetError when the address is taken.
  explicit Broker(BrokerOptions options);
  ~Broker();
  Broker(const Broker&) = delete;
  Broker& operator=(const Broker&) = delete;

  std::uint16_t port() const noexcept { return port_; }

  /// Publishes from inside the gateway process as if a client had.
  void publish(const std::string& topic, Bytes payload, std::uint8_t qos = 0,
               bool retain = false);

  using PublishObserver = std::function<void(const std::string& client_id, const Packet&)>;
  /// Sees every accepted PUBLISH (client or local) before routing.
  void set_publish_observer(PublishObserver observer);

  std::size_t session_count() const;
  std::optional<RetainedMessage> retained(const std::string& topic) const;
  std::uint64_t keepalive_disconnects() const noexcept { return keepalive_drops_.load(); }

  /// Closes the listener and every session.
  void stop();

 private:
  struct Session;
  void accept_loop();
  void session_loop(std::shared_ptr<Session> s);
  void handle(const std::shared_ptr<Session>& s, Packet&& p);
  void route(const std::string& origin, const Packet& p);
  void deliver(const std::shared_ptr<Session>& s, const std::string& topic, const Bytes& payload,
               std::uint8_t qos, bool retain);
  void drop_session(const std::shared_ptr<Session>& s);
  void reap_finished();

  BrokerOptions options_;
  net::Socket listen_;
  std::uint16_t port_ = 0;
  net::Wakeup wake_;
  std::atomic<bool> running_{true};
  std::atomic<std::uint64_t> keepalive_drops_{0};

  SubscriptionTable subs_;

  mutable std::mutex mu_;  // sessions, retained, observer
  SessionId next_session_ = 1;
  std::map<SessionId, std::shared_ptr<Session>> sessions_;
  std::map<std::string, SessionId> by_client_;
  std::map<std::string, RetainedMessage> retained_;
  PublishObserver observer_;

  std::mutex threads_mu_;
  std::list<std::pair<std::shared_ptr<Session>, std::thread>> threads_;
  std::thread accept_thread_;
};

}  // namespace piico::mqtt
