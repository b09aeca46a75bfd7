#pragma once

// Emulated radio links. WiFi and Bluetooth ride on local stream sockets,
// ZigBee on datagrams; all three carry the same LinkFrame encoding.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>

#include "piico/frame.hpp"
#include "piico/net.hpp"
#include "piico/protocol.hpp"

namespace piico {

struct LinkEndpoint {
  ProtocolId protocol = ProtocolId::wifi;
  net::HostPort address;

  TransportKind transport() const noexcept { return transport_of(protocol); }
};

struct ReceivedFrame {
  LinkFrame frame;
  ProtocolId link = ProtocolId::wifi;
  std::chrono::system_clock::time_point arrival;
  std::size_t wire_bytes = 0;
};

/// Returns false when the consumer no longer accepts frames.
using FrameSink = std::function<bool(ReceivedFrame&&)>;

enum class LinkErrc { bind_failure, disconnected, payload_too_large, consumer_closed };

const char* to_string(LinkErrc e) noexcept;

class LinkError : public std::runtime_error {
 public:
  LinkError(LinkErrc code, const std::string& detail);
  LinkErrc code() const noexcept { return code_; }

 private:
  LinkErrc code_;
};

struct LinkStats {
  std::uint64_t frames_accepted = 0;
  std::uint64_t bytes_accepted = 0;
  std::uint64_t malformed = 0;
  std::uint64_t connections = 0;
};

/// One listening endpoint with its own I/O thread. Every well-formed frame
/// is handed to the sink exactly once, in per-connection arrival order.
class LinkListener {
 public:
  /// Binds immediately; throws LinkError{bind_failure}.
  LinkListener(LinkEndpoint endpoint, FrameSink sink);
  ~LinkListener();
  LinkListener(const LinkListener&) = delete;
  LinkListener& operator=(const LinkListener&) = delete;

  const LinkEndpoint& endpoint() const noexcept { return endpoint_; }
  std::uint16_t port() const noexcept { return port_; }
  LinkStats stats() const;
  bool running() const noexcept { return running_.load(); }
  /// Set once the sink has refused a frame; the listener then stops.
  bool consumer_closed() const noexcept { return consumer_closed_.load(); }

  /// Downlink to a node that has previously sent on this endpoint.
  /// Throws LinkError{disconnected | payload_too_large}.
  void send_to(const std::string& node_id, const LinkFrame& f);

  void stop();

 private:
  struct Conn;
  void run_stream();
  void run_datagram();
  bool deliver(LinkFrame&& f, std::size_t wire_bytes);
  void count_malformed();

  LinkEndpoint endpoint_;
  FrameSink sink_;
  net::Socket sock_;
  std::uint16_t port_ = 0;
  net::Wakeup wake_;
  std::atomic<bool> running_{true};
  std::atomic<bool> consumer_closed_{false};

  mutable std::mutex mu_;
  LinkStats stats_;
  std::map<std::string, std::shared_ptr<Conn>> by_node_;
  std::map<std::string, std::vector<std::uint8_t>> dgram_peers_;  // node -> sockaddr bytes

  std::thread thread_;
};

/// Node-side connection to one gateway endpoint.
class LinkClient {
 public:
  /// Throws LinkError{disconnected} when the endpoint is unreachable.
  explicit LinkClient(LinkEndpoint endpoint,
                      std::chrono::milliseconds connect_timeout = std::chrono::seconds(2));

  const LinkEndpoint& endpoint() const noexcept { return endpoint_; }

  /// Writes one frame atomically. Throws LinkError{disconnected | payload_too_large}.
  void send(const LinkFrame& f);

  /// Next downlink frame, or nullopt on timeout.
  std::optional<LinkFrame> receive(std::chrono::milliseconds timeout);

  void close() noexcept { sock_.close(); }
  bool is_open() const noexcept { return sock_.valid(); }

 private:
  LinkEndpoint endpoint_;
  net::Socket sock_;
  StreamFrameReader reader_;
};

}  // namespace piico
