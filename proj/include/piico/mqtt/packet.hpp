#pragma once

// MQTT 3.1.1 control packets, QoS 0/1 subset.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace piico::mqtt {

using Bytes = std::vector<std::uint8_t>;

enum class PacketType : std::uint8_t {
  connect = 1,
  connack = 2,
  publish = 3,
  puback = 4,
  subscribe = 8,
  suback = 9,
  unsubscribe = 10,
  unsuback = 11,
  pingreq = 12,
  pingresp = 13,
  disconnect = 14,
};

const char* to_string(PacketType t) noexcept;

inline constexpr std::uint32_t kMaxRemainingLength = 268'435'455;
inline constexpr std::uint8_t kSubackFailure = 0x80;

/// One struct for every kind; fields not used by a kind stay default.
struct Packet {
  PacketType type = PacketType::pingreq;

  // CONNECT
  std::string client_id;
  std::uint16_t keepalive_s = 0;
  bool clean_session = true;

  // CONNACK
  bool session_present = false;
  std::uint8_t return_code = 0;

  // PUBLISH
  std::string topic;
  Bytes payload;
  std::uint8_t qos = 0;
  bool retain = false;
  bool dup = false;

  // PUBLISH(qos1), PUBACK, SUBSCRIBE, SUBACK, UNSUBSCRIBE, UNSUBACK
  std::uint16_t packet_id = 0;

  // SUBSCRIBE: (filter, requested qos); UNSUBSCRIBE uses the filters only
  std::vector<std::pair<std::string, std::uint8_t>> subscriptions;
  std::vector<std::string> unsubscribe_filters;
  // SUBACK
  std::vector<std::uint8_t> granted;

  bool operator==(const Packet&) const = default;

  static Packet make_connect(std::string client_id, std::uint16_t keepalive_s,
                             bool clean_session = true);
  static Packet make_connack(std::uint8_t return_code, bool session_present = false);
  static Packet make_publish(std::string topic, Bytes payload, std::uint8_t qos = 0,
                             bool retain = false, std::uint16_t packet_id = 0);
  static Packet make_puback(std::uint16_t packet_id);
  static Packet make_subscribe(std::uint16_t packet_id,
                               std::vector<std::pair<std::string, std::uint8_t>> filters);
  static Packet make_suback(std::uint16_t packet_id, std::vector<std::uint8_t> granted);
  static Packet make_unsubscribe(std::uint16_t packet_id, std::vector<std::string> filters);
  static Packet make_unsuback(std::uint16_t packet_id);
  static Packet make(PacketType bare);  // PINGREQ, PINGRESP, DISCONNECT
};

enum class MqttErrc {
  oversize,
  malformed_remaining_length,
  unsupported_qos,
  protocol_violation,
};

const char* to_string(MqttErrc e) noexcept;

class MqttError : public std::runtime_error {
 public:
  MqttError(MqttErrc code, const std::string& detail);
  MqttErrc code() const noexcept { return code_; }

 private:
  MqttErrc code_;
};

/// 1-4 byte variable length integer. Throws MqttError{oversize}.
void encode_remaining_length(std::uint32_t value, Bytes& out);

struct VarIntResult {
  std::uint32_t value = 0;
  std::size_t length = 0;  // bytes used
};

/// nullopt when more bytes are needed. Throws MqttError{malformed_remaining_length}.
std::optional<VarIntResult> decode_remaining_length(std::span<const std::uint8_t> b);

/// Throws MqttError{oversize | protocol_violation | unsupported_qos}.
Bytes encode_packet(const Packet& p);

struct Decoded {
  Packet packet;
  std::size_t consumed = 0;
};

/// Decodes the first packet in `b`. Returns nullopt (consuming nothing)
/// when the packet is incomplete. Throws MqttError.
std::optional<Decoded> decode_packet(std::span<const std::uint8_t> b);

/// Accumulates a byte stream and yields whole packets.
class PacketReader {
 public:
  void feed(std::span<const std::uint8_t> data) { buf_.insert(buf_.end(), data.begin(), data.end()); }
  std::optional<Packet> next();
  std::size_t buffered() const noexcept { return buf_.size(); }

 private:
  Bytes buf_;
};

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }
inline std::string to_string(const Bytes& b) { return std::string(b.begin(), b.end()); }

}  // namespace piico::mqtt
