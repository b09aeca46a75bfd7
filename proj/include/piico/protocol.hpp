#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>

namespace piico {

// Wire codes are part of the frame format; do not renumber.
enum class ProtocolId : std::uint8_t {
  wifi = 1,
  bluetooth = 2,
  zigbee = 3,
  ethernet = 4,
};

enum class TransportKind { stream, datagram };

inline constexpr ProtocolId kLinkProtocols[] = {ProtocolId::wifi, ProtocolId::bluetooth,
                                                ProtocolId::zigbee};

constexpr std::string_view to_string(ProtocolId p) noexcept {
  switch (p) {
    case ProtocolId::wifi: return "wifi";
    case ProtocolId::bluetooth: return "bluetooth";
    case ProtocolId::zigbee: return "zigbee";
    case ProtocolId::ethernet: return "ethernet";
  }
  return "?";
}

constexpr std::optional<ProtocolId> parse_protocol(std::string_view s) noexcept {
  if (s == "wifi") return ProtocolId::wifi;
  if (s == "bluetooth") return ProtocolId::bluetooth;
  if (s == "zigbee") return ProtocolId::zigbee;
  if (s == "ethernet") return ProtocolId::ethernet;
  return std::nullopt;
}

constexpr std::optional<ProtocolId> protocol_from_code(std::uint8_t code) noexcept {
  if (code >= 1 && code <= 4) return static_cast<ProtocolId>(code);
  return std::nullopt;
}

/// Maximum frame payload per emulated radio. Ethernet has no experiment
/// traffic; it gets the WiFi budget.
constexpr std::size_t mtu(ProtocolId p) noexcept {
  switch (p) {
    case ProtocolId::zigbee: return 100;
    case ProtocolId::bluetooth: return 990;
    case ProtocolId::wifi:
    case ProtocolId::ethernet: return 1400;
  }
  return 0;
}

constexpr TransportKind transport_of(ProtocolId p) noexcept {
  return p == ProtocolId::zigbee ? TransportKind::datagram : TransportKind::stream;
}

constexpr std::uint16_t default_port(ProtocolId p) noexcept {
  switch (p) {
    case ProtocolId::wifi: return 7001;
    case ProtocolId::bluetooth: return 7002;
    case ProtocolId::zigbee: return 7003;
    case ProtocolId::ethernet: return 0;
  }
  return 0;
}

}  // namespace piico
