#pragma once

// Canonical nine-field sensor record and its JSON rendering.

#include <chrono>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "piico/protocol.hpp"

namespace piico {

struct GatewayIdentity {
  std::string gate_id = "-";
  std::string network_id = "-";
  bool operator==(const GatewayIdentity&) const = default;
};

struct RawReading {
  std::string sensor_id;
  std::string value;
  std::string magnitude;
  bool operator==(const RawReading&) const = default;
};

struct SensorRecord {
  std::string node_id;
  std::string gps = "-";
  ProtocolId protocol = ProtocolId::wifi;
  std::string date;  // MM/DD/YY-HH:MM:SS, gateway local clock
  std::string sensor_id;
  std::string value;
  std::string magnitude;
  std::string gate_id = "-";
  std::string network_id = "-";
  bool operator==(const SensorRecord&) const = default;
};

enum class NormalizeErrc { not_utf8, malformed_reading, missing_key, unknown_protocol, bad_json };

const char* to_string(NormalizeErrc e) noexcept;

class NormalizeError : public std::runtime_error {
 public:
  NormalizeError(NormalizeErrc code, const std::string& detail);
  NormalizeErrc code() const noexcept { return code_; }

 private:
  NormalizeErrc code_;
};

/// Newline-separated "sensor-id;value;magnitude" readings. A trailing
/// newline is allowed; an empty payload yields no readings.
std::vector<RawReading> parse_payload(std::string_view payload);

/// Inverse of parse_payload.
std::string format_payload(std::span<const RawReading> readings);

/// Renders `t` in local time as MM/DD/YY-HH:MM:SS.
std::string format_date(std::chrono::system_clock::time_point t);

/// Local wall-clock instant, for fixtures and replay.
std::chrono::system_clock::time_point local_time(int year, int month, int day, int hour,
                                                 int minute, int second);

/// gps comes from the registry lookup when the node is registered.
SensorRecord normalize(const RawReading& reading, ProtocolId protocol, std::string_view node_id,
                       std::chrono::system_clock::time_point receipt_time,
                       const GatewayIdentity& identity,
                       const std::optional<std::string>& registered_gps);

/// Canonical bytes: one key per line in the fixed field order.
std::string serialize_record(const SensorRecord& rec);

/// Accepts any key order, whitespace and a trailing comma before '}'.
SensorRecord parse_record(std::string_view json);

}  // namespace piico
