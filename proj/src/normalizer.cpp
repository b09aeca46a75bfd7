#include "piico/normalizer.hpp"

#include <cstdio>
#include <ctime>

#include "json.hpp"

#include "piico/utf8.hpp"

namespace piico {

namespace {

constexpr const char* kKeys[] = {"node-id", "gps",   "protocol",  "date",      "sensor-id",
                                 "value",   "magnitude", "gate-id", "network-id"};

// Drops a comma that directly precedes a closing brace or bracket,
// ignoring string contents.
std::string strip_trailing_commas(std::string_view in) {
  std::string out;
  out.reserve(in.size());
  bool in_string = false;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const char c = in[i];
    if (in_string) {
      out.push_back(c);
      if (c == '\\' && i + 1 < in.size())
        out.push_back(in[++i]);
      else if (c == '"')
        in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    if (c == ',') {
      std::size_t j = i + 1;
      while (j < in.size() && (in[j] == ' ' || in[j] == '\n' || in[j] == '\r' || in[j] == '\t'))
        ++j;
      if (j < in.size() && (in[j] == '}' || in[j] == ']')) continue;
    }
    out.push_back(c);
  }
  return out;
}

}  // namespace

const char* to_string(NormalizeErrc e) noexcept {
  switch (e) {
    case NormalizeErrc::not_utf8: return "not-utf8";
    case NormalizeErrc::malformed_reading: return "malformed-reading";
    case NormalizeErrc::missing_key: return "missing-key";
    case NormalizeErrc::unknown_protocol: return "unknown-protocol";
    case NormalizeErrc::bad_json: return "bad-json";
  }
  return "unknown";
}

NormalizeError::NormalizeError(NormalizeErrc code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

std::vector<RawReading> parse_payload(std::string_view payload) {
  if (!is_valid_utf8(payload)) throw NormalizeError(NormalizeErrc::not_utf8, "payload");
  std::vector<RawReading> out;
  std::size_t start = 0;
  while (start < payload.size()) {
    auto end = payload.find('\n', start);
    if (end == std::string_view::npos) end = payload.size();
    std::string_view line = payload.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    start = end + 1;

    const auto a = line.find(';');
    const auto b = a == std::string_view::npos ? a : line.find(';', a + 1);
    if (b == std::string_view::npos || line.find(';', b + 1) != std::string_view::npos)
      throw NormalizeError(NormalizeErrc::malformed_reading, std::string(line));
    RawReading r{std::string(line.substr(0, a)), std::string(line.substr(a + 1, b - a - 1)),
                 std::string(line.substr(b + 1))};
    if (r.sensor_id.empty())
      throw NormalizeError(NormalizeErrc::malformed_reading, std::string(line));
    out.push_back(std::move(r));
  }
  return out;
}

std::string format_payload(std::span<const RawReading> readings) {
  std::string out;
  for (std::size_t i = 0; i < readings.size(); ++i) {
    if (i) out.push_back('\n');
    out += readings[i].sensor_id;
    out.push_back(';');
    out += readings[i].value;
    out.push_back(';');
    out += readings[i].magnitude;
  }
  return out;
}

std::string format_date(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  ::localtime_r(&tt, &tm);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%02d/%02d/%02d-%02d:%02d:%02d", tm.tm_mon + 1, tm.tm_mday,
                tm.tm_year % 100, tm.tm_hour, tm.tm_min, tm.tm_sec);
  return buf;
}

std::chrono::system_clock::time_point local_time(int year, int month, int day, int hour,
                                                 int minute, int second) {
  std::tm tm{};
  tm.tm_year = year - 1900;
  tm.tm_mon = month - 1;
  tm.tm_mday = day;
  tm.tm_hour = hour;
  tm.tm_min = minute;
  tm.tm_sec = second;
  tm.tm_isdst = -1;
  return std::chrono::system_clock::from_time_t(std::mktime(&tm));
}

SensorRecord normalize(const RawReading& reading, ProtocolId protocol, std::string_view node_id,
                       std::chrono::system_clock::time_point receipt_time,
                       const GatewayIdentity& identity,
                       const std::optional<std::string>& registered_gps) {
  SensorRecord rec;
  rec.node_id = std::string(node_id);
  rec.gps = registered_gps && !registered_gps->empty() ? *registered_gps : "-";
  rec.protocol = protocol;
  rec.date = format_date(receipt_time);
  rec.sensor_id = reading.sensor_id;
  rec.value = reading.value;
  rec.magnitude = reading.magnitude;
  rec.gate_id = identity.gate_id.empty() ? "-" : identity.gate_id;
  rec.network_id = identity.network_id.empty() ? "-" : identity.network_id;
  return rec;
}

std::string serialize_record(const SensorRecord& rec) {
  const std::string_view values[] = {rec.node_id,   rec.gps,   to_string(rec.protocol),
                                     rec.date,      rec.sensor_id, rec.value,
                                     rec.magnitude, rec.gate_id, rec.network_id};
  std::string out = "{\n";
  for (std::size_t i = 0; i < 9; ++i) {
    out += "  \"";
    out += kKeys[i];
    out += "\": ";
    out += nlohmann::json(std::string(values[i])).dump();
    out += i + 1 < 9 ? ",\n" : "\n";
  }
  out += "}";
  return out;
}

SensorRecord parse_record(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(strip_trailing_commas(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw NormalizeError(NormalizeErrc::bad_json, e.what());
  }
  if (!j.is_object()) throw NormalizeError(NormalizeErrc::bad_json, "not an object");

  auto field = [&](const char* key) -> std::string {
    auto it = j.find(key);
    if (it == j.end()) throw NormalizeError(NormalizeErrc::missing_key, key);
    if (!it->is_string()) throw NormalizeError(NormalizeErrc::bad_json, key);
    return it->get<std::string>();
  };

  SensorRecord rec;
  rec.node_id = field("node-id");
  rec.gps = field("gps");
  const auto proto_name = field("protocol");
  const auto proto = parse_protocol(proto_name);
  if (!proto) throw NormalizeError(NormalizeErrc::unknown_protocol, proto_name);
  rec.protocol = *proto;
  rec.date = field("date");
  rec.sensor_id = field("sensor-id");
  rec.value = field("value");
  rec.magnitude = field("magnitude");
  rec.gate_id = field("gate-id");
  rec.network_id = field("network-id");
  return rec;
}

}  // namespace piico
