#include "piico/mqtt/packet.hpp"

#include "piico/mqtt/topic.hpp"
#include "piico/utf8.hpp"

namespace piico::mqtt {

namespace {

[[noreturn]] void violation(const std::string& what) {
  throw MqttError(MqttErrc::protocol_violation, what);
}

void put_u16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

void put_string(Bytes& out, std::string_view s) {
  if (s.size() > 0xFFFF) throw MqttError(MqttErrc::oversize, "string field");
  put_u16(out, static_cast<std::uint16_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

// Bounds-checked reader over one packet body. Running past the end means
// the remaining length lied about the body.
class BodyReader {
 public:
  explicit BodyReader(std::span<const std::uint8_t> b) : b_(b) {}

  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>((b_[pos_] << 8) | b_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  std::string str() {
    const std::size_t n = u16();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    if (!is_valid_utf8(s) || s.find('\0') != std::string::npos) violation("string not UTF-8");
    return s;
  }
  Bytes rest() {
    Bytes out(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.end());
    pos_ = b_.size();
    return out;
  }
  bool done() const noexcept { return pos_ == b_.size(); }
  void expect_done() const {
    if (!done()) violation("trailing bytes in packet");
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) violation("packet body shorter than its fields");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::uint8_t fixed_flags(const Packet& p) {
  switch (p.type) {
    case PacketType::publish:
      return static_cast<std::uint8_t>((p.dup ? 0x08 : 0) | (p.qos << 1) | (p.retain ? 1 : 0));
    case PacketType::subscribe:
    case PacketType::unsubscribe:
      return 0x02;
    default:
      return 0;
  }
}

void check_qos(std::uint8_t qos) {
  if (qos == 2) throw MqttError(MqttErrc::unsupported_qos, "qos 2");
  if (qos > 2) violation("qos " + std::to_string(qos));
}

}  // namespace

const char* to_string(PacketType t) noexcept {
  switch (t) {
    case PacketType::connect: return "CONNECT";
    case PacketType::connack: return "CONNACK";
    case PacketType::publish: return "PUBLISH";
    case PacketType::puback: return "PUBACK";
    case PacketType::subscribe: return "SUBSCRIBE";
    case PacketType::suback: return "SUBACK";
    case PacketType::unsubscribe: return "UNSUBSCRIBE";
    case PacketType::unsuback: return "UNSUBACK";
    case PacketType::pingreq: return "PINGREQ";
    case PacketType::pingresp: return "PINGRESP";
    case PacketType::disconnect: return "DISCONNECT";
  }
  return "?";
}

const char* to_string(MqttErrc e) noexcept {
  switch (e) {
    case MqttErrc::oversize: return "oversize";
    case MqttErrc::malformed_remaining_length: return "malformed-remaining-length";
    case MqttErrc::unsupported_qos: return "unsupported-qos";
    case MqttErrc::protocol_violation: return "protocol-violation";
  }
  return "unknown";
}

MqttError::MqttError(MqttErrc code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

Packet Packet::make_connect(std::string client_id, std::uint16_t keepalive_s, bool clean_session) {
  Packet p;
  p.type = PacketType::connect;
  p.client_id = std::move(client_id);
  p.keepalive_s = keepalive_s;
  p.clean_session = clean_session;
  return p;
}

Packet Packet::make_connack(std::uint8_t return_code, bool session_present) {
  Packet p;
  p.type = PacketType::connack;
  p.return_code = return_code;
  p.session_present = session_present;
  return p;
}

Packet Packet::make_publish(std::string topic, Bytes payload, std::uint8_t qos, bool retain,
                            std::uint16_t packet_id) {
  Packet p;
  p.type = PacketType::publish;
  p.topic = std::move(topic);
  p.payload = std::move(payload);
  p.qos = qos;
  p.retain = retain;
  p.packet_id = packet_id;
  return p;
}

Packet Packet::make_puback(std::uint16_t packet_id) {
  Packet p;
  p.type = PacketType::puback;
  p.packet_id = packet_id;
  return p;
}

Packet Packet::make_subscribe(std::uint16_t packet_id,
                              std::vector<std::pair<std::string, std::uint8_t>> filters) {
  Packet p;
  p.type = PacketType::subscribe;
  p.packet_id = packet_id;
  p.subscriptions = std::move(filters);
  return p;
}

Packet Packet::make_suback(std::uint16_t packet_id, std::vector<std::uint8_t> granted) {
  Packet p;
  p.type = PacketType::suback;
  p.packet_id = packet_id;
  p.granted = std::move(granted);
  return p;
}

Packet Packet::make_unsubscribe(std::uint16_t packet_id, std::vector<std::string> filters) {
  Packet p;
  p.type = PacketType::unsubscribe;
  p.packet_id = packet_id;
  p.unsubscribe_filters = std::move(filters);
  return p;
}

Packet Packet::make_unsuback(std::uint16_t packet_id) {
  Packet p;
  p.type = PacketType::unsuback;
  p.packet_id = packet_id;
  return p;
}

Packet Packet::make(PacketType bare) {
  Packet p;
  p.type = bare;
  return p;
}

void encode_remaining_length(std::uint32_t value, Bytes& out) {
  if (value > kMaxRemainingLength)
    throw MqttError(MqttErrc::oversize, "remaining length " + std::to_string(value));
  do {
    std::uint8_t byte = value % 128;
    value /= 128;
    if (value > 0) byte |= 0x80;
    out.push_back(byte);
  } while (value > 0);
}

std::optional<VarIntResult> decode_remaining_length(std::span<const std::uint8_t> b) {
  std::uint32_t value = 0;
  std::uint32_t multiplier = 1;
  for (std::size_t i = 0; i < 4; ++i) {
    if (i >= b.size()) return std::nullopt;
    value += (b[i] & 0x7F) * multiplier;
    if (!(b[i] & 0x80)) return VarIntResult{value, i + 1};
    multiplier *= 128;
  }
  throw MqttError(MqttErrc::malformed_remaining_length, "more than 4 bytes");
}

Bytes encode_packet(const Packet& p) {
  Bytes body;
  switch (p.type) {
    case PacketType::connect:
      put_string(body, "MQTT");
      body.push_back(4);
      body.push_back(p.clean_session ? 0x02 : 0x00);
      put_u16(body, p.keepalive_s);
      put_string(body, p.client_id);
      break;
    case PacketType::connack:
      body.push_back(p.session_present ? 1 : 0);
      body.push_back(p.return_code);
      break;
    case PacketType::publish:
      check_qos(p.qos);
      if (!valid_topic_name(p.topic)) violation("bad publish topic '" + p.topic + "'");
      if (p.qos == 0 && p.dup) violation("dup set on qos 0");
      if (p.qos == 0 && p.packet_id != 0) violation("packet id on qos 0");
      if (p.qos > 0 && p.packet_id == 0) violation("qos 1 needs a packet id");
      put_string(body, p.topic);
      if (p.qos > 0) put_u16(body, p.packet_id);
      body.insert(body.end(), p.payload.begin(), p.payload.end());
      break;
    case PacketType::puback:
    case PacketType::unsuback:
      put_u16(body, p.packet_id);
      break;
    case PacketType::subscribe:
      if (p.subscriptions.empty()) violation("empty SUBSCRIBE");
      put_u16(body, p.packet_id);
      for (const auto& [filter, qos] : p.subscriptions) {
        check_qos(qos);
        if (!valid_topic_filter(filter)) violation("bad filter '" + filter + "'");
        put_string(body, filter);
        body.push_back(qos);
      }
      break;
    case PacketType::suback:
      if (p.granted.empty()) violation("empty SUBACK");
      put_u16(body, p.packet_id);
      for (auto g : p.granted) {
        if (g != kSubackFailure) check_qos(g);
        body.push_back(g);
      }
      break;
    case PacketType::unsubscribe:
      if (p.unsubscribe_filters.empty()) violation("empty UNSUBSCRIBE");
      put_u16(body, p.packet_id);
      for (const auto& f : p.unsubscribe_filters) {
        if (!valid_topic_filter(f)) violation("bad filter '" + f + "'");
        put_string(body, f);
      }
      break;
    case PacketType::pingreq:
    case PacketType::pingresp:
    case PacketType::disconnect:
      break;
  }
  if (body.size() > kMaxRemainingLength)
    throw MqttError(MqttErrc::oversize, "remaining length " + std::to_string(body.size()));

  Bytes out;
  out.reserve(body.size() + 5);
  out.push_back(static_cast<std::uint8_t>((static_cast<std::uint8_t>(p.type) << 4) | fixed_flags(p)));
  encode_remaining_length(static_cast<std::uint32_t>(body.size()), out);
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

std::optional<Decoded> decode_packet(std::span<const std::uint8_t> b) {
  if (b.empty()) return std::nullopt;
  const auto rl = decode_remaining_length(b.subspan(1));
  if (!rl) return std::nullopt;
  const std::size_t header = 1 + rl->length;
  if (b.size() < header + rl->value) return std::nullopt;

  const std::uint8_t type_bits = b[0] >> 4;
  const std::uint8_t flags = b[0] & 0x0F;
  BodyReader r(b.subspan(header, rl->value));
  Packet p;

  auto expect_flags = [&](std::uint8_t want) {
    if (flags != want) violation("reserved flags in " + std::string(to_string(p.type)));
  };

  switch (type_bits) {
    case 1: {
      p.type = PacketType::connect;
      expect_flags(0);
      if (r.str() != "MQTT") violation("protocol name");
      if (r.u8() != 4) violation("protocol level");
      const auto cf = r.u8();
      if (cf & ~0x02) violation("unsupported CONNECT flags");
      p.clean_session = cf & 0x02;
      p.keepalive_s = r.u16();
      p.client_id = r.str();
      break;
    }
    case 2: {
      p.type = PacketType::connack;
      expect_flags(0);
      const auto ack = r.u8();
      if (ack & ~0x01) violation("CONNACK flags");
      p.session_present = ack & 0x01;
      p.return_code = r.u8();
      break;
    }
    case 3: {
      p.type = PacketType::publish;
      p.dup = flags & 0x08;
      p.qos = (flags >> 1) & 0x03;
      p.retain = flags & 0x01;
      check_qos(p.qos);
      if (p.qos == 0 && p.dup) violation("dup set on qos 0");
      p.topic = r.str();
      if (!valid_topic_name(p.topic)) violation("bad publish topic '" + p.topic + "'");
      if (p.qos > 0) {
        p.packet_id = r.u16();
        if (p.packet_id == 0) violation("zero packet id");
      }
      p.payload = r.rest();
      break;
    }
    case 4:
    case 11:
      p.type = type_bits == 4 ? PacketType::puback : PacketType::unsuback;
      expect_flags(0);
      p.packet_id = r.u16();
      break;
    case 8: {
      p.type = PacketType::subscribe;
      expect_flags(2);
      p.packet_id = r.u16();
      while (!r.done()) {
        auto f = r.str();
        const auto q = r.u8();
        check_qos(q);
        if (!valid_topic_filter(f)) violation("bad filter '" + f + "'");
        p.subscriptions.emplace_back(std::move(f), q);
      }
      if (p.subscriptions.empty()) violation("empty SUBSCRIBE");
      break;
    }
    case 9: {
      p.type = PacketType::suback;
      expect_flags(0);
      p.packet_id = r.u16();
      while (!r.done()) {
        const auto g = r.u8();
        if (g != kSubackFailure) check_qos(g);
        p.granted.push_back(g);
      }
      if (p.granted.empty()) violation("empty SUBACK");
      break;
    }
    case 10: {
      p.type = PacketType::unsubscribe;
      expect_flags(2);
      p.packet_id = r.u16();
      while (!r.done()) {
        auto f = r.str();
        if (!valid_topic_filter(f)) violation("bad filter '" + f + "'");
        p.unsubscribe_filters.push_back(std::move(f));
      }
      if (p.unsubscribe_filters.empty()) violation("empty UNSUBSCRIBE");
      break;
    }
    case 12:
    case 13:
    case 14:
      p.type = static_cast<PacketType>(type_bits);
      expect_flags(0);
      break;
    default:
      violation("packet type " + std::to_string(type_bits));
  }
  r.expect_done();
  return Decoded{std::move(p), header + rl->value};
}

std::optional<Packet> PacketReader::next() {
  auto d = decode_packet(buf_);
  if (!d) return std::nullopt;
  buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(d->consumed));
  return std::move(d->packet);
}

}  // namespace piico::mqtt
