#include "piico/frame.hpp"

#include <array>

#include "piico/utf8.hpp"

namespace piico {

namespace {

constexpr std::array<std::uint16_t, 256> make_crc_table() {
  std::array<std::uint16_t, 256> t{};
  for (unsigned i = 0; i < 256; ++i) {
    std::uint16_t c = static_cast<std::uint16_t>(i << 8);
    for (int k = 0; k < 8; ++k)
      c = (c & 0x8000) ? static_cast<std::uint16_t>((c << 1) ^ 0x1021)
                       : static_cast<std::uint16_t>(c << 1);
    t[i] = c;
  }
  return t;
}

constexpr auto kCrcTable = make_crc_table();

void put_u16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>((b[at] << 8) | b[at + 1]);
}

// Size of the frame starting at b[0], or nullopt if the header is not yet
// complete. Validates magic and version.
std::optional<std::size_t> frame_length(std::span<const std::uint8_t> b) {
  if (b.size() >= 1 && b[0] != kFrameMagic0) throw FrameError(FrameErrc::bad_magic);
  if (b.size() >= 2 && b[1] != kFrameMagic1) throw FrameError(FrameErrc::bad_magic);
  if (b.size() >= 3 && b[2] != kFrameVersion) throw FrameError(FrameErrc::bad_version);
  if (b.size() < 5) return std::nullopt;
  const std::size_t id_len = b[4];
  const std::size_t len_at = 5 + id_len + 2;
  if (b.size() < len_at + 2) return std::nullopt;
  return kFrameOverhead + id_len + get_u16(b, len_at);
}

}  // namespace

const char* to_string(FrameErrc e) noexcept {
  switch (e) {
    case FrameErrc::payload_too_large: return "payload-too-large";
    case FrameErrc::node_id_invalid: return "node-id-too-long";
    case FrameErrc::bad_magic: return "bad-magic";
    case FrameErrc::bad_version: return "bad-version";
    case FrameErrc::bad_protocol: return "bad-protocol";
    case FrameErrc::truncated: return "truncated";
    case FrameErrc::crc_mismatch: return "crc-mismatch";
    case FrameErrc::length_inconsistent: return "length-inconsistent";
  }
  return "unknown";
}

FrameError::FrameError(FrameErrc code) : std::runtime_error(to_string(code)), code_(code) {}

std::uint16_t crc16_ccitt(std::span<const std::uint8_t> data, std::uint16_t crc) noexcept {
  for (auto byte : data)
    crc = static_cast<std::uint16_t>((crc << 8) ^ kCrcTable[((crc >> 8) ^ byte) & 0xFF]);
  return crc;
}

Bytes encode_frame(const LinkFrame& f) {
  if (f.node_id.empty() || f.node_id.size() > kMaxNodeIdLen || !is_valid_utf8(f.node_id))
    throw FrameError(FrameErrc::node_id_invalid);
  if (f.payload.size() > mtu(f.protocol)) throw FrameError(FrameErrc::payload_too_large);

  Bytes out;
  out.reserve(encoded_size(f));
  out.push_back(kFrameMagic0);
  out.push_back(kFrameMagic1);
  out.push_back(kFrameVersion);
  out.push_back(static_cast<std::uint8_t>(f.protocol));
  out.push_back(static_cast<std::uint8_t>(f.node_id.size()));
  out.insert(out.end(), f.node_id.begin(), f.node_id.end());
  put_u16(out, f.seq);
  put_u16(out, static_cast<std::uint16_t>(f.payload.size()));
  out.insert(out.end(), f.payload.begin(), f.payload.end());
  put_u16(out, crc16_ccitt(out));
  return out;
}

LinkFrame decode_frame(std::span<const std::uint8_t> b) {
  if (b.empty()) throw FrameError(FrameErrc::truncated);
  const auto total = frame_length(b);
  if (!total || b.size() < *total) throw FrameError(FrameErrc::truncated);
  if (b.size() > *total) throw FrameError(FrameErrc::length_inconsistent);

  const std::size_t crc_at = *total - 2;
  if (crc16_ccitt(b.first(crc_at)) != get_u16(b, crc_at))
    throw FrameError(FrameErrc::crc_mismatch);

  const auto proto = protocol_from_code(b[3]);
  if (!proto) throw FrameError(FrameErrc::bad_protocol);

  LinkFrame f;
  f.protocol = *proto;
  const std::size_t id_len = b[4];
  f.node_id.assign(reinterpret_cast<const char*>(b.data() + 5), id_len);
  if (id_len == 0 || id_len > kMaxNodeIdLen || !is_valid_utf8(f.node_id))
    throw FrameError(FrameErrc::node_id_invalid);
  f.seq = get_u16(b, 5 + id_len);
  const std::size_t payload_len = get_u16(b, 7 + id_len);
  if (payload_len > mtu(f.protocol)) throw FrameError(FrameErrc::length_inconsistent);
  const auto* p = b.data() + 9 + id_len;
  f.payload.assign(p, p + payload_len);
  return f;
}

void StreamFrameReader::feed(std::span<const std::uint8_t> data) {
  if (pos_ > 0 && pos_ == buf_.size()) {
    buf_.clear();
    pos_ = 0;
  } else if (pos_ > 4096) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
  buf_.insert(buf_.end(), data.begin(), data.end());
}

std::optional<StreamFrameReader::Item> StreamFrameReader::next() {
  std::span<const std::uint8_t> rest(buf_.data() + pos_, buf_.size() - pos_);
  const auto total = frame_length(rest);
  if (!total) return std::nullopt;
  // A declared payload beyond any MTU means we have lost framing.
  if (*total > kFrameOverhead + kMaxNodeIdLen + mtu(ProtocolId::wifi))
    throw FrameError(FrameErrc::length_inconsistent);
  if (rest.size() < *total) return std::nullopt;

  Item item;
  item.wire_bytes = *total;
  try {
    item.frame = decode_frame(rest.first(*total));
  } catch (const FrameError& e) {
    item.error = e.code();
  }
  pos_ += *total;
  return item;
}

}  // namespace piico
