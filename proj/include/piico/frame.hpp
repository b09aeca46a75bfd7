#pragma once

// Link frame codec shared by the gateway and the nodes.
//
// Layout (all multi-byte integers big-endian):
//
//   0x50 0x47 | ver=0x01 | protocol | node_id_len | node_id | seq:2 |
//   payload_len:2 | payload | crc:2
//
// The CRC is CRC-16/CCITT-FALSE over every byte that precedes it.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "piico/protocol.hpp"

namespace piico {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint8_t kFrameMagic0 = 0x50;
inline constexpr std::uint8_t kFrameMagic1 = 0x47;
inline constexpr std::uint8_t kFrameVersion = 0x01;
inline constexpr std::size_t kMaxNodeIdLen = 32;
/// Bytes of framing around node id and payload.
inline constexpr std::size_t kFrameOverhead = 11;

struct LinkFrame {
  ProtocolId protocol = ProtocolId::wifi;
  std::string node_id;
  std::uint16_t seq = 0;
  Bytes payload;

  bool operator==(const LinkFrame&) const = default;
};

enum class FrameErrc {
  payload_too_large,
  node_id_invalid,
  bad_magic,
  bad_version,
  bad_protocol,
  truncated,
  crc_mismatch,
  length_inconsistent,
};

const char* to_string(FrameErrc e) noexcept;

class FrameError : public std::runtime_error {
 public:
  explicit FrameError(FrameErrc code);
  FrameErrc code() const noexcept { return code_; }

 private:
  FrameErrc code_;
};

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout.
std::uint16_t crc16_ccitt(std::span<const std::uint8_t> data,
                          std::uint16_t crc = 0xFFFF) noexcept;

inline std::size_t encoded_size(const LinkFrame& f) noexcept {
  return kFrameOverhead + f.node_id.size() + f.payload.size();
}

/// Throws FrameError{payload_too_large | node_id_invalid}.
Bytes encode_frame(const LinkFrame& f);

/// Decodes exactly one frame occupying all of `b`. Throws FrameError.
LinkFrame decode_frame(std::span<const std::uint8_t> b);

/// Splits a byte stream into frames. A frame whose CRC fails is skipped
/// (its length is still trustworthy enough to resynchronise); any other
/// structural error leaves the stream unframeable and is sticky.
class StreamFrameReader {
 public:
  void feed(std::span<const std::uint8_t> data);

  struct Item {
    std::optional<LinkFrame> frame;  // empty when the frame was rejected
    std::optional<FrameErrc> error;
    std::size_t wire_bytes = 0;
  };

  /// Next complete frame, a rejected frame, or nullopt when more bytes
  /// are needed. Throws FrameError for unrecoverable framing errors.
  std::optional<Item> next();

  std::size_t buffered() const noexcept { return buf_.size() - pos_; }

 private:
  Bytes buf_;
  std::size_t pos_ = 0;
};

}  // namespace piico
