#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "piico/frame.hpp"

using namespace piico;

namespace {

Bytes ascii(std::string_view s) { return Bytes(s.begin(), s.end()); }

LinkFrame random_frame(std::mt19937& rng) {
  static constexpr ProtocolId protos[] = {ProtocolId::wifi, ProtocolId::bluetooth,
                                          ProtocolId::zigbee, ProtocolId::ethernet};
  LinkFrame f;
  f.protocol = protos[rng() % 4];
  const std::size_t id_len = 1 + rng() % kMaxNodeIdLen;
  for (std::size_t i = 0; i < id_len; ++i) f.node_id += static_cast<char>('!' + rng() % 94);
  f.seq = static_cast<std::uint16_t>(rng());
  f.payload.resize(rng() % (mtu(f.protocol) + 1));
  for (auto& b : f.payload) b = static_cast<std::uint8_t>(rng());
  return f;
}

}  // namespace

TEST(Crc16, CheckValue) {
  EXPECT_EQ(oracle::crc16_bitwise(ascii("123456789")), 0x29B1);
  EXPECT_EQ(crc16_ccitt(ascii("123456789")), 0x29B1);
}

TEST(Crc16, AgreesWithBitwiseOracle) {
  std::mt19937 rng(7);
  for (int i = 0; i < 2000; ++i) {
    Bytes b(rng() % 300);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    ASSERT_EQ(crc16_ccitt(b), oracle::crc16_bitwise(b)) << "len " << b.size();
  }
}

TEST(Crc16, Incremental) {
  const auto all = ascii("123456789");
  const auto head = crc16_ccitt(std::span(all).first(4));
  EXPECT_EQ(crc16_ccitt(std::span(all).subspan(4), head), 0x29B1);
}

TEST(FrameCodec, EmptyPayloadLayout) {
  const LinkFrame f{ProtocolId::wifi, "n", 0, {}};
  const auto b = encode_frame(f);
  ASSERT_EQ(b.size(), 12u);
  const Bytes head{0x50, 0x47, 0x01, 0x01, 0x01, 'n', 0x00, 0x00, 0x00, 0x00};
  EXPECT_TRUE(std::equal(head.begin(), head.end(), b.begin()));
  const auto crc = oracle::crc16_bitwise(head);
  EXPECT_EQ(b[10], crc >> 8);
  EXPECT_EQ(b[11], crc & 0xFF);
  EXPECT_EQ(decode_frame(b), f);
}

TEST(FrameCodec, FieldsBigEndian) {
  const LinkFrame f{ProtocolId::zigbee, "ab", 0x1234, Bytes(0x0102 % 100, 0xAA)};
  LinkFrame g = f;
  g.payload.assign(99, 0xAA);
  const auto b = encode_frame(g);
  EXPECT_EQ(b[3], 3);
  EXPECT_EQ(b[4], 2);
  EXPECT_EQ(b[7], 0x12);
  EXPECT_EQ(b[8], 0x34);
  EXPECT_EQ(b[9], 0x00);
  EXPECT_EQ(b[10], 99);
  EXPECT_EQ(b.size(), encoded_size(g));
}

TEST(FrameCodec, RandomRoundTrip) {
  std::mt19937 rng(42);
  for (int i = 0; i < 10'000; ++i) {
    const auto f = random_frame(rng);
    const auto b = encode_frame(f);
    ASSERT_EQ(b.size(), encoded_size(f));
    ASSERT_EQ(decode_frame(b), f) << "iteration " << i;
  }
}

TEST(FrameCodec, MtuBoundaries) {
  for (auto p : {ProtocolId::wifi, ProtocolId::bluetooth, ProtocolId::zigbee}) {
    LinkFrame f{p, "node", 1, Bytes(mtu(p), 0x55)};
    EXPECT_NO_THROW(encode_frame(f));
    f.payload.push_back(0);
    try {
      encode_frame(f);
      FAIL() << to_string(p);
    } catch (const FrameError& e) {
      EXPECT_EQ(e.code(), FrameErrc::payload_too_large);
    }
  }
  EXPECT_EQ(mtu(ProtocolId::zigbee), 100u);
  EXPECT_EQ(mtu(ProtocolId::bluetooth), 990u);
  EXPECT_EQ(mtu(ProtocolId::wifi), 1400u);
}

TEST(FrameCodec, NodeIdBounds) {
  auto code_of = [](const LinkFrame& f) {
    try {
      encode_frame(f);
    } catch (const FrameError& e) {
      return std::optional(e.code());
    }
    return std::optional<FrameErrc>();
  };
  EXPECT_EQ(code_of({ProtocolId::wifi, std::string(32, 'x'), 0, {}}), std::nullopt);
  EXPECT_EQ(code_of({ProtocolId::wifi, std::string(33, 'x'), 0, {}}), FrameErrc::node_id_invalid);
  EXPECT_EQ(code_of({ProtocolId::wifi, "", 0, {}}), FrameErrc::node_id_invalid);
  EXPECT_EQ(code_of({ProtocolId::wifi, "\xff\xfe", 0, {}}), FrameErrc::node_id_invalid);
}

TEST(FrameCodec, DecodeErrors) {
  auto code_of = [](const Bytes& b) {
    try {
      decode_frame(b);
    } catch (const FrameError& e) {
      return std::optional(e.code());
    }
    return std::optional<FrameErrc>();
  };
  EXPECT_EQ(code_of({}), FrameErrc::truncated);
  const auto good = encode_frame({ProtocolId::bluetooth, "nodo1", 9, ascii("x;1;y")});
  EXPECT_EQ(code_of(Bytes(good.begin(), good.end() - 1)), FrameErrc::truncated);

  auto bad = good;
  bad[0] = 0x51;
  EXPECT_EQ(code_of(bad), FrameErrc::bad_magic);
  bad = good;
  bad[2] = 0x02;
  EXPECT_EQ(code_of(bad), FrameErrc::bad_version);

  auto longer = good;
  longer.push_back(0);
  EXPECT_EQ(code_of(longer), FrameErrc::length_inconsistent);

  bad = good;
  bad.back() ^= 1;
  EXPECT_EQ(code_of(bad), FrameErrc::crc_mismatch);
}

TEST(FrameCodec, EverySingleBitFlipIsDetected) {
  const LinkFrame f{ProtocolId::wifi, "nodo2", 513, ascii("Temperature;19.9;celcius")};
  const auto good = encode_frame(f);
  for (std::size_t i = 0; i < good.size() * 8; ++i) {
    auto b = good;
    b[i / 8] ^= static_cast<std::uint8_t>(1u << (i % 8));
    try {
      const auto g = decode_frame(b);
      FAIL() << "bit " << i << " decoded silently as seq " << g.seq;
    } catch (const FrameError&) {
    }
  }
}

TEST(StreamFrameReader, SplitsArbitraryChunks) {
  std::mt19937 rng(3);
  std::vector<LinkFrame> frames;
  Bytes stream;
  for (int i = 0; i < 50; ++i) {
    frames.push_back(random_frame(rng));
    const auto b = encode_frame(frames.back());
    stream.insert(stream.end(), b.begin(), b.end());
  }
  StreamFrameReader r;
  std::vector<LinkFrame> got;
  std::size_t wire = 0;
  for (std::size_t off = 0; off < stream.size();) {
    const std::size_t n = std::min<std::size_t>(1 + rng() % 700, stream.size() - off);
    r.feed(std::span(stream).subspan(off, n));
    off += n;
    while (auto item = r.next()) {
      ASSERT_TRUE(item->frame);
      wire += item->wire_bytes;
      got.push_back(*item->frame);
    }
  }
  EXPECT_EQ(got, frames);
  EXPECT_EQ(wire, stream.size());
  EXPECT_EQ(r.buffered(), 0u);
}

TEST(StreamFrameReader, SkipsCrcFailureAndResyncs) {
  auto a = encode_frame({ProtocolId::wifi, "n1", 1, ascii("a;1;u")});
  const auto b = encode_frame({ProtocolId::wifi, "n1", 2, ascii("b;2;u")});
  a[a.size() - 3] ^= 0x10;  // payload byte
  StreamFrameReader r;
  r.feed(a);
  r.feed(b);
  auto first = r.next();
  ASSERT_TRUE(first);
  EXPECT_FALSE(first->frame);
  EXPECT_EQ(first->error, FrameErrc::crc_mismatch);
  auto second = r.next();
  ASSERT_TRUE(second && second->frame);
  EXPECT_EQ(second->frame->seq, 2);
}

TEST(StreamFrameReader, BadMagicIsFatal) {
  StreamFrameReader r;
  const Bytes junk{0x00, 0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x08, 0x09, 0x0a, 0x0b};
  r.feed(junk);
  EXPECT_THROW(r.next(), FrameError);
}
