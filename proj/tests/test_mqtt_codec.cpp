#include <gtest/gtest.h>

#include <random>

#include "generators.hpp"
#include "oracles.hpp"
#include "piico/mqtt/packet.hpp"
#include "piico/mqtt/topic.hpp"

using namespace piico::mqtt;

using gen::random_packet;

TEST(RemainingLength, MatchesOracleUpTo65536) {
  for (std::uint32_t v = 0; v <= 65536; ++v) {
    Bytes b;
    encode_remaining_length(v, b);
    ASSERT_EQ(b, oracle::varint_encode(v)) << v;
    const auto d = decode_remaining_length(b);
    ASSERT_TRUE(d);
    ASSERT_EQ(d->value, v);
    ASSERT_EQ(d->length, b.size());
    ASSERT_EQ(oracle::varint_decode(b), v);
  }
}

TEST(RemainingLength, Boundaries) {
  for (std::uint32_t v : {127u, 128u, 16383u, 16384u, 2097151u, 2097152u, kMaxRemainingLength}) {
    Bytes b;
    encode_remaining_length(v, b);
    EXPECT_EQ(b, oracle::varint_encode(v)) << v;
    EXPECT_EQ(decode_remaining_length(b)->value, v);
  }
  Bytes b;
  encode_remaining_length(321, b);
  EXPECT_EQ(b, (Bytes{0xC1, 0x02}));
  EXPECT_THROW(encode_remaining_length(kMaxRemainingLength + 1, b), MqttError);
}

TEST(RemainingLength, Malformed) {
  const Bytes five{0x80, 0x80, 0x80, 0x80, 0x01};
  try {
    decode_remaining_length(five);
    FAIL();
  } catch (const MqttError& e) {
    EXPECT_EQ(e.code(), MqttErrc::malformed_remaining_length);
  }
  EXPECT_FALSE(decode_remaining_length(Bytes{0x80, 0x80}));
  EXPECT_FALSE(decode_remaining_length(Bytes{}));
}

TEST(PacketCodec, FixedEncodings) {
  EXPECT_EQ(encode_packet(Packet::make(PacketType::pingreq)), (Bytes{0xC0, 0x00}));
  EXPECT_EQ(encode_packet(Packet::make(PacketType::pingresp)), (Bytes{0xD0, 0x00}));
  EXPECT_EQ(encode_packet(Packet::make(PacketType::disconnect)), (Bytes{0xE0, 0x00}));
  EXPECT_EQ(encode_packet(Packet::make_puback(0x0102)), (Bytes{0x40, 0x02, 0x01, 0x02}));
  EXPECT_EQ(encode_packet(Packet::make_connack(0, true)), (Bytes{0x20, 0x02, 0x01, 0x00}));
  const Bytes pub{0x31, 0x06, 0x00, 0x03, 'a', '/', 'b', 'X'};
  EXPECT_EQ(encode_packet(Packet::make_publish("a/b", to_bytes("X"), 0, true)), pub);
  const Bytes connect{0x10, 0x0D, 0x00, 0x04, 'M', 'Q', 'T', 'T', 0x04, 0x02,
                      0x00, 0x3C, 0x00, 0x01, 'c'};
  EXPECT_EQ(encode_packet(Packet::make_connect("c", 60)), connect);
}

TEST(PacketCodec, RandomRoundTrip) {
  std::mt19937 rng(2024);
  for (int i = 0; i < 10'000; ++i) {
    const auto p = random_packet(rng);
    const auto b = encode_packet(p);
    const auto d = decode_packet(b);
    ASSERT_TRUE(d) << i;
    ASSERT_EQ(d->consumed, b.size()) << i;
    ASSERT_EQ(d->packet, p) << i << " " << to_string(p.type);
  }
}

TEST(PacketCodec, EverySplitPointIsIncomplete) {
  std::mt19937 rng(9);
  for (int i = 0; i < 200; ++i) {
    const auto b = encode_packet(random_packet(rng));
    for (std::size_t cut = 0; cut < b.size(); ++cut)
      ASSERT_FALSE(decode_packet(std::span(b).first(cut))) << cut;
  }
}

TEST(PacketCodec, ReaderHandlesByteAtATime) {
  std::mt19937 rng(10);
  std::vector<Packet> sent;
  Bytes stream;
  for (int i = 0; i < 100; ++i) {
    sent.push_back(random_packet(rng));
    const auto b = encode_packet(sent.back());
    stream.insert(stream.end(), b.begin(), b.end());
  }
  PacketReader r;
  std::vector<Packet> got;
  for (auto byte : stream) {
    r.feed(std::span(&byte, 1));
    while (auto p = r.next()) got.push_back(std::move(*p));
  }
  EXPECT_EQ(got, sent);
}

TEST(PacketCodec, Qos2Rejected) {
  Bytes b{0x34, 0x07, 0x00, 0x03, 'a', '/', 'b', 0x00, 0x01};
  try {
    decode_packet(b);
    FAIL();
  } catch (const MqttError& e) {
    EXPECT_EQ(e.code(), MqttErrc::unsupported_qos);
  }
  EXPECT_THROW(encode_packet(Packet::make_publish("a", {}, 2, false, 1)), MqttError);
}

TEST(PacketCodec, WildcardInPublishTopic) {
  try {
    encode_packet(Packet::make_publish("a/+", {}));
    FAIL();
  } catch (const MqttError& e) {
    EXPECT_EQ(e.code(), MqttErrc::protocol_violation);
  }
  const Bytes b{0x30, 0x05, 0x00, 0x03, 'a', '/', '#'};
  try {
    decode_packet(b);
    FAIL();
  } catch (const MqttError& e) {
    EXPECT_EQ(e.code(), MqttErrc::protocol_violation);
  }
}

TEST(PacketCodec, ReservedFlagsRejected) {
  // SUBSCRIBE must carry flags 0010.
  const Bytes b{0x80, 0x06, 0x00, 0x01, 0x00, 0x01, 'a', 0x00};
  EXPECT_THROW(decode_packet(b), MqttError);
}

TEST(TopicMatcher, Examples) {
  EXPECT_TRUE(match_topic("piico/+/data", "piico/nodo2/data"));
  EXPECT_TRUE(match_topic("piico/#", "piico"));
  EXPECT_FALSE(match_topic("piico/+", "piico/a/b"));
  EXPECT_TRUE(match_topic("#", "a/b/c"));
  EXPECT_FALSE(match_topic("#", "$SYS/x"));
  EXPECT_TRUE(match_topic("$SYS/#", "$SYS/x"));
  EXPECT_TRUE(match_topic("+/+", "/finance"));
}

TEST(TopicMatcher, Validation) {
  EXPECT_TRUE(valid_topic_filter("a/+/#"));
  EXPECT_FALSE(valid_topic_filter("a/#/b"));
  EXPECT_FALSE(valid_topic_filter("a+"));
  EXPECT_FALSE(valid_topic_filter(""));
  EXPECT_TRUE(valid_topic_name("a/b"));
  EXPECT_FALSE(valid_topic_name("a/+"));
  EXPECT_FALSE(valid_topic_name(""));
}

TEST(TopicMatcher, ExhaustiveSmallAlphabet) {
  // Every name and filter of 1..3 levels, each level drawn from {a, b, ""}
  // and, for filters, also + and # (# only last).
  const auto [names, filters] = gen::topic_space({"a", "b", ""}, 3);
  std::size_t pairs = 0, hits = 0;
  for (const auto& f : filters) {
    ASSERT_TRUE(valid_topic_filter(f)) << f;
    for (const auto& n : names) {
      const bool want = oracle::topic_matches(f, n);
      ASSERT_EQ(match_topic(f, n), want) << "filter '" << f << "' name '" << n << "'";
      ++pairs;
      hits += want;
    }
  }
  EXPECT_GE(pairs, 1000u);
  EXPECT_GT(hits, 0u);
  RecordProperty("pairs", static_cast<int>(pairs));
}
