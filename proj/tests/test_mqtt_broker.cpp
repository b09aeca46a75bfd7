#include <gtest/gtest.h>

#include <set>

#include "piico/mqtt/broker.hpp"
#include "support.hpp"

using namespace piico;
using namespace piico::mqtt;
using namespace std::chrono_literals;
using support::RawMqtt;

namespace {

std::unique_ptr<Broker> local_broker(std::vector<std::string> allowlist = {}) {
  BrokerOptions o;
  o.bind = {"127.0.0.1", 0};
  o.allowlist = std::move(allowlist);
  return std::make_unique<Broker>(o);
}

}  // namespace

TEST(BrokerTranscript, RetainedConfigOnLateSubscribe) {
  auto broker = local_broker();
  RawMqtt pub(broker->port());
  ASSERT_TRUE(pub.connect("registry"));
  pub.send(Packet::make_publish("piico/cfg/nodo1", to_bytes(R"({"sampling-period":6})"), 1, true, 1));
  EXPECT_EQ(pub.recv(), Packet::make_puback(1));

  RawMqtt node(broker->port());
  ASSERT_TRUE(node.connect("nodo1"));
  node.send(Packet::make_subscribe(7, {{"piico/cfg/nodo1", 1}}));
  EXPECT_EQ(node.recv(), Packet::make_suback(7, {1}));
  EXPECT_EQ(node.recv(),
            Packet::make_publish("piico/cfg/nodo1", to_bytes(R"({"sampling-period":6})"), 1, true, 1));
  EXPECT_EQ(node.recv(200ms), std::nullopt);
}

TEST(BrokerTranscript, RetainedReplacedAndCleared) {
  auto broker = local_broker();
  broker->publish("t/x", to_bytes("old"), 0, true);
  broker->publish("t/x", to_bytes("new"), 0, true);
  RawMqtt a(broker->port());
  ASSERT_TRUE(a.connect("a"));
  a.send(Packet::make_subscribe(1, {{"t/#", 0}, {"t/+", 0}}));
  EXPECT_EQ(a.recv(), Packet::make_suback(1, {0, 0}));
  EXPECT_EQ(a.recv(), Packet::make_publish("t/x", to_bytes("new"), 0, true));
  EXPECT_EQ(a.recv(200ms), std::nullopt);

  broker->publish("t/x", {}, 0, true);
  EXPECT_FALSE(broker->retained("t/x"));
  // Live subscribers still see the clearing publish, without the retain flag.
  EXPECT_EQ(a.recv(), Packet::make_publish("t/x", {}, 0, false));

  RawMqtt b(broker->port());
  ASSERT_TRUE(b.connect("b"));
  b.send(Packet::make_subscribe(2, {{"t/#", 0}}));
  EXPECT_EQ(b.recv(), Packet::make_suback(2, {0}));
  EXPECT_EQ(b.recv(200ms), std::nullopt);
}

TEST(BrokerTranscript, RetainedPublishRacingSubscribeArrivesOnce) {
  auto broker = local_broker();
  RawMqtt sub(broker->port());
  ASSERT_TRUE(sub.connect("sub"));
  for (std::uint16_t i = 1; i <= 20; ++i) {
    // A stream of retained values overlaps the SUBSCRIBE; each value may
    // arrive live or as the retained copy, but never both.
    const std::string topic = "race/" + std::to_string(i);
    std::thread pub([&] {
      for (int v = 1; v <= 2000; ++v) broker->publish(topic, to_bytes(std::to_string(v)), 0, true);
    });
    sub.send(Packet::make_subscribe(i, {{topic, 0}}));
    pub.join();
    std::set<std::string> seen;
    while (auto p = sub.recv(100ms)) {
      if (p->type != PacketType::publish) continue;
      ASSERT_TRUE(seen.insert(to_string(p->payload)).second)
          << topic << " value " << to_string(p->payload) << " delivered twice";
    }
    ASSERT_FALSE(seen.empty()) << topic;
  }
}

TEST(BrokerTranscript, OverlappingFiltersDeliverOnce) {
  auto broker = local_broker();
  RawMqtt sub(broker->port());
  ASSERT_TRUE(sub.connect("sub"));
  sub.send(Packet::make_subscribe(3, {{"a/#", 0}, {"a/+", 1}, {"a/b", 0}}));
  EXPECT_EQ(sub.recv(), Packet::make_suback(3, {0, 1, 0}));

  RawMqtt pub(broker->port());
  ASSERT_TRUE(pub.connect("pub"));
  pub.send(Packet::make_publish("a/b", to_bytes("v"), 1, false, 9));
  EXPECT_EQ(pub.recv(), Packet::make_puback(9));

  // Highest granted qos among the matching filters, exactly one copy.
  EXPECT_EQ(sub.recv(), Packet::make_publish("a/b", to_bytes("v"), 1, false, 1));
  EXPECT_EQ(sub.recv(300ms), std::nullopt);
}

TEST(BrokerTranscript, QosDowngradedToSubscription) {
  auto broker = local_broker();
  RawMqtt sub(broker->port());
  ASSERT_TRUE(sub.connect("sub"));
  sub.send(Packet::make_subscribe(1, {{"x", 0}}));
  EXPECT_EQ(sub.recv(), Packet::make_suback(1, {0}));
  broker->publish("x", to_bytes("1"), 1);
  EXPECT_EQ(sub.recv(), Packet::make_publish("x", to_bytes("1"), 0));
}

TEST(BrokerTranscript, PublisherDoesNotNeedSubscribers) {
  auto broker = local_broker();
  RawMqtt pub(broker->port());
  ASSERT_TRUE(pub.connect("p"));
  pub.send(Packet::make_publish("nobody/home", to_bytes("x"), 1, false, 5));
  EXPECT_EQ(pub.recv(), Packet::make_puback(5));
}

TEST(BrokerTranscript, Unsubscribe) {
  auto broker = local_broker();
  RawMqtt sub(broker->port());
  ASSERT_TRUE(sub.connect("sub"));
  sub.send(Packet::make_subscribe(1, {{"x", 0}}));
  EXPECT_EQ(sub.recv(), Packet::make_suback(1, {0}));
  sub.send(Packet::make_unsubscribe(2, {"x"}));
  EXPECT_EQ(sub.recv(), Packet::make_unsuback(2));
  broker->publish("x", to_bytes("1"));
  EXPECT_EQ(sub.recv(200ms), std::nullopt);
}

TEST(BrokerTranscript, PingAndDisconnect) {
  auto broker = local_broker();
  RawMqtt c(broker->port());
  ASSERT_TRUE(c.connect("c"));
  c.send(Packet::make(PacketType::pingreq));
  EXPECT_EQ(c.recv(), Packet::make(PacketType::pingresp));
  EXPECT_TRUE(support::eventually([&] { return broker->session_count() == 1; }));
  c.send(Packet::make(PacketType::disconnect));
  EXPECT_TRUE(c.wait_closed(1s));
  EXPECT_TRUE(support::eventually([&] { return broker->session_count() == 0; }));
}

TEST(BrokerTranscript, KeepaliveDisconnectAtOneAndAHalf) {
  auto broker = local_broker();
  RawMqtt c(broker->port());
  const auto start = std::chrono::steady_clock::now();
  ASSERT_TRUE(c.connect("sleepy", 1));
  EXPECT_TRUE(c.wait_closed(3s));
  const auto elapsed = std::chrono::steady_clock::now() - start;
  EXPECT_GE(elapsed, 1400ms);
  EXPECT_LE(elapsed, 1800ms);
  EXPECT_EQ(broker->keepalive_disconnects(), 1u);
}

TEST(BrokerTranscript, KeepaliveSatisfiedByPing) {
  auto broker = local_broker();
  RawMqtt c(broker->port());
  ASSERT_TRUE(c.connect("awake", 1));
  for (int i = 0; i < 4; ++i) {
    std::this_thread::sleep_for(900ms);
    c.send(Packet::make(PacketType::pingreq));
    ASSERT_EQ(c.recv(), Packet::make(PacketType::pingresp)) << i;
  }
  EXPECT_FALSE(c.closed());
  EXPECT_EQ(broker->keepalive_disconnects(), 0u);
}

TEST(BrokerTranscript, SessionTakeover) {
  auto broker = local_broker();
  RawMqtt first(broker->port());
  ASSERT_TRUE(first.connect("same"));
  first.send(Packet::make_subscribe(1, {{"x", 0}}));
  EXPECT_EQ(first.recv(), Packet::make_suback(1, {0}));

  RawMqtt second(broker->port());
  ASSERT_TRUE(second.connect("same"));
  EXPECT_TRUE(first.wait_closed(1s));
  // The old session's subscriptions went with it.
  broker->publish("x", to_bytes("1"));
  EXPECT_EQ(second.recv(200ms), std::nullopt);
  EXPECT_TRUE(support::eventually([&] { return broker->session_count() == 1; }));
}

TEST(BrokerTranscript, ConnectRejections) {
  auto broker = local_broker({"gateway", "nodo1"});
  {
    RawMqtt c(broker->port());
    c.send(Packet::make_connect("intruder", 10));
    EXPECT_EQ(c.recv(), Packet::make_connack(5));
    EXPECT_TRUE(c.wait_closed(1s));
  }
  {
    RawMqtt c(broker->port());
    c.send(Packet::make_connect(std::string(24, 'x'), 10));
    EXPECT_EQ(c.recv(), Packet::make_connack(2));
    EXPECT_TRUE(c.wait_closed(1s));
  }
  {
    RawMqtt c(broker->port());
    EXPECT_TRUE(c.connect("nodo1"));
  }
}

TEST(BrokerTranscript, FirstPacketMustBeConnect) {
  auto broker = local_broker();
  RawMqtt c(broker->port());
  c.send(Packet::make(PacketType::pingreq));
  EXPECT_TRUE(c.wait_closed(1s));
}

TEST(BrokerTranscript, MalformedInputClosesSession) {
  auto broker = local_broker();
  RawMqtt c(broker->port());
  ASSERT_TRUE(c.connect("c"));
  c.send_raw({0x30, 0xFF, 0xFF, 0xFF, 0xFF, 0x01});
  EXPECT_TRUE(c.wait_closed(1s));
}

TEST(BrokerTranscript, PublishObserverSeesClientAndLocal) {
  auto broker = local_broker();
  std::mutex mu;
  std::vector<std::pair<std::string, std::string>> seen;
  broker->set_publish_observer([&](const std::string& cid, const Packet& p) {
    std::lock_guard lk(mu);
    seen.emplace_back(cid, p.topic);
  });
  RawMqtt c(broker->port());
  ASSERT_TRUE(c.connect("c1"));
  c.send(Packet::make_publish("from/client", {}, 1, false, 1));
  EXPECT_EQ(c.recv(), Packet::make_puback(1));
  broker->publish("from/local", {});
  std::lock_guard lk(mu);
  EXPECT_EQ(seen, (std::vector<std::pair<std::string, std::string>>{{"c1", "from/client"},
                                                                     {"", "from/local"}}));
}

TEST(SubscriptionTable, MaxQosPerSession) {
  SubscriptionTable t;
  t.add("a/#", 1, 0);
  t.add("a/+", 1, 1);
  t.add("a/b", 2, 0);
  t.add("c", 3, 1);
  const auto m = t.match("a/b");
  EXPECT_EQ(m, (std::map<SessionId, std::uint8_t>{{1, 1}, {2, 0}}));
  t.remove_session(1);
  EXPECT_EQ(t.match("a/b").size(), 1u);
  t.remove("a/b", 2);
  EXPECT_TRUE(t.match("a/b").empty());
}

TEST(Broker, BindConflict) {
  auto a = local_broker();
  BrokerOptions o;
  o.bind = {"127.0.0.1", a->port()};
  EXPECT_THROW(Broker b(o), net::NetError);
}
