#include <gtest/gtest.h>

#include <mutex>

#include "piico/mqtt/broker.hpp"
#include "piico/mqtt/client.hpp"
#include "support.hpp"

using namespace piico;
using namespace piico::mqtt;
using namespace std::chrono_literals;

namespace {

/// Broker plus a log of every publish it accepted.
struct Sink {
  explicit Sink(std::uint16_t port = 0) {
    BrokerOptions o;
    o.bind = {"127.0.0.1", port};
    broker = std::make_unique<Broker>(o);
    broker->set_publish_observer([this](const std::string& cid, const Packet& p) {
      if (cid.empty()) return;
      std::lock_guard lk(mu);
      topics.push_back(p.topic);
      payloads.push_back(to_string(p.payload));
    });
  }
  std::vector<std::string> received() const {
    std::lock_guard lk(mu);
    return payloads;
  }
  std::size_t count() const {
    std::lock_guard lk(mu);
    return payloads.size();
  }

  std::unique_ptr<Broker> broker;
  mutable std::mutex mu;
  std::vector<std::string> topics;
  std::vector<std::string> payloads;
};

ClientOptions fast_options(std::uint16_t port) {
  ClientOptions o;
  o.broker = {"127.0.0.1", port};
  o.client_id = "uplink-test";
  o.backoff_initial = 20ms;
  o.backoff_max = 100ms;
  o.connect_timeout = 500ms;
  o.ack_timeout = 2s;
  return o;
}

/// True when `seen` is 0..n-1 in order, allowing redelivered earlier items.
::testing::AssertionResult ordered_at_least_once(const std::vector<std::string>& seen, int n) {
  int next = 0;
  for (std::size_t i = 0; i < seen.size(); ++i) {
    const int v = std::stoi(seen[i]);
    if (v == next) {
      ++next;
    } else if (v > next) {
      return ::testing::AssertionFailure() << "position " << i << ": got " << v << ", expected "
                                           << next;
    }
  }
  if (next != n) return ::testing::AssertionFailure() << "only " << next << " of " << n;
  return ::testing::AssertionSuccess();
}

}  // namespace

TEST(ReconnectDelay, DoublesAndCapsWithJitter) {
  ClientOptions o;
  std::mt19937 rng(1);
  for (unsigned attempt = 0; attempt < 12; ++attempt) {
    const double base = std::min(1000.0 * (1u << attempt), 60'000.0);
    for (int k = 0; k < 200; ++k) {
      const auto d = reconnect_delay(o, attempt, rng).count();
      ASSERT_GE(d, static_cast<long>(base * 0.8) - 1) << attempt;
      ASSERT_LE(d, static_cast<long>(base * 1.2) + 1) << attempt;
    }
  }
}

TEST(MqttClient, Qos1DeliveredWithPuback) {
  Sink sink;
  Client c(fast_options(sink.broker->port()));
  ASSERT_TRUE(c.wait_connected(2s));
  EXPECT_EQ(c.publish("a/b", to_bytes("x"), 1), PublishStatus::delivered);
  EXPECT_EQ(c.last_acked_id(), 1);
  EXPECT_EQ(c.publish("a/b", to_bytes("y"), 1), PublishStatus::delivered);
  EXPECT_EQ(c.last_acked_id(), 2);
  EXPECT_EQ(c.publish("a/b", to_bytes("z"), 0), PublishStatus::delivered);
  EXPECT_TRUE(support::eventually([&] { return sink.count() == 3; }));
  EXPECT_EQ(sink.received(), (std::vector<std::string>{"x", "y", "z"}));
  EXPECT_EQ(c.buffer_depth(), 0u);
}

TEST(MqttClient, BufferCapDropsOldest) {
  const auto port = support::free_port();
  auto o = fast_options(port);
  o.buffer_cap = 100;
  Client c(o);
  for (int i = 0; i < 101; ++i)
    EXPECT_EQ(c.publish("t", to_bytes(std::to_string(i)), 1), PublishStatus::queued);
  EXPECT_EQ(c.dropped(), 1u);
  EXPECT_EQ(c.buffer_depth(), 100u);

  Sink sink(port);
  ASSERT_TRUE(c.wait_connected(3s));
  ASSERT_TRUE(c.wait_drained(5s));
  const auto got = sink.received();
  ASSERT_EQ(got.size(), 100u);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(got[i], std::to_string(i + 1));
}

TEST(MqttClient, OutageFlushesInOrder) {
  auto sink = std::make_unique<Sink>();
  const auto port = sink->broker->port();
  Client c(fast_options(port));
  ASSERT_TRUE(c.wait_connected(2s));

  std::vector<std::string> seen;
  for (int i = 0; i < 50; ++i) c.publish("t", to_bytes(std::to_string(i)), 1);
  ASSERT_TRUE(c.wait_drained(2s));
  seen = sink->received();
  sink.reset();  // broker gone

  ASSERT_TRUE(support::eventually([&] { return !c.connected(); }, 2s));
  for (int i = 50; i < 100; ++i)
    EXPECT_EQ(c.publish("t", to_bytes(std::to_string(i)), 1), PublishStatus::queued);
  EXPECT_EQ(c.buffer_depth(), 50u);

  Sink revived(port);
  ASSERT_TRUE(c.wait_connected(3s));
  ASSERT_TRUE(c.wait_drained(5s));
  for (auto& p : revived.received()) seen.push_back(p);
  EXPECT_TRUE(ordered_at_least_once(seen, 100));
  EXPECT_EQ(c.dropped(), 0u);
  EXPECT_GE(c.connects(), 2u);
}

TEST(MqttClient, SubscriptionSurvivesReconnect) {
  auto sink = std::make_unique<Sink>();
  const auto port = sink->broker->port();
  Client c(fast_options(port));
  std::mutex mu;
  std::vector<std::string> got;
  c.subscribe("cfg/#", 1, [&](const std::string& topic, const Bytes& payload) {
    std::lock_guard lk(mu);
    got.push_back(topic + "=" + to_string(payload));
  });
  ASSERT_TRUE(c.wait_connected(2s));
  ASSERT_TRUE(support::eventually([&] { return sink->broker->session_count() == 1; }));
  // SUBSCRIBE is asynchronous; retained delivery avoids racing it.
  sink->broker->publish("cfg/a", to_bytes("1"), 1, true);
  ASSERT_TRUE(support::eventually([&] {
    std::lock_guard lk(mu);
    return got.size() == 1;
  }));

  sink.reset();
  Sink revived(port);
  revived.broker->publish("cfg/b", to_bytes("2"), 1, true);
  ASSERT_TRUE(support::eventually([&] {
    std::lock_guard lk(mu);
    return got.size() == 2;
  }));
  std::lock_guard lk(mu);
  EXPECT_EQ(got, (std::vector<std::string>{"cfg/a=1", "cfg/b=2"}));
}

TEST(MqttClient, CloseIsPermanent) {
  Sink sink;
  Client c(fast_options(sink.broker->port()));
  ASSERT_TRUE(c.wait_connected(2s));
  ASSERT_TRUE(support::eventually([&] { return sink.broker->session_count() == 1; }));
  c.close();
  EXPECT_EQ(c.state(), ClientState::closed);
  EXPECT_THROW(c.publish("t", {}), ClientClosed);
  EXPECT_TRUE(support::eventually([&] { return sink.broker->session_count() == 0; }));
}

TEST(MqttClient, KeepalivePingsKeepSessionAlive) {
  Sink sink;
  auto o = fast_options(sink.broker->port());
  o.keepalive_s = 1;
  Client c(o);
  ASSERT_TRUE(c.wait_connected(2s));
  std::this_thread::sleep_for(2500ms);
  EXPECT_TRUE(c.connected());
  EXPECT_EQ(sink.broker->keepalive_disconnects(), 0u);
  EXPECT_EQ(c.connects(), 1u);
}
