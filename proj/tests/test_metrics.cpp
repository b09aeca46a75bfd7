#include <gtest/gtest.h>

#include <random>

#include "piico/metrics.hpp"

using namespace piico;
using namespace std::chrono_literals;

namespace {

TimePoint at_ms(std::int64_t ms) { return TimePoint(std::chrono::milliseconds(ms)); }

}  // namespace

TEST(WindowedCounter, MatchesCountingOracle) {
  std::mt19937 rng(1);
  WindowedCounter<int> c(1000ms);
  std::map<std::pair<int, std::int64_t>, std::uint64_t> oracle;
  const std::int64_t base = 1'568'365'158'000;
  for (int i = 0; i < 5000; ++i) {
    const int key = static_cast<int>(rng() % 3);
    const std::int64_t t = base + static_cast<std::int64_t>(rng() % 60'000);
    const std::uint64_t n = rng() % 200;
    c.record(key, n, at_ms(t));
    oracle[{key, t / 1000}] += n;
  }
  for (int key = 0; key < 3; ++key) {
    const auto series = c.series(key, at_ms(base), at_ms(base + 60'000));
    ASSERT_EQ(series.size(), 60u);
    std::uint64_t sum = 0;
    for (const auto& w : series) {
      const auto idx = w.window_start.time_since_epoch().count() / 1000;
      const auto it = oracle.find({key, idx});
      ASSERT_EQ(w.bytes, it == oracle.end() ? 0 : it->second);
      EXPECT_EQ(w.window_len, 1000ms);
      sum += w.bytes;
    }
    EXPECT_EQ(sum, c.total(key));
  }
}

TEST(WindowedCounter, ZeroFilledAndAligned) {
  WindowedCounter<std::string> c(1000ms);
  c.record("wifi", 100, at_ms(10'500));
  c.record("wifi", 50, at_ms(13'999));
  const auto s = c.series("wifi", at_ms(10'200), at_ms(14'000));
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(s[0].window_start, at_ms(10'000));
  EXPECT_EQ(s[0].bytes, 100u);
  EXPECT_EQ(s[1].bytes, 0u);
  EXPECT_EQ(s[2].bytes, 0u);
  EXPECT_EQ(s[3].bytes, 50u);
  EXPECT_TRUE(c.series("wifi", at_ms(5000), at_ms(5000)).empty());
  EXPECT_EQ(c.series("unknown", at_ms(0), at_ms(3000)).size(), 3u);
}

TEST(WindowedCounter, Retention) {
  WindowedCounter<int> c(1000ms, 3);
  for (int i = 0; i < 10; ++i) c.record(0, 1, at_ms(i * 1000));
  const auto s = c.series(0, at_ms(0), at_ms(10'000));
  std::uint64_t kept = 0;
  for (const auto& w : s) kept += w.bytes;
  EXPECT_EQ(kept, 3u);
  EXPECT_EQ(c.total(0), 10u);
}

TEST(ThroughputMeter, BitsPerSecond) {
  ThroughputMeter m(1000ms);
  m.record_bytes(ProtocolId::zigbee, 154, at_ms(2000));
  m.record_bytes(ProtocolId::wifi, 1000, at_ms(2100));
  const auto s = m.window_series(ProtocolId::zigbee, at_ms(2000), at_ms(3000));
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].interface, ProtocolId::zigbee);
  EXPECT_EQ(s[0].bytes, 154u);
  EXPECT_DOUBLE_EQ(s[0].bps, 1232.0);
  EXPECT_EQ(m.total_bytes(ProtocolId::wifi), 1000u);

  ThroughputMeter wide(10'000ms);
  wide.record_bytes(ProtocolId::wifi, 1000, at_ms(5));
  EXPECT_DOUBLE_EQ(wide.window_series(ProtocolId::wifi, at_ms(0), at_ms(1))[0].bps, 800.0);
}

TEST(ResourceSampler, EightMinutesAtTenSeconds) {
  auto provider = std::make_shared<ScriptedResourceProvider>(
      std::vector<std::optional<ResourceReading>>{ResourceReading{12.5, 1'500'000'000, 2'000'000'000}});
  ResourceSampler s(provider, 10s);
  const std::int64_t start = 1'568'365'158'000;
  for (std::int64_t t = 0; t < 480'000; t += 250) s.tick(at_ms(start + t));
  const auto samples = s.samples();
  EXPECT_EQ(samples.size(), 48u);
  for (std::size_t i = 1; i < samples.size(); ++i)
    EXPECT_EQ(samples[i].at - samples[i - 1].at, 10s);
  EXPECT_DOUBLE_EQ(samples.front().free_fraction(), 0.75);
}

TEST(ResourceSampler, LateTickKeepsGrid) {
  auto provider = std::make_shared<ScriptedResourceProvider>(
      std::vector<std::optional<ResourceReading>>{ResourceReading{1, 1, 2}});
  ResourceSampler s(provider, 10s);
  EXPECT_TRUE(s.tick(at_ms(0)));
  EXPECT_FALSE(s.tick(at_ms(9'999)));
  EXPECT_TRUE(s.tick(at_ms(13'000)));  // late
  EXPECT_FALSE(s.tick(at_ms(19'999)));
  EXPECT_TRUE(s.tick(at_ms(20'000)));  // back on the grid
  EXPECT_TRUE(s.tick(at_ms(55'000)));  // missed slots are not back-filled
  EXPECT_TRUE(s.tick(at_ms(60'000)));
  EXPECT_EQ(s.samples().size(), 5u);
}

TEST(ResourceSampler, UnavailableProviderSkips) {
  auto provider = std::make_shared<ScriptedResourceProvider>(std::vector<std::optional<ResourceReading>>{
      ResourceReading{1, 1, 2}, std::nullopt, ResourceReading{1, 5, 2}, ResourceReading{3, 1, 4}});
  ResourceSampler s(provider, 1s);
  for (int i = 0; i < 4; ++i) s.tick(at_ms(i * 1000));
  EXPECT_EQ(s.skipped(), 2u);  // unavailable, and free > total
  const auto samples = s.samples();
  ASSERT_EQ(samples.size(), 2u);
  EXPECT_DOUBLE_EQ(samples[1].free_fraction(), 0.25);
}

TEST(ResourceSampler, BoundedCapacity) {
  auto provider = std::make_shared<ScriptedResourceProvider>(
      std::vector<std::optional<ResourceReading>>{ResourceReading{1, 1, 2}});
  ResourceSampler s(provider, 1s, 10);
  for (int i = 0; i < 100; ++i) s.tick(at_ms(i * 1000));
  const auto samples = s.samples();
  ASSERT_EQ(samples.size(), 10u);
  EXPECT_EQ(samples.front().at, at_ms(90'000));
}

TEST(HostResourceProvider, ReadsProc) {
  HostResourceProvider p;
  const auto first = p.read();
  ASSERT_TRUE(first);
  EXPECT_GT(first->ram_total_bytes, 0u);
  EXPECT_LE(first->ram_free_bytes, first->ram_total_bytes);
  volatile double x = 0;
  for (int i = 0; i < 2'000'000; ++i) x = x + i;
  const auto second = p.read();
  ASSERT_TRUE(second);
  EXPECT_GE(second->cpu_pct, 0.0);
  EXPECT_LE(second->cpu_pct, 100.0);
}
