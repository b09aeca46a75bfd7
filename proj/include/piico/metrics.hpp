#pragma once

// Interface throughput and host resource time series.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "piico/protocol.hpp"
#include "piico/series.hpp"

namespace piico {

struct WindowCount {
  TimePoint window_start;
  std::chrono::milliseconds window_len;
  std::uint64_t bytes = 0;

  /// bytes * 8 / window_len, from integers.
  double bps() const noexcept {
    return static_cast<double>(bytes * 8) * 1000.0 / static_cast<double>(window_len.count());
  }
};

/// Byte totals per (key, fixed window). Windows are aligned to multiples
/// of the window length since the epoch; only the newest `retention`
/// windows per key are kept.
template <typename Key>
class WindowedCounter {
 public:
  explicit WindowedCounter(std::chrono::milliseconds window = std::chrono::seconds(1),
                           std::size_t retention = 86'400)
      : window_(window), retention_(retention) {}

  std::chrono::milliseconds window() const noexcept { return window_; }

  void record(const Key& key, std::uint64_t n_bytes, TimePoint at) {
    const auto idx = bucket_of(at);
    std::lock_guard lk(mu_);
    auto& buckets = counts_[key];
    buckets[idx] += n_bytes;
    totals_[key] += n_bytes;
    while (buckets.size() > retention_) buckets.erase(buckets.begin());
  }

  /// Contiguous windows from the one containing `from` up to `to`
  /// (exclusive), zero-filled. Empty when from >= to.
  std::vector<WindowCount> series(const Key& key, TimePoint from, TimePoint to) const {
    std::vector<WindowCount> out;
    if (!(from < to)) return out;
    const auto first = bucket_of(from);
    const auto last = bucket_of(to - std::chrono::milliseconds(1));
    std::lock_guard lk(mu_);
    const auto it = counts_.find(key);
    for (auto b = first; b <= last; ++b) {
      WindowCount w{TimePoint(window_ * b), window_, 0};
      if (it != counts_.end()) {
        const auto bit = it->second.find(b);
        if (bit != it->second.end()) w.bytes = bit->second;
      }
      out.push_back(w);
    }
    return out;
  }

  std::uint64_t total(const Key& key) const {
    std::lock_guard lk(mu_);
    const auto it = totals_.find(key);
    return it == totals_.end() ? 0 : it->second;
  }

 private:
  std::int64_t bucket_of(TimePoint t) const {
    const auto ms = t.time_since_epoch().count();
    const auto w = window_.count();
    return ms >= 0 ? ms / w : -((-ms + w - 1) / w);
  }

  std::chrono::milliseconds window_;
  std::size_t retention_;
  mutable std::mutex mu_;
  std::map<Key, std::map<std::int64_t, std::uint64_t>> counts_;
  std::map<Key, std::uint64_t> totals_;
};

struct ThroughputSample {
  ProtocolId interface = ProtocolId::wifi;
  TimePoint window_start;
  std::chrono::milliseconds window_len{1000};
  std::uint64_t bytes = 0;
  double bps = 0;
};

/// Accepted on-wire bytes per link interface.
class ThroughputMeter {
 public:
  explicit ThroughputMeter(std::chrono::milliseconds window = std::chrono::seconds(1),
                           std::size_t retention = 86'400)
      : counter_(window, retention) {}

  void record_bytes(ProtocolId iface, std::uint64_t n_bytes, TimePoint at) {
    counter_.record(iface, n_bytes, at);
  }

  std::vector<ThroughputSample> window_series(ProtocolId iface, TimePoint from,
                                              TimePoint to) const;

  std::uint64_t total_bytes(ProtocolId iface) const { return counter_.total(iface); }
  std::chrono::milliseconds window() const noexcept { return counter_.window(); }

 private:
  WindowedCounter<ProtocolId> counter_;
};

struct ResourceSample {
  TimePoint at;
  double cpu_pct = 0;
  std::uint64_t ram_free_bytes = 0;
  std::uint64_t ram_total_bytes = 0;

  double free_fraction() const noexcept {
    return ram_total_bytes ? static_cast<double>(ram_free_bytes) /
                                 static_cast<double>(ram_total_bytes)
                           : 0.0;
  }
};

struct ResourceReading {
  double cpu_pct = 0;
  std::uint64_t ram_free_bytes = 0;
  std::uint64_t ram_total_bytes = 0;
};

class ResourceProvider {
 public:
  virtual ~ResourceProvider() = default;
  /// nullopt when the counters cannot be read right now.
  virtual std::optional<ResourceReading> read() = 0;
};

/// Linux /proc/stat and /proc/meminfo. CPU% is measured between
/// consecutive reads; the first read reports 0.
class HostResourceProvider : public ResourceProvider {
 public:
  std::optional<ResourceReading> read() override;

 private:
  std::uint64_t prev_busy_ = 0;
  std::uint64_t prev_total_ = 0;
};

/// Replays a fixed list of readings, repeating the last one. nullopt
/// entries model an unavailable provider.
class ScriptedResourceProvider : public ResourceProvider {
 public:
  explicit ScriptedResourceProvider(std::vector<std::optional<ResourceReading>> script)
      : script_(std::move(script)) {}
  std::optional<ResourceReading> read() override;

 private:
  std::vector<std::optional<ResourceReading>> script_;
  std::size_t next_ = 0;
};

/// Samples a provider on a fixed schedule driven by tick().
class ResourceSampler {
 public:
  ResourceSampler(std::shared_ptr<ResourceProvider> provider, std::chrono::milliseconds period,
                  std::size_t capacity = 8'640);

  /// Takes a sample if one is due at `now`. Returns true when a sample was stored.
  bool tick(TimePoint now);

  std::vector<ResourceSample> samples() const { return buffer_.snapshot(); }
  std::uint64_t skipped() const noexcept { return skipped_.load(); }
  std::chrono::milliseconds period() const noexcept { return period_; }

 private:
  std::shared_ptr<ResourceProvider> provider_;
  std::chrono::milliseconds period_;
  SeriesBuffer<ResourceSample> buffer_;
  std::mutex mu_;
  std::optional<TimePoint> next_due_;
  std::atomic<std::uint64_t> skipped_{0};
};

}  // namespace piico
