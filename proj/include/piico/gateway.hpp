#pragma once

// The gateway process: link listeners, ingest pipeline, embedded broker,
// uplink client, HTTP API and metrics samplers.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "piico/api.hpp"
#include "piico/bounded_queue.hpp"
#include "piico/link.hpp"
#include "piico/metrics.hpp"
#include "piico/mqtt/broker.hpp"
#include "piico/mqtt/client.hpp"
#include "piico/normalizer.hpp"
#include "piico/registry.hpp"

namespace piico {

struct UpstreamConfig {
  net::HostPort address{"iot.eclipse.org", 1883};
  std::uint8_t qos = 0;
  std::size_t buffer_cap = 10'000;
  std::string client_id = "piico-gateway";
  std::uint16_t keepalive_s = 30;
  std::chrono::milliseconds backoff_initial{1'000};
  std::chrono::milliseconds backoff_max{60'000};
};

struct GatewayConfig {
  std::vector<LinkEndpoint> links{
      {ProtocolId::wifi, {"0.0.0.0", default_port(ProtocolId::wifi)}},
      {ProtocolId::bluetooth, {"0.0.0.0", default_port(ProtocolId::bluetooth)}},
      {ProtocolId::zigbee, {"0.0.0.0", default_port(ProtocolId::zigbee)}},
  };
  net::HostPort broker_bind{"0.0.0.0", 1883};
  std::vector<std::string> broker_allowlist;
  UpstreamConfig upstream;
  net::HostPort api_bind{"0.0.0.0", 8080};
  std::string ui_dir;
  GatewayIdentity identity;
  /// Empty keeps the registry in memory.
  std::string state_file = "piico-state.json";
  std::chrono::milliseconds metrics_window{1'000};
  std::chrono::seconds resource_period{10};
  std::size_t recent_capacity = 10'000;
  std::size_t inflight_cap = 1'024;

  bool operator==(const GatewayConfig&) const;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing keys take defaults; unknown keys and bad values throw
/// ConfigError naming the field. Parse errors carry line information.
GatewayConfig parse_config(std::string_view text);
GatewayConfig load_config(const std::filesystem::path& path);
nlohmann::json dump_config(const GatewayConfig& c);
void validate_config(const GatewayConfig& c);

class StartupError : public std::runtime_error {
 public:
  StartupError(std::string component, const std::string& detail)
      : std::runtime_error(component + ": " + detail), component_(std::move(component)) {}
  const std::string& component() const noexcept { return component_; }

 private:
  std::string component_;
};

struct PipelineCounters {
  std::uint64_t frames_accepted = 0;
  std::uint64_t frames_published = 0;
  std::uint64_t records_published = 0;
  std::uint64_t alerts = 0;
  std::map<std::string, std::uint64_t> rejected;

  std::uint64_t rejected_total() const;
};

struct GatewayHooks {
  /// Listener thread, after metrics accounting.
  std::function<void(const ReceivedFrame&)> on_frame;
  /// Worker thread, after the record was handed to the uplink.
  std::function<void(const SensorRecord&)> on_record;
  /// Defaults to the host /proc reader.
  std::shared_ptr<ResourceProvider> resource_provider;
};

class Gateway {
 public:
  /// Starts every component. Throws StartupError naming the one that failed.
  explicit Gateway(GatewayConfig config, GatewayHooks hooks = {});
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  std::uint16_t link_port(ProtocolId p) const;
  std::uint16_t broker_port() const noexcept { return broker_->port(); }
  std::uint16_t api_port() const noexcept { return api_->port(); }

  Registry& registry() noexcept { return *registry_; }
  const RecentRecords& records() const noexcept { return records_; }
  const ThroughputMeter& throughput() const noexcept { return throughput_; }
  const ResourceSampler& resources() const noexcept { return *sampler_; }
  mqtt::Broker& broker() noexcept { return *broker_; }
  mqtt::Client& uplink() noexcept { return *uplink_; }

  PipelineCounters counters() const;
  nlohmann::json health() const;

  /// Waits until every accepted frame has left the pipeline.
  bool wait_idle(std::chrono::milliseconds timeout) const;

  /// Stops intake, drains the pipeline, flushes the uplink for up to
  /// `flush_timeout`, then stops the remaining components.
  void stop(std::chrono::milliseconds flush_timeout = std::chrono::seconds(5));

 private:
  bool accept(ReceivedFrame&& f);
  void worker();
  void process(const ReceivedFrame& f);
  void reject(const std::string& cause);
  void sampler_loop(std::stop_token st);

  GatewayConfig config_;
  GatewayHooks hooks_;

  std::unique_ptr<Registry> registry_;
  RecentRecords records_;
  ThroughputMeter throughput_;
  std::unique_ptr<ResourceSampler> sampler_;
  RuleStats rule_stats_;

  std::unique_ptr<mqtt::Broker> broker_;
  std::unique_ptr<mqtt::Client> uplink_;
  std::vector<std::unique_ptr<LinkListener>> listeners_;
  std::unique_ptr<ApiServer> api_;

  BoundedQueue<ReceivedFrame> queue_;
  mutable std::mutex counters_mu_;
  mutable std::condition_variable idle_cv_;
  PipelineCounters counters_;
  std::uint64_t finished_ = 0;

  std::thread worker_;
  std::jthread sampler_thread_;
  std::once_flag stopped_;
};

}  // namespace piico
