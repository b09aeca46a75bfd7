#pragma once

// Simulated wireless sensor nodes: six environmental variables, each sent
// on its assigned link every sampling period, reconfigured over MQTT.

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <stop_token>
#include <string>
#include <vector>

#include "json.hpp"
#include "piico/frame.hpp"
#include "piico/net.hpp"
#include "piico/protocol.hpp"

namespace piico {

enum class GeneratorKind { bounded_random_walk, fixed_sequence };

/// Bounds, step and quantum are expressed in tenths (one decimal place).
/// The walk moves by a uniform integer number of tenths in [-step, step],
/// is clamped to [min, max] and snapped to multiples of `quantum` above min.
struct SensorGenerator {
  GeneratorKind kind = GeneratorKind::bounded_random_walk;
  double min = 0;
  double max = 0;
  double step = 0.1;
  double quantum = 0.1;
  std::uint64_t seed = 1;
  std::vector<std::string> sequence;  // fixed_sequence values, cycled
};

/// Stateful reading source. Throws std::invalid_argument for bounds that
/// are not whole tenths, min > max, or an empty fixed sequence.
class ReadingGenerator {
 public:
  explicit ReadingGenerator(const SensorGenerator& g);
  std::string next();

 private:
  SensorGenerator g_;
  std::mt19937_64 rng_;
  std::int64_t lo_ = 0, hi_ = 0, step_ = 0, quantum_ = 1, value_ = 0;
  std::uint64_t tick_ = 0;
};

/// Reading at `tick` (0-based) for a fresh generator; replays from the seed.
std::string generate_reading(const SensorGenerator& g, std::uint64_t tick);

/// Renders tenths as a one-decimal string ("199" -> "19.9").
std::string format_tenths(std::int64_t tenths);

struct SensorSpec {
  std::string sensor_id;
  std::string magnitude;
  ProtocolId protocol = ProtocolId::wifi;
  SensorGenerator generator;
};

struct SimNodeConfig {
  std::string node_id;
  std::map<ProtocolId, net::HostPort> gateway_links;
  /// Embedded broker; when set the node follows piico/cfg/<node-id>.
  std::optional<net::HostPort> broker;
  std::chrono::milliseconds sampling_period{6'000};
  std::chrono::milliseconds run_duration{480'000};
  std::vector<SensorSpec> sensors;

  /// Optional tap on every send attempt.
  std::function<void(ProtocolId, const LinkFrame&, bool sent)> observer;
};

nlohmann::json to_json(const SimNodeConfig& c);
/// Throws std::invalid_argument.
SimNodeConfig sim_config_from_json(const nlohmann::json& j);

/// Two nodes, six sensors each: wind direction/speed on bluetooth,
/// solar radiation/precipitation on zigbee, temperature/humidity on wifi.
std::vector<SimNodeConfig> default_fleet(const std::string& gateway_host = "127.0.0.1");

struct RunReport {
  std::string node_id;
  std::uint64_t ticks = 0;
  std::map<ProtocolId, std::uint64_t> frames_sent;
  std::map<ProtocolId, std::uint64_t> send_failures;
  std::uint64_t config_updates = 0;
  std::chrono::milliseconds final_period{0};

  std::uint64_t total_sent() const;
  std::uint64_t total_failures() const;
};

nlohmann::json to_json(const RunReport& r);

/// Runs until run_duration has elapsed or `stop` is requested. Tick k is
/// scheduled one (current) period after tick k-1; configuration received
/// meanwhile is applied atomically before the next tick.
RunReport run_node(const SimNodeConfig& config, std::stop_token stop = {});

}  // namespace piico
