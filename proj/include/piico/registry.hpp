#pragma once

// Live system model: nodes, sensors, protocol assignments, alarm rules and
// the gateway identity. Every change is an operation record that is
// appended to a change log, applied, and snapshotted to the state file.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "piico/normalizer.hpp"
#include "piico/protocol.hpp"
#include "piico/registry_error.hpp"
#include "piico/rules.hpp"

namespace piico {

struct SensorDescriptor {
  std::string sensor_id;
  std::string magnitude;
  ProtocolId assigned_protocol = ProtocolId::wifi;
  bool operator==(const SensorDescriptor&) const = default;
};

struct NodeDescriptor {
  std::string node_id;
  std::string gps = "-";
  int sampling_period_s = 6;
  std::vector<SensorDescriptor> sensors;
  bool enabled = true;
  /// Links the node's hardware offers; sensor assignments must use one.
  std::vector<ProtocolId> links{ProtocolId::wifi, ProtocolId::bluetooth, ProtocolId::zigbee};
  bool operator==(const NodeDescriptor&) const = default;

  const SensorDescriptor* find_sensor(std::string_view sensor_id) const;
};

/// Retained downlink message on piico/cfg/<node-id>.
struct ConfigCommand {
  std::string target_node;
  std::optional<int> sampling_period_s;
  std::map<std::string, ProtocolId> protocol_overrides;
  std::optional<bool> enabled;
  bool operator==(const ConfigCommand&) const = default;

  static ConfigCommand from_node(const NodeDescriptor& n);
};

struct NodePatch {
  std::optional<int> sampling_period_s;
  std::optional<std::string> gps;
  std::optional<bool> enabled;
};

struct RegistryState {
  std::uint64_t seq = 0;
  GatewayIdentity identity;
  std::map<std::string, NodeDescriptor> nodes;
  std::map<std::string, AlarmRule> rules;
  std::uint64_t next_rule_number = 1;
  bool operator==(const RegistryState&) const = default;
};

// JSON forms shared by persistence and the HTTP API (hyphenated keys).
nlohmann::json to_json(const SensorDescriptor& s);
nlohmann::json to_json(const NodeDescriptor& n);
nlohmann::json to_json(const GatewayIdentity& id);
nlohmann::json to_json(const ConfigCommand& c);
nlohmann::json to_json(const RegistryState& st);
/// Missing optional keys take their defaults. Throws RegistryError{validation}.
SensorDescriptor sensor_from_json(const nlohmann::json& j);
NodeDescriptor node_from_json(const nlohmann::json& j);
GatewayIdentity identity_from_json(const nlohmann::json& j);
ConfigCommand config_from_json(const nlohmann::json& j);
RegistryState state_from_json(const nlohmann::json& j);

class Registry {
 public:
  /// Empty path keeps state in memory only. Otherwise loads `state_file`
  /// and replays `<state_file>.log` entries newer than the snapshot.
  explicit Registry(std::filesystem::path state_file = {});

  /// Called after each accepted change, under the writer lock, with the
  /// node's new config (nullopt when the node was removed).
  using ConfigPublisher =
      std::function<void(const std::string& node_id, const std::optional<ConfigCommand>&)>;
  /// Installs the publisher and immediately publishes every node's config.
  void set_config_publisher(ConfigPublisher publisher);

  NodeDescriptor register_node(NodeDescriptor node);
  void remove_node(const std::string& node_id);
  NodeDescriptor set_sampling_period(const std::string& node_id, int period_s);
  NodeDescriptor patch_node(const std::string& node_id, const NodePatch& patch);
  NodeDescriptor assign_protocol(const std::string& node_id, const std::string& sensor_id,
                                 ProtocolId protocol);
  NodeDescriptor upsert_sensor(const std::string& node_id, SensorDescriptor sensor);
  NodeDescriptor remove_sensor(const std::string& node_id, const std::string& sensor_id);
  /// Empty rule_id gets a generated one.
  AlarmRule add_rule(AlarmRule rule);
  void remove_rule(const std::string& rule_id);
  GatewayIdentity set_identity(GatewayIdentity identity);

  std::shared_ptr<const RegistryState> snapshot() const;
  const std::filesystem::path& state_file() const noexcept { return state_file_; }
  std::filesystem::path log_file() const;

  /// Applies one logged operation to `state`. Throws RegistryError.
  static void apply(RegistryState& state, const nlohmann::json& op);

  /// State obtained by replaying a log from scratch (no snapshot).
  static RegistryState replay_log(const std::filesystem::path& log_file);

 private:
  RegistryState commit(nlohmann::json op, const std::string& touched_node);
  void persist(const RegistryState& st, const nlohmann::json& op);
  void publish_node(const RegistryState& st, const std::string& node_id);

  std::filesystem::path state_file_;
  mutable std::mutex write_mu_;
  mutable std::mutex snap_mu_;
  std::shared_ptr<const RegistryState> state_;
  ConfigPublisher publisher_;
};

/// Newest-first window over the last `capacity` records.
class RecentRecords {
 public:
  explicit RecentRecords(std::size_t capacity = 10'000) : capacity_(capacity) {}
  void append(SensorRecord rec);
  std::vector<SensorRecord> latest(std::size_t limit) const;
  std::size_t size() const;

 private:
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::vector<SensorRecord> ring_;
  std::size_t head_ = 0;  // next write slot once full
};

}  // namespace piico
