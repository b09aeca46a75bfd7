#include "piico/registry.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include <unistd.h>

#include "piico/frame.hpp"
#include "piico/utf8.hpp"

namespace piico {

using nlohmann::json;

namespace {

RegistryError invalid(const std::string& why) {
  return RegistryError(RegistryErrc::validation, why);
}

bool safe_token(std::string_view s) {
  return !s.empty() && is_valid_utf8(s) && s.find_first_of(";\n\r") == std::string_view::npos;
}

ProtocolId protocol_field(const json& j) {
  if (!j.is_string()) throw invalid("protocol must be a string");
  const auto p = parse_protocol(j.get<std::string>());
  if (!p) throw RegistryError(RegistryErrc::unknown_link, "unknown protocol " + j.dump());
  return *p;
}

void validate_node(const NodeDescriptor& n) {
  if (n.node_id.empty() || n.node_id.size() > kMaxNodeIdLen || !is_valid_utf8(n.node_id) ||
      n.node_id.find('/') != std::string::npos)
    throw invalid("node-id must be 1-32 bytes of UTF-8 without '/'");
  if (n.sampling_period_s < 1)
    throw RegistryError(RegistryErrc::invalid_period, "sampling-period must be >= 1");
  if (n.links.empty()) throw invalid("node needs at least one link");
  std::set<ProtocolId> links(n.links.begin(), n.links.end());
  if (links.size() != n.links.size()) throw invalid("duplicate link");
  std::set<std::string> seen;
  for (const auto& s : n.sensors) {
    if (!safe_token(s.sensor_id) || s.sensor_id.find('/') != std::string::npos)
      throw invalid("bad sensor-id '" + s.sensor_id + "'");
    if (!safe_token(s.magnitude)) throw invalid("bad magnitude for " + s.sensor_id);
    if (!seen.insert(s.sensor_id).second)
      throw RegistryError(RegistryErrc::duplicate_sensor, s.sensor_id);
    if (!links.count(s.assigned_protocol))
      throw RegistryError(RegistryErrc::unknown_link,
                          n.node_id + " has no " + std::string(to_string(s.assigned_protocol)) +
                              " link");
  }
}

NodeDescriptor& find_node(RegistryState& st, const std::string& id) {
  auto it = st.nodes.find(id);
  if (it == st.nodes.end()) throw RegistryError(RegistryErrc::unknown_node, id);
  return it->second;
}

std::optional<std::uint64_t> generated_rule_number(std::string_view id) {
  if (id.substr(0, 5) != "rule-" || id.size() == 5) return std::nullopt;
  std::uint64_t n = 0;
  for (char c : id.substr(5)) {
    if (c < '0' || c > '9') return std::nullopt;
    n = n * 10 + static_cast<std::uint64_t>(c - '0');
  }
  return n;
}

}  // namespace

const char* to_string(RegistryErrc e) noexcept {
  switch (e) {
    case RegistryErrc::duplicate_node: return "duplicate-node";
    case RegistryErrc::duplicate_sensor: return "duplicate-sensor";
    case RegistryErrc::duplicate_rule: return "duplicate-rule";
    case RegistryErrc::unknown_node: return "unknown-node";
    case RegistryErrc::unknown_sensor: return "unknown-sensor";
    case RegistryErrc::unknown_rule: return "unknown-rule";
    case RegistryErrc::unknown_link: return "unknown-link";
    case RegistryErrc::invalid_period: return "invalid-period";
    case RegistryErrc::invalid_rule: return "invalid-rule";
    case RegistryErrc::validation: return "validation";
    case RegistryErrc::io_error: return "io-error";
  }
  return "unknown";
}

RegistryError::RegistryError(RegistryErrc code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

const SensorDescriptor* NodeDescriptor::find_sensor(std::string_view sensor_id) const {
  for (const auto& s : sensors)
    if (s.sensor_id == sensor_id) return &s;
  return nullptr;
}

ConfigCommand ConfigCommand::from_node(const NodeDescriptor& n) {
  ConfigCommand c;
  c.target_node = n.node_id;
  c.sampling_period_s = n.sampling_period_s;
  for (const auto& s : n.sensors) c.protocol_overrides[s.sensor_id] = s.assigned_protocol;
  c.enabled = n.enabled;
  return c;
}

json to_json(const SensorDescriptor& s) {
  return {{"sensor-id", s.sensor_id},
          {"magnitude", s.magnitude},
          {"protocol", std::string(to_string(s.assigned_protocol))}};
}

json to_json(const NodeDescriptor& n) {
  json sensors = json::array();
  for (const auto& s : n.sensors) sensors.push_back(to_json(s));
  json links = json::array();
  for (auto l : n.links) links.push_back(std::string(to_string(l)));
  return {{"node-id", n.node_id}, {"gps", n.gps},     {"sampling-period", n.sampling_period_s},
          {"enabled", n.enabled}, {"links", links},   {"sensors", sensors}};
}

json to_json(const GatewayIdentity& id) {
  return {{"gate-id", id.gate_id}, {"network-id", id.network_id}};
}

json to_json(const ConfigCommand& c) {
  json j = {{"target-node", c.target_node}};
  if (c.sampling_period_s) j["sampling-period"] = *c.sampling_period_s;
  if (!c.protocol_overrides.empty()) {
    json m = json::object();
    for (const auto& [sid, p] : c.protocol_overrides) m[sid] = std::string(to_string(p));
    j["protocols"] = m;
  }
  if (c.enabled) j["enabled"] = *c.enabled;
  return j;
}

json to_json(const RegistryState& st) {
  json nodes = json::array();
  for (const auto& [id, n] : st.nodes) nodes.push_back(to_json(n));
  json rules = json::array();
  for (const auto& [id, r] : st.rules) rules.push_back(to_json(r));
  return {{"seq", st.seq},     {"identity", to_json(st.identity)},
          {"nodes", nodes},    {"rules", rules},
          {"next-rule", st.next_rule_number}};
}

SensorDescriptor sensor_from_json(const json& j) {
  if (!j.is_object()) throw invalid("sensor must be an object");
  SensorDescriptor s;
  try {
    s.sensor_id = j.at("sensor-id").get<std::string>();
    s.magnitude = j.value("magnitude", std::string{});
  } catch (const json::exception& e) {
    throw invalid(e.what());
  }
  s.assigned_protocol = j.contains("protocol") ? protocol_field(j["protocol"]) : ProtocolId::wifi;
  return s;
}

NodeDescriptor node_from_json(const json& j) {
  if (!j.is_object()) throw invalid("node must be an object");
  NodeDescriptor n;
  try {
    n.node_id = j.at("node-id").get<std::string>();
    n.gps = j.value("gps", std::string("-"));
    if (j.contains("sampling-period")) {
      const auto& p = j["sampling-period"];
      if (!p.is_number_integer()) throw invalid("sampling-period must be an integer");
      n.sampling_period_s = p.get<int>();
    }
    n.enabled = j.value("enabled", true);
  } catch (const json::exception& e) {
    throw invalid(e.what());
  }
  if (j.contains("links")) {
    if (!j["links"].is_array()) throw invalid("links must be an array");
    n.links.clear();
    for (const auto& l : j["links"]) n.links.push_back(protocol_field(l));
  }
  if (j.contains("sensors")) {
    if (!j["sensors"].is_array()) throw invalid("sensors must be an array");
    for (const auto& s : j["sensors"]) n.sensors.push_back(sensor_from_json(s));
  }
  if (n.gps.empty()) n.gps = "-";
  return n;
}

GatewayIdentity identity_from_json(const json& j) {
  if (!j.is_object()) throw invalid("identity must be an object");
  GatewayIdentity id;
  try {
    id.gate_id = j.value("gate-id", std::string("-"));
    id.network_id = j.value("network-id", std::string("-"));
  } catch (const json::exception& e) {
    throw invalid(e.what());
  }
  if (id.gate_id.empty()) id.gate_id = "-";
  if (id.network_id.empty()) id.network_id = "-";
  for (const auto* v : {&id.gate_id, &id.network_id})
    if (v->find_first_of("/+#") != std::string::npos || !is_valid_utf8(*v))
      throw invalid("identity values must be topic-safe");
  return id;
}

ConfigCommand config_from_json(const json& j) {
  ConfigCommand c;
  try {
    c.target_node = j.at("target-node").get<std::string>();
    if (j.contains("sampling-period")) c.sampling_period_s = j["sampling-period"].get<int>();
    if (j.contains("protocols"))
      for (const auto& [sid, p] : j["protocols"].items()) c.protocol_overrides[sid] = protocol_field(p);
    if (j.contains("enabled")) c.enabled = j["enabled"].get<bool>();
  } catch (const json::exception& e) {
    throw invalid(e.what());
  }
  if (!c.sampling_period_s && c.protocol_overrides.empty() && !c.enabled)
    throw invalid("config command sets nothing");
  return c;
}

RegistryState state_from_json(const json& j) {
  RegistryState st;
  try {
    st.seq = j.value("seq", std::uint64_t{0});
    st.next_rule_number = j.value("next-rule", std::uint64_t{1});
    if (j.contains("identity")) st.identity = identity_from_json(j["identity"]);
    for (const auto& n : j.value("nodes", json::array())) {
      auto node = node_from_json(n);
      st.nodes[node.node_id] = std::move(node);
    }
    for (const auto& r : j.value("rules", json::array())) {
      auto rule = rule_from_json(r);
      st.rules[rule.rule_id] = std::move(rule);
    }
  } catch (const json::exception& e) {
    throw invalid(e.what());
  }
  return st;
}

void Registry::apply(RegistryState& st, const json& op) {
  const std::string kind = op.at("op").get<std::string>();
  if (kind == "register_node") {
    auto n = node_from_json(op.at("node"));
    validate_node(n);
    if (st.nodes.count(n.node_id)) throw RegistryError(RegistryErrc::duplicate_node, n.node_id);
    st.nodes[n.node_id] = std::move(n);
  } else if (kind == "remove_node") {
    const auto id = op.at("node-id").get<std::string>();
    find_node(st, id);
    st.nodes.erase(id);
  } else if (kind == "patch_node") {
    auto& n = find_node(st, op.at("node-id").get<std::string>());
    NodeDescriptor next = n;
    if (op.contains("sampling-period")) {
      if (!op["sampling-period"].is_number_integer())
        throw RegistryError(RegistryErrc::invalid_period, "sampling-period must be an integer");
      next.sampling_period_s = op["sampling-period"].get<int>();
    }
    if (op.contains("gps")) {
      next.gps = op["gps"].get<std::string>();
      if (next.gps.empty()) next.gps = "-";
    }
    if (op.contains("enabled")) next.enabled = op["enabled"].get<bool>();
    validate_node(next);
    n = std::move(next);
  } else if (kind == "assign_protocol") {
    auto& n = find_node(st, op.at("node-id").get<std::string>());
    const auto sid = op.at("sensor-id").get<std::string>();
    const auto proto = protocol_field(op.at("protocol"));
    auto it = std::find_if(n.sensors.begin(), n.sensors.end(),
                           [&](const SensorDescriptor& s) { return s.sensor_id == sid; });
    if (it == n.sensors.end()) throw RegistryError(RegistryErrc::unknown_sensor, sid);
    if (std::find(n.links.begin(), n.links.end(), proto) == n.links.end())
      throw RegistryError(RegistryErrc::unknown_link,
                          n.node_id + " has no " + std::string(to_string(proto)) + " link");
    it->assigned_protocol = proto;
  } else if (kind == "upsert_sensor") {
    auto& n = find_node(st, op.at("node-id").get<std::string>());
    NodeDescriptor next = n;
    auto s = sensor_from_json(op.at("sensor"));
    auto it = std::find_if(next.sensors.begin(), next.sensors.end(),
                           [&](const SensorDescriptor& x) { return x.sensor_id == s.sensor_id; });
    if (it == next.sensors.end())
      next.sensors.push_back(std::move(s));
    else
      *it = std::move(s);
    validate_node(next);
    n = std::move(next);
  } else if (kind == "remove_sensor") {
    auto& n = find_node(st, op.at("node-id").get<std::string>());
    const auto sid = op.at("sensor-id").get<std::string>();
    const auto before = n.sensors.size();
    std::erase_if(n.sensors, [&](const SensorDescriptor& s) { return s.sensor_id == sid; });
    if (n.sensors.size() == before) throw RegistryError(RegistryErrc::unknown_sensor, sid);
  } else if (kind == "add_rule") {
    auto r = rule_from_json(op.at("rule"));
    if (r.rule_id.empty()) throw RegistryError(RegistryErrc::invalid_rule, "rule-id missing");
    if (st.rules.count(r.rule_id)) throw RegistryError(RegistryErrc::duplicate_rule, r.rule_id);
    if (auto n = generated_rule_number(r.rule_id))
      st.next_rule_number = std::max(st.next_rule_number, *n + 1);
    st.rules[r.rule_id] = std::move(r);
  } else if (kind == "remove_rule") {
    const auto id = op.at("rule-id").get<std::string>();
    if (!st.rules.erase(id)) throw RegistryError(RegistryErrc::unknown_rule, id);
  } else if (kind == "set_identity") {
    st.identity = identity_from_json(op.at("identity"));
  } else {
    throw invalid("unknown operation " + kind);
  }
  if (op.contains("seq")) st.seq = op["seq"].get<std::uint64_t>();
}

RegistryState Registry::replay_log(const std::filesystem::path& log_file) {
  RegistryState st;
  std::ifstream in(log_file);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json op = json::parse(line, nullptr, false);
    if (op.is_discarded()) break;  // torn final write
    apply(st, op);
  }
  return st;
}

Registry::Registry(std::filesystem::path state_file) : state_file_(std::move(state_file)) {
  RegistryState st;
  if (!state_file_.empty()) {
    if (std::filesystem::exists(state_file_)) {
      std::ifstream in(state_file_);
      json j = json::parse(in, nullptr, false);
      if (j.is_discarded())
        throw RegistryError(RegistryErrc::io_error, "unreadable state file " + state_file_.string());
      st = state_from_json(j);
    }
    std::ifstream log(log_file());
    std::string line;
    while (std::getline(log, line)) {
      if (line.empty()) continue;
      json op = json::parse(line, nullptr, false);
      if (op.is_discarded()) break;
      if (op.value("seq", std::uint64_t{0}) <= st.seq) continue;
      apply(st, op);
    }
    // Make sure the directory is usable before accepting changes.
    std::error_code ec;
    if (auto dir = state_file_.parent_path(); !dir.empty())
      std::filesystem::create_directories(dir, ec);
    std::FILE* probe = std::fopen(log_file().c_str(), "a");
    if (!probe) throw RegistryError(RegistryErrc::io_error, "cannot write " + log_file().string());
    std::fclose(probe);
  }
  state_ = std::make_shared<const RegistryState>(std::move(st));
}

std::filesystem::path Registry::log_file() const {
  auto p = state_file_;
  p += ".log";
  return p;
}

std::shared_ptr<const RegistryState> Registry::snapshot() const {
  std::lock_guard lk(snap_mu_);
  return state_;
}

void Registry::persist(const RegistryState& st, const json& op) {
  if (state_file_.empty()) return;
  {
    const auto log = log_file();
    std::FILE* f = std::fopen(log.c_str(), "a");
    if (!f) throw RegistryError(RegistryErrc::io_error, "cannot append " + log.string());
    const std::string line = op.dump() + "\n";
    const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size() &&
                    std::fflush(f) == 0 && ::fsync(::fileno(f)) == 0;
    std::fclose(f);
    if (!ok) throw RegistryError(RegistryErrc::io_error, "write " + log.string());
  }
  auto tmp = state_file_;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << to_json(st).dump(2) << "\n";
    if (!out) throw RegistryError(RegistryErrc::io_error, "write " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, state_file_, ec);
  if (ec) throw RegistryError(RegistryErrc::io_error, "rename: " + ec.message());
}

RegistryState Registry::commit(json op, const std::string& touched_node) {
  std::lock_guard wl(write_mu_);
  RegistryState next = *snapshot();
  op["seq"] = next.seq + 1;
  // Generated rule ids are fixed before logging so replay is deterministic.
  if (op["op"] == "add_rule" && op["rule"].value("rule-id", std::string{}).empty())
    op["rule"]["rule-id"] = "rule-" + std::to_string(next.next_rule_number);
  apply(next, op);
  persist(next, op);
  {
    std::lock_guard lk(snap_mu_);
    state_ = std::make_shared<const RegistryState>(next);
  }
  if (!touched_node.empty()) publish_node(next, touched_node);
  return next;
}

void Registry::publish_node(const RegistryState& st, const std::string& node_id) {
  if (!publisher_) return;
  auto it = st.nodes.find(node_id);
  if (it == st.nodes.end())
    publisher_(node_id, std::nullopt);
  else
    publisher_(node_id, ConfigCommand::from_node(it->second));
}

void Registry::set_config_publisher(ConfigPublisher publisher) {
  std::lock_guard wl(write_mu_);
  publisher_ = std::move(publisher);
  const auto st = snapshot();
  for (const auto& [id, n] : st->nodes) publish_node(*st, id);
}

NodeDescriptor Registry::register_node(NodeDescriptor node) {
  const auto id = node.node_id;
  return commit({{"op", "register_node"}, {"node", to_json(node)}}, id).nodes.at(id);
}

void Registry::remove_node(const std::string& node_id) {
  commit({{"op", "remove_node"}, {"node-id", node_id}}, node_id);
}

NodeDescriptor Registry::set_sampling_period(const std::string& node_id, int period_s) {
  return commit({{"op", "patch_node"}, {"node-id", node_id}, {"sampling-period", period_s}},
                node_id)
      .nodes.at(node_id);
}

NodeDescriptor Registry::patch_node(const std::string& node_id, const NodePatch& patch) {
  json op = {{"op", "patch_node"}, {"node-id", node_id}};
  if (patch.sampling_period_s) op["sampling-period"] = *patch.sampling_period_s;
  if (patch.gps) op["gps"] = *patch.gps;
  if (patch.enabled) op["enabled"] = *patch.enabled;
  return commit(op, node_id).nodes.at(node_id);
}

NodeDescriptor Registry::assign_protocol(const std::string& node_id, const std::string& sensor_id,
                                         ProtocolId protocol) {
  return commit({{"op", "assign_protocol"},
                 {"node-id", node_id},
                 {"sensor-id", sensor_id},
                 {"protocol", std::string(to_string(protocol))}},
                node_id)
      .nodes.at(node_id);
}

NodeDescriptor Registry::upsert_sensor(const std::string& node_id, SensorDescriptor sensor) {
  return commit({{"op", "upsert_sensor"}, {"node-id", node_id}, {"sensor", to_json(sensor)}},
                node_id)
      .nodes.at(node_id);
}

NodeDescriptor Registry::remove_sensor(const std::string& node_id, const std::string& sensor_id) {
  return commit({{"op", "remove_sensor"}, {"node-id", node_id}, {"sensor-id", sensor_id}},
                node_id)
      .nodes.at(node_id);
}

AlarmRule Registry::add_rule(AlarmRule rule) {
  if (auto why = validate_rule(rule)) throw RegistryError(RegistryErrc::invalid_rule, *why);
  const auto st = commit({{"op", "add_rule"}, {"rule", to_json(rule)}}, "");
  if (!rule.rule_id.empty()) return st.rules.at(rule.rule_id);
  return st.rules.at("rule-" + std::to_string(st.next_rule_number - 1));
}

void Registry::remove_rule(const std::string& rule_id) {
  commit({{"op", "remove_rule"}, {"rule-id", rule_id}}, "");
}

GatewayIdentity Registry::set_identity(GatewayIdentity identity) {
  return commit({{"op", "set_identity"}, {"identity", to_json(identity)}}, "").identity;
}

void RecentRecords::append(SensorRecord rec) {
  std::lock_guard lk(mu_);
  if (capacity_ == 0) return;
  if (ring_.size() < capacity_) {
    ring_.push_back(std::move(rec));
    return;
  }
  ring_[head_] = std::move(rec);
  head_ = (head_ + 1) % capacity_;
}

std::vector<SensorRecord> RecentRecords::latest(std::size_t limit) const {
  std::lock_guard lk(mu_);
  std::vector<SensorRecord> out;
  const std::size_t n = std::min(limit, ring_.size());
  out.reserve(n);
  // Newest element sits just before head_ (or at the back while filling).
  const std::size_t newest = ring_.size() < capacity_ ? ring_.size() - 1
                                                      : (head_ + capacity_ - 1) % capacity_;
  for (std::size_t k = 0; k < n; ++k)
    out.push_back(ring_[(newest + ring_.size() - k) % ring_.size()]);
  return out;
}

std::size_t RecentRecords::size() const {
  std::lock_guard lk(mu_);
  return ring_.size();
}

}  // namespace piico
