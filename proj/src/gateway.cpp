#include "piico/gateway.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "piico/rules.hpp"
#include "piico/topics.hpp"
#include "piico/utf8.hpp"

namespace piico {

using nlohmann::json;

// ---- configuration ----------------------------------------------------------

namespace {

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> known) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
      throw ConfigError(where + (where.empty() ? "" : ".") + key + ": unknown key");
  }
}

std::string field(const std::string& where, const char* key) {
  return where.empty() ? key : where + "." + key;
}

template <typename T>
T get(const json& obj, const std::string& where, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(field(where, key) + ": wrong type");
  }
}

std::uint64_t get_uint(const json& obj, const std::string& where, const char* key,
                       std::uint64_t fallback, std::uint64_t lo, std::uint64_t hi) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && v.get<std::int64_t>() < 0))
    throw ConfigError(field(where, key) + ": expected a non-negative integer");
  const auto n = v.get<std::uint64_t>();
  if (n < lo || n > hi)
    throw ConfigError(field(where, key) + ": must be in [" + std::to_string(lo) + ", " +
                      std::to_string(hi) + "]");
  return n;
}

net::HostPort get_address(const json& obj, const std::string& where, const char* key,
                          const net::HostPort& fallback) {
  if (!obj.contains(key)) return fallback;
  const auto s = get<std::string>(obj, where, key, "");
  try {
    return net::HostPort::parse(s);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(field(where, key) + ": " + e.what());
  }
}

}  // namespace

bool GatewayConfig::operator==(const GatewayConfig& o) const {
  return dump_config(*this) == dump_config(o);
}

GatewayConfig parse_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte ? e.byte - 1 : 0, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + upto, '\n');
    throw ConfigError("parse error at line " + std::to_string(line) + ": " + e.what());
  }
  check_keys(j, "", {"links", "broker", "upstream", "api", "identity", "state-file", "metrics",
                     "recent-capacity", "inflight-cap"});

  GatewayConfig c;
  if (j.contains("links")) {
    const auto& links = j["links"];
    if (!links.is_object()) throw ConfigError("links: expected an object");
    std::vector<LinkEndpoint> out;
    for (const auto& [name, addr] : links.items()) {
      const auto p = parse_protocol(name);
      if (!p) throw ConfigError("links." + name + ": unknown protocol");
      out.push_back({*p, get_address(links, "links", name.c_str(), {})});
    }
    // Stable order regardless of key order in the file.
    std::sort(out.begin(), out.end(), [](const LinkEndpoint& a, const LinkEndpoint& b) {
      return static_cast<int>(a.protocol) < static_cast<int>(b.protocol);
    });
    c.links = std::move(out);
  }
  if (j.contains("broker")) {
    const auto& b = j["broker"];
    check_keys(b, "broker", {"bind", "allowlist"});
    c.broker_bind = get_address(b, "broker", "bind", c.broker_bind);
    c.broker_allowlist = get<std::vector<std::string>>(b, "broker", "allowlist", {});
  }
  if (j.contains("upstream")) {
    const auto& u = j["upstream"];
    const std::string w = "upstream";
    check_keys(u, w, {"address", "qos", "buffer-cap", "client-id", "keepalive",
                      "backoff-initial-ms", "backoff-max-ms"});
    auto& up = c.upstream;
    up.address = get_address(u, w, "address", up.address);
    up.qos = static_cast<std::uint8_t>(get_uint(u, w, "qos", up.qos, 0, 1));
    up.buffer_cap = get_uint(u, w, "buffer-cap", up.buffer_cap, 1, 10'000'000);
    up.client_id = get<std::string>(u, w, "client-id", up.client_id);
    up.keepalive_s = static_cast<std::uint16_t>(get_uint(u, w, "keepalive", up.keepalive_s, 0, 65535));
    up.backoff_initial = std::chrono::milliseconds(
        get_uint(u, w, "backoff-initial-ms", up.backoff_initial.count(), 1, 3'600'000));
    up.backoff_max = std::chrono::milliseconds(
        get_uint(u, w, "backoff-max-ms", up.backoff_max.count(), 1, 3'600'000));
  }
  if (j.contains("api")) {
    const auto& a = j["api"];
    check_keys(a, "api", {"bind", "ui-dir"});
    c.api_bind = get_address(a, "api", "bind", c.api_bind);
    c.ui_dir = get<std::string>(a, "api", "ui-dir", c.ui_dir);
  }
  if (j.contains("identity")) {
    const auto& id = j["identity"];
    check_keys(id, "identity", {"gate-id", "network-id"});
    c.identity.gate_id = get<std::string>(id, "identity", "gate-id", c.identity.gate_id);
    c.identity.network_id = get<std::string>(id, "identity", "network-id", c.identity.network_id);
  }
  c.state_file = get<std::string>(j, "", "state-file", c.state_file);
  if (j.contains("metrics")) {
    const auto& m = j["metrics"];
    check_keys(m, "metrics", {"window-ms", "resource-period-s"});
    c.metrics_window = std::chrono::milliseconds(
        get_uint(m, "metrics", "window-ms", c.metrics_window.count(), 1, 3'600'000));
    c.resource_period = std::chrono::seconds(
        get_uint(m, "metrics", "resource-period-s", c.resource_period.count(), 1, 86'400));
  }
  c.recent_capacity = get_uint(j, "", "recent-capacity", c.recent_capacity, 1, 10'000'000);
  c.inflight_cap = get_uint(j, "", "inflight-cap", c.inflight_cap, 1, 10'000'000);
  validate_config(c);
  return c;
}

GatewayConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void validate_config(const GatewayConfig& c) {
  std::map<std::uint16_t, std::string> used;
  auto claim = [&](std::uint16_t port, const std::string& name) {
    if (port == 0) return;
    const auto [it, fresh] = used.emplace(port, name);
    if (!fresh)
      throw ConfigError(name + ": port " + std::to_string(port) + " already used by " + it->second);
  };
  std::set<ProtocolId> seen;
  for (const auto& l : c.links) {
    if (!seen.insert(l.protocol).second)
      throw ConfigError("links." + std::string(to_string(l.protocol)) + ": duplicate link");
    claim(l.address.port, "links." + std::string(to_string(l.protocol)));
  }
  claim(c.broker_bind.port, "broker.bind");
  claim(c.api_bind.port, "api.bind");
  if (c.upstream.address.host.empty()) throw ConfigError("upstream.address: host required");
  if (c.upstream.client_id.empty() || c.upstream.client_id.size() > 23)
    throw ConfigError("upstream.client-id: must be 1..23 bytes");
  if (c.upstream.backoff_max < c.upstream.backoff_initial)
    throw ConfigError("upstream.backoff-max-ms: smaller than backoff-initial-ms");
  if (c.upstream.qos > 1) throw ConfigError("upstream.qos: must be 0 or 1");
}

json dump_config(const GatewayConfig& c) {
  json links = json::object();
  for (const auto& l : c.links) links[std::string(to_string(l.protocol))] = l.address.str();
  return {
      {"links", links},
      {"broker", {{"bind", c.broker_bind.str()}, {"allowlist", c.broker_allowlist}}},
      {"upstream",
       {{"address", c.upstream.address.str()},
        {"qos", c.upstream.qos},
        {"buffer-cap", c.upstream.buffer_cap},
        {"client-id", c.upstream.client_id},
        {"keepalive", c.upstream.keepalive_s},
        {"backoff-initial-ms", c.upstream.backoff_initial.count()},
        {"backoff-max-ms", c.upstream.backoff_max.count()}}},
      {"api", {{"bind", c.api_bind.str()}, {"ui-dir", c.ui_dir}}},
      {"identity", {{"gate-id", c.identity.gate_id}, {"network-id", c.identity.network_id}}},
      {"state-file", c.state_file},
      {"metrics",
       {{"window-ms", c.metrics_window.count()},
        {"resource-period-s", c.resource_period.count()}}},
      {"recent-capacity", c.recent_capacity},
      {"inflight-cap", c.inflight_cap},
  };
}

// ---- gateway -------------------------------------------------------------------

std::uint64_t PipelineCounters::rejected_total() const {
  std::uint64_t n = 0;
  for (const auto& [_, v] : rejected) n += v;
  return n;
}

Gateway::Gateway(GatewayConfig config, GatewayHooks hooks)
    : config_(std::move(config)),
      hooks_(std::move(hooks)),
      records_(config_.recent_capacity),
      throughput_(config_.metrics_window),
      queue_(config_.inflight_cap) {
  validate_config(config_);

  try {
    registry_ = std::make_unique<Registry>(config_.state_file);
  } catch (const std::exception& e) {
    throw StartupError("registry", e.what());
  }
  if (registry_->snapshot()->identity == GatewayIdentity{} && !(config_.identity == GatewayIdentity{})) {
    try {
      registry_->set_identity(config_.identity);
    } catch (const std::exception& e) {
      throw StartupError("registry", e.what());
    }
  }

  auto provider = hooks_.resource_provider ? hooks_.resource_provider
                                           : std::make_shared<HostResourceProvider>();
  sampler_ = std::make_unique<ResourceSampler>(
      provider, std::chrono::duration_cast<std::chrono::milliseconds>(config_.resource_period));

  try {
    mqtt::BrokerOptions bo;
    bo.bind = config_.broker_bind;
    bo.allowlist = config_.broker_allowlist;
    broker_ = std::make_unique<mqtt::Broker>(bo);
  } catch (const std::exception& e) {
    throw StartupError("broker", e.what());
  }

  registry_->set_config_publisher(
      [this](const std::string& node_id, const std::optional<ConfigCommand>& cmd) {
        Bytes payload;
        if (cmd) {
          const auto text = to_json(*cmd).dump();
          payload.assign(text.begin(), text.end());
        }
        broker_->publish(config_topic(node_id), std::move(payload), 1, true);
      });

  mqtt::ClientOptions co;
  co.broker = config_.upstream.address;
  co.client_id = config_.upstream.client_id;
  co.keepalive_s = config_.upstream.keepalive_s;
  co.buffer_cap = config_.upstream.buffer_cap;
  co.backoff_initial = config_.upstream.backoff_initial;
  co.backoff_max = config_.upstream.backoff_max;
  uplink_ = std::make_unique<mqtt::Client>(co);

  worker_ = std::thread([this] { worker(); });

  for (const auto& ep : config_.links) {
    try {
      listeners_.push_back(std::make_unique<LinkListener>(
          ep, [this](ReceivedFrame&& f) { return accept(std::move(f)); }));
    } catch (const std::exception& e) {
      stop(std::chrono::milliseconds(0));
      throw StartupError("link:" + std::string(to_string(ep.protocol)), e.what());
    }
  }

  try {
    ApiContext ctx;
    ctx.registry = registry_.get();
    ctx.records = &records_;
    ctx.throughput = &throughput_;
    ctx.resources = sampler_.get();
    ctx.health = [this] { return health(); };
    ctx.ui_dir = config_.ui_dir;
    api_ = std::make_unique<ApiServer>(std::move(ctx), config_.api_bind);
  } catch (const std::exception& e) {
    stop(std::chrono::milliseconds(0));
    throw StartupError("api", e.what());
  }

  sampler_->tick(now_ms());
  sampler_thread_ = std::jthread([this](std::stop_token st) { sampler_loop(st); });
}

Gateway::~Gateway() { stop(std::chrono::milliseconds(0)); }

std::uint16_t Gateway::link_port(ProtocolId p) const {
  for (const auto& l : listeners_)
    if (l->endpoint().protocol == p) return l->port();
  return 0;
}

bool Gateway::accept(ReceivedFrame&& f) {
  throughput_.record_bytes(f.link, f.wire_bytes,
                           std::chrono::time_point_cast<std::chrono::milliseconds>(f.arrival));
  if (hooks_.on_frame) hooks_.on_frame(f);
  {
    std::lock_guard lk(counters_mu_);
    ++counters_.frames_accepted;
  }
  if (!queue_.push(std::move(f))) {
    reject("shutdown");
    return false;
  }
  return true;
}

void Gateway::reject(const std::string& cause) {
  std::lock_guard lk(counters_mu_);
  ++counters_.rejected[cause];
  ++finished_;
  idle_cv_.notify_all();
}

void Gateway::worker() {
  while (auto f = queue_.pop()) process(*f);
}

void Gateway::process(const ReceivedFrame& rf) {
  const auto st = registry_->snapshot();
  const auto& frame = rf.frame;

  std::optional<std::string> gps;
  if (const auto it = st->nodes.find(frame.node_id); it != st->nodes.end()) {
    if (!it->second.enabled) return reject("node-disabled");
    gps = it->second.gps;
  }

  // Normalize every reading first so a frame is published whole or not at all.
  std::vector<SensorRecord> recs;
  try {
    const std::string_view text(reinterpret_cast<const char*>(frame.payload.data()),
                                frame.payload.size());
    if (!is_valid_utf8(text)) return reject(to_string(NormalizeErrc::not_utf8));
    const auto readings = parse_payload(text);
    if (readings.empty()) return reject("empty-payload");
    for (const auto& r : readings)
      recs.push_back(normalize(r, rf.link, frame.node_id, rf.arrival, st->identity, gps));
  } catch (const NormalizeError& e) {
    return reject(to_string(e.code()));
  }

  std::uint64_t alerts = 0;
  for (const auto& rec : recs) {
    const auto text = serialize_record(rec);
    try {
      uplink_->publish(uplink_topic(rec), Bytes(text.begin(), text.end()), config_.upstream.qos);
    } catch (const mqtt::ClientClosed&) {
      return reject("uplink-closed");
    }
    records_.append(rec);
    for (const auto& a : evaluate_rules(st->rules, rec, &rule_stats_)) {
      broker_->publish(a.topic, Bytes(a.payload.begin(), a.payload.end()), 0);
      ++alerts;
    }
    if (hooks_.on_record) hooks_.on_record(rec);
  }

  std::lock_guard lk(counters_mu_);
  ++counters_.frames_published;
  counters_.records_published += recs.size();
  counters_.alerts += alerts;
  ++finished_;
  idle_cv_.notify_all();
}

PipelineCounters Gateway::counters() const {
  std::lock_guard lk(counters_mu_);
  return counters_;
}

bool Gateway::wait_idle(std::chrono::milliseconds timeout) const {
  std::unique_lock lk(counters_mu_);
  return idle_cv_.wait_for(lk, timeout, [&] { return finished_ == counters_.frames_accepted; });
}

json Gateway::health() const {
  bool ok = true;
  json links = json::object();
  for (const auto& l : listeners_) {
    const auto s = l->stats();
    const bool up = l->running();
    ok = ok && up;
    links[std::string(to_string(l->endpoint().protocol))] = {{"up", up},
                                                {"port", l->port()},
                                                {"frames", s.frames_accepted},
                                                {"bytes", s.bytes_accepted},
                                                {"malformed", s.malformed}};
  }

  std::string uplink_status;
  switch (uplink_->state()) {
    case mqtt::ClientState::connected: uplink_status = "connected"; break;
    case mqtt::ClientState::connecting: uplink_status = "buffering"; break;
    case mqtt::ClientState::closed: uplink_status = "closed"; break;
  }
  ok = ok && uplink_status == "connected";

  const auto c = counters();
  json rejected = json::object();
  for (const auto& [k, v] : c.rejected) rejected[k] = v;
  return {
      {"status", ok ? "ok" : "degraded"},
      {"links", links},
      {"broker", {{"up", true}, {"sessions", broker_->session_count()}}},
      {"uplink",
       {{"status", uplink_status},
        {"broker", config_.upstream.address.str()},
        {"buffer-depth", uplink_->buffer_depth()},
        {"dropped", uplink_->dropped()},
        {"connects", uplink_->connects()}}},
      {"pipeline",
       {{"frames-accepted", c.frames_accepted},
        {"frames-published", c.frames_published},
        {"records-published", c.records_published},
        {"alerts", c.alerts},
        {"non-numeric", rule_stats_.non_numeric.load()},
        {"rejected", rejected},
        {"queue-depth", queue_.size()}}},
  };
}

void Gateway::sampler_loop(std::stop_token st) {
  std::mutex m;
  std::condition_variable_any cv;
  std::unique_lock lk(m);
  while (!st.stop_requested()) {
    cv.wait_for(lk, st, std::chrono::milliseconds(200), [] { return false; });
    if (st.stop_requested()) break;
    sampler_->tick(now_ms());
  }
}

void Gateway::stop(std::chrono::milliseconds flush_timeout) {
  std::call_once(stopped_, [&] {
    for (auto& l : listeners_) l->stop();
    queue_.close();
    if (worker_.joinable()) worker_.join();
    if (uplink_) {
      if (flush_timeout.count() > 0) uplink_->wait_drained(flush_timeout);
      uplink_->close();
    }
    if (api_) api_->stop();
    if (sampler_thread_.joinable()) {
      sampler_thread_.request_stop();
      sampler_thread_.join();
    }
    if (broker_) broker_->stop();
  });
}

}  // namespace piico
