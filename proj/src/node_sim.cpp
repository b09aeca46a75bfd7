#include "piico/node_sim.hpp"

#include <cmath>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <stdexcept>

#include "piico/link.hpp"
#include "piico/mqtt/client.hpp"
#include "piico/normalizer.hpp"
#include "piico/registry.hpp"
#include "piico/topics.hpp"

namespace piico {

using nlohmann::json;

namespace {

std::int64_t to_tenths(double v, const char* what) {
  const double t = v * 10.0;
  const auto r = std::llround(t);
  if (!std::isfinite(t) || std::abs(t - static_cast<double>(r)) > 1e-6)
    throw std::invalid_argument(std::string(what) + " must be a whole number of tenths");
  return r;
}

const char* kind_name(GeneratorKind k) {
  return k == GeneratorKind::fixed_sequence ? "fixed_sequence" : "bounded_random_walk";
}

json generator_json(const SensorGenerator& g) {
  json j = {{"kind", kind_name(g.kind)}, {"seed", g.seed}};
  if (g.kind == GeneratorKind::fixed_sequence) {
    j["sequence"] = g.sequence;
  } else {
    j["min"] = g.min;
    j["max"] = g.max;
    j["step"] = g.step;
    j["quantum"] = g.quantum;
  }
  return j;
}

SensorGenerator generator_from_json(const json& j) {
  SensorGenerator g;
  const auto kind = j.value("kind", std::string("bounded_random_walk"));
  if (kind == "fixed_sequence")
    g.kind = GeneratorKind::fixed_sequence;
  else if (kind != "bounded_random_walk")
    throw std::invalid_argument("unknown generator kind " + kind);
  g.seed = j.value("seed", std::uint64_t{1});
  g.sequence = j.value("sequence", std::vector<std::string>{});
  g.min = j.value("min", 0.0);
  g.max = j.value("max", 0.0);
  g.step = j.value("step", 0.1);
  g.quantum = j.value("quantum", 0.1);
  ReadingGenerator check(g);
  return g;
}

SensorGenerator walk(double min, double max, double step, std::uint64_t seed,
                     double quantum = 0.1) {
  SensorGenerator g;
  g.min = min;
  g.max = max;
  g.step = step;
  g.quantum = quantum;
  g.seed = seed;
  return g;
}

}  // namespace

std::string format_tenths(std::int64_t tenths) {
  const bool neg = tenths < 0;
  const auto a = neg ? -tenths : tenths;
  return (neg ? "-" : "") + std::to_string(a / 10) + "." + std::to_string(a % 10);
}

ReadingGenerator::ReadingGenerator(const SensorGenerator& g) : g_(g), rng_(g.seed) {
  if (g_.kind == GeneratorKind::fixed_sequence) {
    if (g_.sequence.empty()) throw std::invalid_argument("fixed_sequence needs values");
    return;
  }
  lo_ = to_tenths(g_.min, "min");
  hi_ = to_tenths(g_.max, "max");
  step_ = to_tenths(g_.step, "step");
  quantum_ = to_tenths(g_.quantum, "quantum");
  if (lo_ > hi_) throw std::invalid_argument("min > max");
  if (step_ < 0 || quantum_ < 1) throw std::invalid_argument("step/quantum must be positive");
  // Start mid-range, on the quantum grid.
  value_ = lo_ + ((hi_ - lo_) / 2 / quantum_) * quantum_;
}

std::string ReadingGenerator::next() {
  const auto t = tick_++;
  if (g_.kind == GeneratorKind::fixed_sequence) return g_.sequence[t % g_.sequence.size()];
  if (t > 0 && step_ > 0) {
    const auto span = static_cast<std::uint64_t>(2 * step_ + 1);
    const auto delta = static_cast<std::int64_t>(rng_() % span) - step_;
    value_ = std::clamp(value_ + delta, lo_, hi_);
    value_ = lo_ + ((value_ - lo_ + quantum_ / 2) / quantum_) * quantum_;
    if (value_ > hi_) value_ -= quantum_;
  }
  return format_tenths(value_);
}

std::string generate_reading(const SensorGenerator& g, std::uint64_t tick) {
  ReadingGenerator gen(g);
  std::string v = gen.next();
  for (std::uint64_t i = 0; i < tick; ++i) v = gen.next();
  return v;
}

json to_json(const SimNodeConfig& c) {
  json links = json::object();
  for (const auto& [p, hp] : c.gateway_links) links[std::string(to_string(p))] = hp.str();
  json sensors = json::array();
  for (const auto& s : c.sensors)
    sensors.push_back({{"sensor-id", s.sensor_id},
                       {"magnitude", s.magnitude},
                       {"protocol", std::string(to_string(s.protocol))},
                       {"generator", generator_json(s.generator)}});
  json j = {{"node-id", c.node_id},
            {"links", links},
            {"sampling-period-ms", c.sampling_period.count()},
            {"run-duration-ms", c.run_duration.count()},
            {"sensors", sensors}};
  if (c.broker) j["broker"] = c.broker->str();
  return j;
}

SimNodeConfig sim_config_from_json(const json& j) {
  SimNodeConfig c;
  try {
    c.node_id = j.at("node-id").get<std::string>();
    const json links = j.value("links", json::object());
    for (const auto& [name, addr] : links.items()) {
      const auto p = parse_protocol(name);
      if (!p) throw std::invalid_argument("unknown link " + name);
      c.gateway_links[*p] = net::HostPort::parse(addr.get<std::string>());
    }
    if (j.contains("broker")) c.broker = net::HostPort::parse(j["broker"].get<std::string>());
    if (j.contains("sampling-period-ms"))
      c.sampling_period = std::chrono::milliseconds(j["sampling-period-ms"].get<long long>());
    else if (j.contains("sampling-period"))
      c.sampling_period = std::chrono::seconds(j["sampling-period"].get<long long>());
    if (j.contains("run-duration-ms"))
      c.run_duration = std::chrono::milliseconds(j["run-duration-ms"].get<long long>());
    else if (j.contains("run-duration"))
      c.run_duration = std::chrono::seconds(j["run-duration"].get<long long>());
    const json sensors = j.value("sensors", json::array());
    for (const auto& s : sensors) {
      SensorSpec spec;
      spec.sensor_id = s.at("sensor-id").get<std::string>();
      spec.magnitude = s.value("magnitude", std::string{});
      const auto p = parse_protocol(s.value("protocol", std::string("wifi")));
      if (!p) throw std::invalid_argument("unknown protocol for " + spec.sensor_id);
      spec.protocol = *p;
      if (s.contains("generator")) spec.generator = generator_from_json(s["generator"]);
      c.sensors.push_back(std::move(spec));
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(e.what());
  }
  if (c.sampling_period < std::chrono::milliseconds(1))
    throw std::invalid_argument("sampling period must be positive");
  return c;
}

std::vector<SimNodeConfig> default_fleet(const std::string& gateway_host) {
  std::vector<SimNodeConfig> fleet;
  for (int n = 1; n <= 2; ++n) {
    SimNodeConfig c;
    c.node_id = "nodo" + std::to_string(n);
    for (auto p : kLinkProtocols) c.gateway_links[p] = {gateway_host, default_port(p)};
    c.broker = net::HostPort{gateway_host, 1883};
    const std::uint64_t s = static_cast<std::uint64_t>(n) * 100;
    c.sensors = {
        {"Temperature", "celcius", ProtocolId::wifi, walk(10, 35, 0.5, s + 1)},
        {"Humidity", "percent", ProtocolId::wifi, walk(20, 90, 1.0, s + 2)},
        {"SolarRadiation", "w/m2", ProtocolId::zigbee, walk(0, 1200, 25, s + 3)},
        {"Precipitation", "mm", ProtocolId::zigbee, walk(0, 10, 0.2, s + 4)},
        {"WindSpeed", "m/s", ProtocolId::bluetooth, walk(0, 20, 1.0, s + 5)},
        {"WindDirection", "degrees", ProtocolId::bluetooth, walk(0, 337.5, 22.5, s + 6, 22.5)},
    };
    fleet.push_back(std::move(c));
  }
  return fleet;
}

std::uint64_t RunReport::total_sent() const {
  std::uint64_t t = 0;
  for (const auto& [p, n] : frames_sent) t += n;
  return t;
}

std::uint64_t RunReport::total_failures() const {
  std::uint64_t t = 0;
  for (const auto& [p, n] : send_failures) t += n;
  return t;
}

json to_json(const RunReport& r) {
  json sent = json::object();
  json failed = json::object();
  for (auto p : kLinkProtocols) {
    sent[std::string(to_string(p))] = r.frames_sent.count(p) ? r.frames_sent.at(p) : 0;
    failed[std::string(to_string(p))] = r.send_failures.count(p) ? r.send_failures.at(p) : 0;
  }
  return {{"node-id", r.node_id},
          {"ticks", r.ticks},
          {"frames-sent", sent},
          {"frames-total", r.total_sent()},
          {"send-failures", failed},
          {"config-updates", r.config_updates},
          {"final-period-ms", r.final_period.count()}};
}

RunReport run_node(const SimNodeConfig& config, std::stop_token stop) {
  RunReport report;
  report.node_id = config.node_id;

  struct Pending {
    std::mutex mu;
    std::condition_variable_any cv;
    std::optional<ConfigCommand> cmd;
  };
  auto pending = std::make_shared<Pending>();

  std::unique_ptr<mqtt::Client> cfg_client;
  if (config.broker) {
    mqtt::ClientOptions o;
    o.broker = *config.broker;
    o.client_id = ("sim-" + config.node_id).substr(0, 23);
    o.keepalive_s = 30;
    o.backoff_initial = std::chrono::milliseconds(200);
    o.backoff_max = std::chrono::seconds(5);
    cfg_client = std::make_unique<mqtt::Client>(o);
    cfg_client->subscribe(config_topic(config.node_id), 1,
                          [pending, id = config.node_id](const std::string&, const Bytes& payload) {
                            if (payload.empty()) return;  // retained config cleared
                            json j = json::parse(payload.begin(), payload.end(), nullptr, false);
                            if (j.is_discarded()) return;
                            try {
                              auto cmd = config_from_json(j);
                              if (cmd.target_node != id) return;
                              std::lock_guard lk(pending->mu);
                              pending->cmd = std::move(cmd);
                            } catch (const RegistryError&) {
                            }
                            pending->cv.notify_all();
                          });
    // Give a retained configuration the chance to apply before the first tick.
    if (cfg_client->wait_connected(std::chrono::seconds(2))) {
      std::unique_lock lk(pending->mu);
      pending->cv.wait_for(lk, stop, std::chrono::milliseconds(300),
                           [&] { return pending->cmd.has_value(); });
    }
  }

  auto period = config.sampling_period;
  bool enabled = true;
  std::map<std::string, ProtocolId> assignment;
  std::vector<ReadingGenerator> generators;
  for (const auto& s : config.sensors) {
    assignment[s.sensor_id] = s.protocol;
    generators.emplace_back(s.generator);
  }
  std::map<ProtocolId, std::unique_ptr<LinkClient>> links;
  std::uint16_t seq = 0;

  auto apply_pending = [&] {
    std::lock_guard lk(pending->mu);
    if (!pending->cmd) return;
    const auto& cmd = *pending->cmd;
    if (cmd.sampling_period_s) period = std::chrono::seconds(*cmd.sampling_period_s);
    for (const auto& [sid, p] : cmd.protocol_overrides)
      if (assignment.count(sid)) assignment[sid] = p;
    if (cmd.enabled) enabled = *cmd.enabled;
    ++report.config_updates;
    pending->cmd.reset();
  };

  auto send = [&](ProtocolId p, const LinkFrame& f) {
    bool ok = false;
    try {
      auto it = config.gateway_links.find(p);
      if (it == config.gateway_links.end()) throw LinkError(LinkErrc::disconnected, "no endpoint");
      auto& client = links[p];
      if (!client || !client->is_open())
        client = std::make_unique<LinkClient>(LinkEndpoint{p, it->second},
                                              std::chrono::milliseconds(500));
      client->send(f);
      ok = true;
    } catch (const LinkError&) {
      links[p].reset();
    } catch (const FrameError&) {
    }
    if (ok)
      ++report.frames_sent[p];
    else
      ++report.send_failures[p];
    if (config.observer) config.observer(p, f, ok);
  };

  const auto start = std::chrono::steady_clock::now();
  const auto end = start + config.run_duration;
  auto tick_at = start;
  while (!stop.stop_requested()) {
    apply_pending();
    for (std::size_t i = 0; i < config.sensors.size(); ++i) {
      const auto& spec = config.sensors[i];
      RawReading r{spec.sensor_id, generators[i].next(), spec.magnitude};
      if (!enabled) continue;
      LinkFrame f;
      f.protocol = assignment[spec.sensor_id];
      f.node_id = config.node_id;
      f.seq = seq++;
      const auto text = format_payload(std::span(&r, 1));
      f.payload.assign(text.begin(), text.end());
      send(f.protocol, f);
    }
    ++report.ticks;

    tick_at += period;
    if (tick_at >= end) break;
    std::unique_lock lk(pending->mu);
    pending->cv.wait_until(lk, stop, tick_at, [] { return false; });
  }
  report.final_period = period;
  if (cfg_client) cfg_client->close();
  return report;
}

}  // namespace piico
