#include "piico/api.hpp"

#include <charconv>
#include <sstream>

#include "httplib.h"

namespace piico {

using nlohmann::json;

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& code,
                 const std::string& message) {
  reply(res, status, {{"error", code}, {"message", message}});
}

// Wraps a handler so registry and body errors become JSON error replies.
template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const RegistryError& e) {
      reply_error(res, http_status(e.code()), to_string(e.code()), e.what());
    } catch (const json::parse_error& e) {
      reply_error(res, 400, "bad-json", e.what());
    } catch (const json::exception& e) {
      reply_error(res, 422, "validation", e.what());
    }
  };
}

json parse_body(const httplib::Request& req) {
  json j = json::parse(req.body);
  if (!j.is_object()) throw RegistryError(RegistryErrc::validation, "body must be a JSON object");
  return j;
}

std::optional<long long> query_int(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) return std::nullopt;
  const auto v = req.get_param_value(key);
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size())
    throw RegistryError(RegistryErrc::validation, std::string(key) + " must be an integer");
  return out;
}

// Keeps the canonical key order.
nlohmann::ordered_json record_json(const SensorRecord& r) {
  return nlohmann::ordered_json::parse(serialize_record(r));
}

}  // namespace

int http_status(RegistryErrc e) noexcept {
  switch (e) {
    case RegistryErrc::unknown_node:
    case RegistryErrc::unknown_sensor:
    case RegistryErrc::unknown_rule:
      return 404;
    case RegistryErrc::duplicate_node:
    case RegistryErrc::duplicate_sensor:
    case RegistryErrc::duplicate_rule:
      return 409;
    case RegistryErrc::unknown_link:
    case RegistryErrc::invalid_period:
    case RegistryErrc::invalid_rule:
    case RegistryErrc::validation:
      return 422;
    case RegistryErrc::io_error:
      return 500;
  }
  return 500;
}

ApiServer::ApiServer(ApiContext ctx, const net::HostPort& bind)
    : ctx_(std::move(ctx)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
  // The library default also sets SO_REUSEPORT, which would let a second server share the port.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  const std::string host = bind.host.empty() ? "0.0.0.0" : bind.host;
  if (bind.port == 0) {
    const int p = server_->bind_to_any_port(host);
    if (p <= 0) throw net::NetError("bind api " + bind.str(), EADDRINUSE);
    port_ = static_cast<std::uint16_t>(p);
  } else {
    if (!server_->bind_to_port(host, bind.port))
      throw net::NetError("bind api " + bind.str(), EADDRINUSE);
    port_ = bind.port;
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

ApiServer::~ApiServer() { stop(); }

void ApiServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

void ApiServer::install_routes() {
  auto& s = *server_;
  Registry& reg = *ctx_.registry;

  s.Get("/health", guarded([this](const httplib::Request&, httplib::Response& res) {
          reply(res, 200, ctx_.health ? ctx_.health() : json{{"status", "ok"}});
        }));

  s.Get("/nodes", guarded([&reg](const httplib::Request&, httplib::Response& res) {
          json out = json::array();
          for (const auto& [id, n] : reg.snapshot()->nodes) out.push_back(to_json(n));
          reply(res, 200, out);
        }));

  s.Post("/nodes", guarded([&reg](const httplib::Request& req, httplib::Response& res) {
           reply(res, 201, to_json(reg.register_node(node_from_json(parse_body(req)))));
         }));

  s.Get("/nodes/:id", guarded([&reg](const httplib::Request& req, httplib::Response& res) {
          const auto st = reg.snapshot();
          const auto it = st->nodes.find(req.path_params.at("id"));
          if (it == st->nodes.end())
            throw RegistryError(RegistryErrc::unknown_node, req.path_params.at("id"));
          reply(res, 200, to_json(it->second));
        }));

  s.Delete("/nodes/:id", guarded([&reg](const httplib::Request& req, httplib::Response& res) {
             reg.remove_node(req.path_params.at("id"));
             res.status = 204;
           }));

  s.Patch("/nodes/:id", guarded([&reg](const httplib::Request& req, httplib::Response& res) {
            const json body = parse_body(req);
            NodePatch patch;
            if (body.contains("sampling-period")) {
              if (!body["sampling-period"].is_number_integer())
                throw RegistryError(RegistryErrc::invalid_period,
                                    "sampling-period must be an integer");
              patch.sampling_period_s = body["sampling-period"].get<int>();
            }
            if (body.contains("gps")) patch.gps = body["gps"].get<std::string>();
            if (body.contains("enabled")) patch.enabled = body["enabled"].get<bool>();
            reply(res, 200, to_json(reg.patch_node(req.path_params.at("id"), patch)));
          }));

  s.Put("/nodes/:id/sensors/:sid/protocol",
        guarded([&reg](const httplib::Request& req, httplib::Response& res) {
          const json body = parse_body(req);
          const auto name = body.at("protocol").get<std::string>();
          const auto p = parse_protocol(name);
          if (!p) throw RegistryError(RegistryErrc::unknown_link, "unknown protocol " + name);
          reply(res, 200,
                to_json(reg.assign_protocol(req.path_params.at("id"), req.path_params.at("sid"), *p)));
        }));

  s.Put("/nodes/:id/sensors/:sid",
        guarded([&reg](const httplib::Request& req, httplib::Response& res) {
          json body = parse_body(req);
          body["sensor-id"] = req.path_params.at("sid");
          reply(res, 200, to_json(reg.upsert_sensor(req.path_params.at("id"), sensor_from_json(body))));
        }));

  s.Delete("/nodes/:id/sensors/:sid",
           guarded([&reg](const httplib::Request& req, httplib::Response& res) {
             reply(res, 200,
                   to_json(reg.remove_sensor(req.path_params.at("id"), req.path_params.at("sid"))));
           }));

  s.Get("/rules", guarded([&reg](const httplib::Request&, httplib::Response& res) {
          json out = json::array();
          for (const auto& [id, r] : reg.snapshot()->rules) out.push_back(to_json(r));
          reply(res, 200, out);
        }));

  s.Post("/rules", guarded([&reg](const httplib::Request& req, httplib::Response& res) {
           reply(res, 201, to_json(reg.add_rule(rule_from_json(parse_body(req)))));
         }));

  s.Delete("/rules/:id", guarded([&reg](const httplib::Request& req, httplib::Response& res) {
             reg.remove_rule(req.path_params.at("id"));
             res.status = 204;
           }));

  s.Get("/identity", guarded([&reg](const httplib::Request&, httplib::Response& res) {
          reply(res, 200, to_json(reg.snapshot()->identity));
        }));

  s.Put("/identity", guarded([&reg](const httplib::Request& req, httplib::Response& res) {
          reply(res, 200, to_json(reg.set_identity(identity_from_json(parse_body(req)))));
        }));

  s.Get("/records/recent", guarded([this](const httplib::Request& req, httplib::Response& res) {
          const auto limit = query_int(req, "limit").value_or(100);
          if (limit < 0) throw RegistryError(RegistryErrc::validation, "limit must be >= 0");
          auto out = nlohmann::ordered_json::array();
          if (ctx_.records)
            for (const auto& r : ctx_.records->latest(static_cast<std::size_t>(limit)))
              out.push_back(record_json(r));
          res.status = 200;
          res.set_content(out.dump(), "application/json");
        }));

  s.Get("/metrics/throughput", guarded([this](const httplib::Request& req, httplib::Response& res) {
          std::vector<ProtocolId> ifaces(std::begin(kLinkProtocols), std::end(kLinkProtocols));
          if (req.has_param("iface")) {
            const auto p = parse_protocol(req.get_param_value("iface"));
            if (!p) throw RegistryError(RegistryErrc::validation, "unknown iface");
            ifaces = {*p};
          }
          const auto window = ctx_.throughput->window();
          const auto now = now_ms();
          // Default range: the last 60 complete windows.
          const TimePoint to{std::chrono::milliseconds(
              query_int(req, "to").value_or(now.time_since_epoch().count() / window.count() *
                                            window.count()))};
          const TimePoint from{std::chrono::milliseconds(
              query_int(req, "from").value_or((to - 60 * window).time_since_epoch().count()))};
          if (to < from) throw RegistryError(RegistryErrc::validation, "from must be <= to");

          const bool csv = req.get_param_value("format") == "csv";
          std::ostringstream text;
          if (csv) text << "interface,window_start_ms,window_len_ms,bytes,bps\n";
          json out = json::array();
          for (auto iface : ifaces) {
            for (const auto& smp : ctx_.throughput->window_series(iface, from, to)) {
              if (csv) {
                text << to_string(iface) << ',' << smp.window_start.time_since_epoch().count()
                     << ',' << smp.window_len.count() << ',' << smp.bytes << ',' << smp.bps
                     << '\n';
              } else {
                out.push_back({{"interface", std::string(to_string(iface))},
                               {"window-start", smp.window_start.time_since_epoch().count()},
                               {"window-len", smp.window_len.count() / 1000.0},
                               {"bytes", smp.bytes},
                               {"bps", smp.bps}});
              }
            }
          }
          if (csv) {
            res.set_content(text.str(), "text/csv");
          } else {
            reply(res, 200, out);
          }
        }));

  s.Get("/metrics/resources", guarded([this](const httplib::Request& req, httplib::Response& res) {
          const bool csv = req.get_param_value("format") == "csv";
          std::ostringstream text;
          if (csv) text << "at_ms,cpu_pct,ram_free_bytes,ram_total_bytes\n";
          json out = json::array();
          if (ctx_.resources) {
            for (const auto& smp : ctx_.resources->samples()) {
              if (csv) {
                text << smp.at.time_since_epoch().count() << ',' << smp.cpu_pct << ','
                     << smp.ram_free_bytes << ',' << smp.ram_total_bytes << '\n';
              } else {
                out.push_back({{"at", smp.at.time_since_epoch().count()},
                               {"cpu-pct", smp.cpu_pct},
                               {"ram-free-bytes", smp.ram_free_bytes},
                               {"ram-total-bytes", smp.ram_total_bytes}});
              }
            }
          }
          if (csv) {
            res.set_content(text.str(), "text/csv");
          } else {
            reply(res, 200, out);
          }
        }));

  if (!ctx_.ui_dir.empty()) s.set_mount_point("/ui", ctx_.ui_dir);
}

}  // namespace piico
