#pragma once

// Operator HTTP/JSON API over the registry, recent records and metrics.

#include <functional>
#include <memory>
#include <string>
#include <thread>

#include "json.hpp"
#include "piico/metrics.hpp"
#include "piico/net.hpp"
#include "piico/registry.hpp"

namespace httplib {
class Server;
}

namespace piico {

struct ApiContext {
  Registry* registry = nullptr;
  RecentRecords* records = nullptr;
  const ThroughputMeter* throughput = nullptr;
  const ResourceSampler* resources = nullptr;
  std::function<nlohmann::json()> health;
  /// Static files served under /ui when non-empty.
  std::string ui_dir;
};

/// HTTP status for a registry error: 404 unknown entity, 409 duplicate,
/// 422 validation failure.
int http_status(RegistryErrc e) noexcept;

class ApiServer {
 public:
  /// Binds immediately; throws net::NetError on failure.
  ApiServer(ApiContext ctx, const net::HostPort& bind);
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  void stop();

 private:
  void install_routes();

  ApiContext ctx_;
  std::unique_ptr<httplib::Server> server_;
  std::uint16_t port_ = 0;
  std::thread thread_;
};

}  // namespace piico
