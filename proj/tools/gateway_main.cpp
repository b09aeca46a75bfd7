// gateway: runs the multiprotocol gateway until SIGTERM or SIGINT.

#include <csignal>
#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "piico/gateway.hpp"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitBind = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiprotocol IoT gateway"};
  std::string config_path;
  int api_port = -1;
  std::string upstream;
  bool print_config = false;
  app.add_option("--config", config_path, "JSON configuration file");
  app.add_option("--api-port", api_port, "HTTP API port (overrides GATEWAY_API_PORT)")
      ->check(CLI::Range(0, 65535));
  app.add_option("--upstream", upstream, "Upstream broker host:port (overrides GATEWAY_UPSTREAM)");
  app.add_flag("--print-config", print_config, "Print the effective configuration and exit");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  piico::GatewayConfig cfg;
  try {
    if (!config_path.empty()) cfg = piico::load_config(config_path);
    if (api_port < 0) {
      if (const char* env = std::getenv("GATEWAY_API_PORT")) {
        try {
          const int p = std::stoi(env);
          if (p < 0 || p > 65535) throw std::out_of_range("port");
          api_port = p;
        } catch (const std::exception&) {
          throw piico::ConfigError(std::string("GATEWAY_API_PORT: invalid port '") + env + "'");
        }
      }
    }
    if (api_port >= 0) cfg.api_bind.port = static_cast<std::uint16_t>(api_port);
    if (upstream.empty())
      if (const char* env = std::getenv("GATEWAY_UPSTREAM")) upstream = env;
    if (!upstream.empty()) {
      try {
        cfg.upstream.address = piico::net::HostPort::parse(upstream);
      } catch (const std::invalid_argument& e) {
        throw piico::ConfigError("upstream: " + std::string(e.what()));
      }
    }
    piico::validate_config(cfg);
  } catch (const piico::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  if (print_config) {
    std::cout << piico::dump_config(cfg).dump(2) << '\n';
    return 0;
  }

  // Block termination signals before any thread starts so sigwait sees them.
  sigset_t sigs;
  sigemptyset(&sigs);
  sigaddset(&sigs, SIGTERM);
  sigaddset(&sigs, SIGINT);
  pthread_sigmask(SIG_BLOCK, &sigs, nullptr);

  std::unique_ptr<piico::Gateway> gw;
  try {
    gw = std::make_unique<piico::Gateway>(cfg);
  } catch (const piico::StartupError& e) {
    std::cerr << "startup failed in " << e.component() << ": " << e.what() << '\n';
    return kExitBind;
  } catch (const std::exception& e) {
    std::cerr << "startup failed: " << e.what() << '\n';
    return kExitBind;
  }

  std::cerr << "gateway up: api " << gw->api_port() << ", broker " << gw->broker_port();
  for (const auto& l : cfg.links)
    std::cerr << ", " << piico::to_string(l.protocol) << ' ' << gw->link_port(l.protocol);
  std::cerr << std::endl;

  int sig = 0;
  sigwait(&sigs, &sig);
  std::cerr << "signal " << sig << ", shutting down" << std::endl;
  gw->stop();
  const auto c = gw->counters();
  std::cerr << "frames accepted " << c.frames_accepted << ", published " << c.frames_published
            << ", rejected " << c.rejected_total() << std::endl;
  return 0;
}
