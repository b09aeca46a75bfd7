// node-sim: emulated sensor nodes sending readings to a gateway.

#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "piico/node_sim.hpp"

namespace {

std::stop_source g_stop;

void on_signal(int) { g_stop.request_stop(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sensor node simulator"};
  std::string config_path;
  bool fleet = false;
  std::string gateway = "127.0.0.1";
  long period_ms = -1;
  long duration_ms = -1;
  auto* cfg_opt = app.add_option("--config", config_path, "Node config JSON (object or array)");
  auto* fleet_opt = app.add_flag("--default-fleet", fleet, "Two nodes with six sensors each");
  app.add_option("--gateway", gateway, "Gateway host for --default-fleet");
  app.add_option("--period-ms", period_ms, "Override the sampling period")->check(CLI::PositiveNumber);
  app.add_option("--duration-ms", duration_ms, "Override the run duration")->check(CLI::NonNegativeNumber);
  cfg_opt->excludes(fleet_opt);
  CLI11_PARSE(app, argc, argv);

  std::vector<piico::SimNodeConfig> nodes;
  try {
    if (fleet) {
      nodes = piico::default_fleet(gateway);
    } else if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw std::runtime_error("cannot read " + config_path);
      const auto j = nlohmann::json::parse(in);
      if (j.is_array()) {
        for (const auto& n : j) nodes.push_back(piico::sim_config_from_json(n));
      } else {
        nodes.push_back(piico::sim_config_from_json(j));
      }
    } else {
      std::cerr << "one of --config or --default-fleet is required\n";
      return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }
  for (auto& n : nodes) {
    if (period_ms > 0) n.sampling_period = std::chrono::milliseconds(period_ms);
    if (duration_ms >= 0) n.run_duration = std::chrono::milliseconds(duration_ms);
  }

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  std::vector<piico::RunReport> reports(nodes.size());
  {
    std::vector<std::jthread> threads;
    for (std::size_t i = 0; i < nodes.size(); ++i)
      threads.emplace_back([&, i] { reports[i] = piico::run_node(nodes[i], g_stop.get_token()); });
  }

  auto out = nlohmann::json::array();
  for (const auto& r : reports) out.push_back(piico::to_json(r));
  std::cout << out.dump(2) << '\n';
  return 0;
}
