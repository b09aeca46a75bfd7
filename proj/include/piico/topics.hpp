#pragma once

// MQTT topic layout for uplink data and downlink configuration.

#include <string>
#include <string_view>

#include "piico/normalizer.hpp"

namespace piico {

/// Replaces characters that would change the topic structure.
inline std::string topic_segment(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c == '/' || c == '+' || c == '#') c = '_';
  if (out.empty()) out = "-";
  return out;
}

/// piico/<network-id>/<gate-id>/<node-id>/<sensor-id>
inline std::string uplink_topic(const SensorRecord& r) {
  return "piico/" + topic_segment(r.network_id) + "/" + topic_segment(r.gate_id) + "/" +
         topic_segment(r.node_id) + "/" + topic_segment(r.sensor_id);
}

inline std::string config_topic(std::string_view node_id) {
  return "piico/cfg/" + topic_segment(node_id);
}

}  // namespace piico
