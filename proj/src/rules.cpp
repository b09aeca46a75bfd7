#include "piico/rules.hpp"

#include <charconv>
#include <cmath>

#include "piico/mqtt/topic.hpp"

namespace piico {

std::string_view to_string(Comparator c) noexcept {
  switch (c) {
    case Comparator::lt: return "lt";
    case Comparator::le: return "le";
    case Comparator::gt: return "gt";
    case Comparator::ge: return "ge";
    case Comparator::eq: return "eq";
  }
  return "?";
}

std::optional<Comparator> parse_comparator(std::string_view s) noexcept {
  if (s == "lt") return Comparator::lt;
  if (s == "le") return Comparator::le;
  if (s == "gt") return Comparator::gt;
  if (s == "ge") return Comparator::ge;
  if (s == "eq") return Comparator::eq;
  return std::nullopt;
}

bool compare(double value, Comparator c, double threshold) noexcept {
  switch (c) {
    case Comparator::lt: return value < threshold;
    case Comparator::le: return value <= threshold;
    case Comparator::gt: return value > threshold;
    case Comparator::ge: return value >= threshold;
    case Comparator::eq: return value == threshold;
  }
  return false;
}

bool AlarmRule::selects(const SensorRecord& rec) const noexcept {
  return (node_selector == "*" || node_selector == rec.node_id) &&
         (sensor_selector == "*" || sensor_selector == rec.sensor_id);
}

std::optional<double> parse_decimal(std::string_view s) noexcept {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

nlohmann::json to_json(const AlarmRule& r) {
  return {{"rule-id", r.rule_id},
          {"node", r.node_selector},
          {"sensor", r.sensor_selector},
          {"comparator", std::string(to_string(r.comparator))},
          {"threshold", r.threshold},
          {"action-topic", r.action_topic},
          {"armed", r.armed}};
}

std::optional<std::string> validate_rule(const AlarmRule& r) {
  if (r.sensor_selector.empty()) return "sensor selector is empty";
  if (r.node_selector.empty()) return "node selector is empty";
  if (!std::isfinite(r.threshold)) return "threshold must be finite";
  if (!mqtt::valid_topic_name(r.action_topic)) return "action-topic must be a wildcard-free topic";
  return std::nullopt;
}

AlarmRule rule_from_json(const nlohmann::json& j) {
  auto bad = [](const std::string& why) { return RegistryError(RegistryErrc::invalid_rule, why); };
  if (!j.is_object()) throw bad("rule must be an object");
  AlarmRule r;
  try {
    r.rule_id = j.value("rule-id", std::string{});
    r.node_selector = j.value("node", std::string("*"));
    r.sensor_selector = j.at("sensor").get<std::string>();
    const auto cmp = parse_comparator(j.at("comparator").get<std::string>());
    if (!cmp) throw bad("comparator must be one of lt, le, gt, ge, eq");
    r.comparator = *cmp;
    const auto& t = j.at("threshold");
    if (!t.is_number()) throw bad("threshold must be a number");
    r.threshold = t.get<double>();
    r.action_topic = j.value("action-topic", std::string("piico/alerts"));
    r.armed = j.value("armed", true);
  } catch (const nlohmann::json::exception& e) {
    throw bad(e.what());
  }
  if (auto why = validate_rule(r)) throw bad(*why);
  return r;
}

std::vector<Alert> evaluate_rules(const std::map<std::string, AlarmRule>& rules,
                                  const SensorRecord& rec, RuleStats* stats) {
  std::vector<Alert> out;
  std::optional<std::optional<double>> value;  // parsed lazily, once
  std::string payload;
  for (const auto& [id, rule] : rules) {
    if (!rule.armed || !rule.selects(rec)) continue;
    if (!value) value = parse_decimal(rec.value);
    if (!*value) {
      if (stats) ++stats->non_numeric;
      continue;
    }
    if (!compare(**value, rule.comparator, rule.threshold)) continue;
    if (payload.empty()) payload = serialize_record(rec);
    out.push_back({id, rule.action_topic, payload});
  }
  return out;
}

}  // namespace piico
