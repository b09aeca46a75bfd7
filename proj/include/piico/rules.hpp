#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "piico/normalizer.hpp"
#include "piico/registry_error.hpp"

namespace piico {

enum class Comparator { lt, le, gt, ge, eq };

std::string_view to_string(Comparator c) noexcept;
std::optional<Comparator> parse_comparator(std::string_view s) noexcept;
bool compare(double value, Comparator c, double threshold) noexcept;

struct AlarmRule {
  std::string rule_id;
  std::string node_selector = "*";  // node id or "*"
  std::string sensor_selector;      // sensor id or "*"
  Comparator comparator = Comparator::gt;
  double threshold = 0;
  std::string action_topic = "piico/alerts";
  bool armed = true;
  bool operator==(const AlarmRule&) const = default;

  bool selects(const SensorRecord& rec) const noexcept;
};

nlohmann::json to_json(const AlarmRule& r);
/// Throws RegistryError{invalid_rule}.
AlarmRule rule_from_json(const nlohmann::json& j);
/// Empty when the rule is acceptable, else the reason.
std::optional<std::string> validate_rule(const AlarmRule& r);

struct Alert {
  std::string rule_id;
  std::string topic;
  std::string payload;  // serialized triggering record
  bool operator==(const Alert&) const = default;
};

/// Whole-string decimal parse; nullopt for anything else or non-finite.
std::optional<double> parse_decimal(std::string_view s) noexcept;

struct RuleStats {
  std::atomic<std::uint64_t> non_numeric{0};
};

/// One alert per armed rule that selects the record and whose comparison
/// holds, in rule-id order. A non-numeric value skips the rules that
/// select it and bumps stats->non_numeric once per skipped rule.
std::vector<Alert> evaluate_rules(const std::map<std::string, AlarmRule>& rules,
                                  const SensorRecord& rec, RuleStats* stats = nullptr);

}  // namespace piico
