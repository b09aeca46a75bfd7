#pragma once

#include <stdexcept>
#include <string>

namespace piico {

enum class RegistryErrc {
  duplicate_node,
  duplicate_sensor,
  duplicate_rule,
  unknown_node,
  unknown_sensor,
  unknown_rule,
  unknown_link,
  invalid_period,
  invalid_rule,
  validation,
  io_error,
};

const char* to_string(RegistryErrc e) noexcept;

class RegistryError : public std::runtime_error {
 public:
  RegistryError(RegistryErrc code, const std::string& detail);
  RegistryErrc code() const noexcept { return code_; }

 private:
  RegistryErrc code_;
};

}  // namespace piico
