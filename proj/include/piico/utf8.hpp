#pragma once

#include <string_view>

namespace piico {

/// Strict UTF-8 validation (rejects overlongs, surrogates, > U+10FFFF).
bool is_valid_utf8(std::string_view s) noexcept;

}  // namespace piico
