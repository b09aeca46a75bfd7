#pragma once

#include <string_view>

namespace piico::mqtt {

/// Non-empty UTF-8 topic without wildcards or NUL.
bool valid_topic_name(std::string_view topic) noexcept;

/// '+' must occupy a whole level; '#' only as the whole last level.
bool valid_topic_filter(std::string_view filter) noexcept;

/// MQTT matching: '+' matches exactly one level, '#' the remaining levels
/// including none. Topics starting with '$' are not matched by a leading
/// wildcard.
bool match_topic(std::string_view filter, std::string_view topic) noexcept;

}  // namespace piico::mqtt
