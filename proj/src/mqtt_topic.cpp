#include "piico/mqtt/topic.hpp"

#include "piico/utf8.hpp"

namespace piico::mqtt {

bool valid_topic_name(std::string_view topic) noexcept {
  if (topic.empty() || topic.size() > 0xFFFF || !is_valid_utf8(topic)) return false;
  return topic.find_first_of(std::string_view("+#\0", 3)) == std::string_view::npos;
}

bool valid_topic_filter(std::string_view filter) noexcept {
  if (filter.empty() || filter.size() > 0xFFFF || !is_valid_utf8(filter)) return false;
  if (filter.find('\0') != std::string_view::npos) return false;
  std::size_t start = 0;
  for (;;) {
    const auto end = filter.find('/', start);
    const auto level = filter.substr(start, end == std::string_view::npos ? end : end - start);
    if (level.find_first_of("+#") != std::string_view::npos) {
      if (level.size() != 1) return false;
      if (level == "#" && end != std::string_view::npos) return false;
    }
    if (end == std::string_view::npos) return true;
    start = end + 1;
  }
}

bool match_topic(std::string_view filter, std::string_view topic) noexcept {
  if (!topic.empty() && topic.front() == '$' && !filter.empty() &&
      (filter.front() == '+' || filter.front() == '#'))
    return false;

  std::size_t fi = 0;
  std::size_t ti = 0;
  for (;;) {
    const auto fend = filter.find('/', fi);
    const auto flevel = filter.substr(fi, fend == std::string_view::npos ? fend : fend - fi);
    if (flevel == "#") return true;

    const auto tend = topic.find('/', ti);
    const auto tlevel = topic.substr(ti, tend == std::string_view::npos ? tend : tend - ti);
    if (flevel != "+" && flevel != tlevel) return false;

    const bool f_last = fend == std::string_view::npos;
    const bool t_last = tend == std::string_view::npos;
    if (t_last) {
      if (f_last) return true;
      // "a/#" also matches "a": the remaining filter must be exactly "#".
      return filter.substr(fend + 1) == "#";
    }
    if (f_last) return false;
    fi = fend + 1;
    ti = tend + 1;
  }
}

}  // namespace piico::mqtt
