#pragma once

#include <chrono>
#include <cstddef>
#include <deque>
#include <mutex>
#include <vector>

namespace piico {

using TimePoint = std::chrono::sys_time<std::chrono::milliseconds>;

inline TimePoint now_ms() {
  return std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::now());
}

/// Bounded ring keeping the newest `capacity` samples. Timestamps (the
/// sample's `at` member) must strictly increase.
template <typename Sample>
class SeriesBuffer {
 public:
  explicit SeriesBuffer(std::size_t capacity) : capacity_(capacity) {}

  /// False (and nothing stored) when `s.at` does not advance the series.
  bool push(Sample s) {
    std::lock_guard lk(mu_);
    if (!items_.empty() && !(items_.back().at < s.at)) return false;
    items_.push_back(std::move(s));
    while (items_.size() > capacity_) items_.pop_front();
    return true;
  }

  std::vector<Sample> snapshot() const {
    std::lock_guard lk(mu_);
    return {items_.begin(), items_.end()};
  }

  std::size_t size() const {
    std::lock_guard lk(mu_);
    return items_.size();
  }

  std::size_t capacity() const noexcept { return capacity_; }

 private:
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::deque<Sample> items_;
};

}  // namespace piico
