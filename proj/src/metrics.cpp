#include "piico/metrics.hpp"

#include <fstream>
#include <sstream>

namespace piico {

std::vector<ThroughputSample> ThroughputMeter::window_series(ProtocolId iface, TimePoint from,
                                                             TimePoint to) const {
  std::vector<ThroughputSample> out;
  for (const auto& w : counter_.series(iface, from, to))
    out.push_back({iface, w.window_start, w.window_len, w.bytes, w.bps()});
  return out;
}

std::optional<ResourceReading> HostResourceProvider::read() {
  std::ifstream stat("/proc/stat");
  std::string label;
  if (!(stat >> label) || label != "cpu") return std::nullopt;
  std::uint64_t user, nice, system, idle, iowait = 0, irq = 0, softirq = 0, steal = 0;
  if (!(stat >> user >> nice >> system >> idle)) return std::nullopt;
  stat >> iowait >> irq >> softirq >> steal;
  const std::uint64_t idle_all = idle + iowait;
  const std::uint64_t total = user + nice + system + idle_all + irq + softirq + steal;
  const std::uint64_t busy = total - idle_all;

  ResourceReading r;
  if (prev_total_ && total > prev_total_)
    r.cpu_pct = 100.0 * static_cast<double>(busy - prev_busy_) /
                static_cast<double>(total - prev_total_);
  prev_busy_ = busy;
  prev_total_ = total;

  std::ifstream mem("/proc/meminfo");
  std::string line;
  while (std::getline(mem, line)) {
    std::istringstream ls(line);
    std::string key;
    std::uint64_t kb = 0;
    ls >> key >> kb;
    if (key == "MemTotal:") r.ram_total_bytes = kb * 1024;
    if (key == "MemAvailable:") r.ram_free_bytes = kb * 1024;
  }
  if (r.ram_total_bytes == 0) return std::nullopt;
  return r;
}

std::optional<ResourceReading> ScriptedResourceProvider::read() {
  if (script_.empty()) return std::nullopt;
  const auto& r = script_[std::min(next_, script_.size() - 1)];
  ++next_;
  return r;
}

ResourceSampler::ResourceSampler(std::shared_ptr<ResourceProvider> provider,
                                 std::chrono::milliseconds period, std::size_t capacity)
    : provider_(std::move(provider)), period_(period), buffer_(capacity) {}

bool ResourceSampler::tick(TimePoint now) {
  std::lock_guard lk(mu_);
  if (next_due_ && now < *next_due_) return false;
  // Keep the grid: a late tick does not shift later samples.
  if (!next_due_) next_due_ = now;
  while (*next_due_ <= now) *next_due_ += period_;

  const auto reading = provider_->read();
  if (!reading || reading->ram_free_bytes > reading->ram_total_bytes) {
    ++skipped_;
    return false;
  }
  return buffer_.push({now, reading->cpu_pct, reading->ram_free_bytes, reading->ram_total_bytes});
}

}  // namespace piico
