#include "piico/mqtt/client.hpp"

#include <algorithm>
#include <cerrno>

#include <poll.h>
#include <sys/socket.h>

#include "piico/mqtt/topic.hpp"

namespace piico::mqtt {

std::chrono::milliseconds reconnect_delay(const ClientOptions& o, unsigned attempt,
                                          std::mt19937& rng) {
  double base = static_cast<double>(o.backoff_initial.count());
  for (unsigned i = 0; i < attempt && base < o.backoff_max.count(); ++i) base *= 2;
  base = std::min(base, static_cast<double>(o.backoff_max.count()));
  std::uniform_real_distribution<double> jitter(1.0 - o.backoff_jitter, 1.0 + o.backoff_jitter);
  return std::chrono::milliseconds(static_cast<long long>(base * jitter(rng)));
}

Client::Client(ClientOptions options)
    : options_(std::move(options)), rng_(std::random_device{}()) {
  thread_ = std::thread([this] { run(); });
}

Client::~Client() { close(); }

std::uint16_t Client::next_id_locked() {
  const auto id = next_id_++;
  if (next_id_ == 0) next_id_ = 1;
  return id;
}

bool Client::write_locked(const Packet& p) {
  if (!sock_ || state_ != ClientState::connected) return false;
  try {
    net::send_all(sock_, encode_packet(p));
    last_tx_ = std::chrono::steady_clock::now();
    return true;
  } catch (const net::NetError&) {
    lost_connection_locked();
    return false;
  }
}

void Client::lost_connection_locked() {
  if (state_ == ClientState::connected) state_ = ClientState::connecting;
  // The I/O thread owns close(); shutdown just wakes it.
  sock_.shutdown();
}

void Client::enqueue_locked(Packet p) {
  while (!backlog_.empty() && backlog_.size() + inflight_.size() >= options_.buffer_cap) {
    backlog_.pop_front();
    ++dropped_;
  }
  if (backlog_.empty() && inflight_.size() >= options_.buffer_cap) {
    inflight_.pop_front();
    ++dropped_;
  }
  backlog_.push_back(std::move(p));
}

PublishStatus Client::publish(const std::string& topic, Bytes payload, std::uint8_t qos,
                              bool retain) {
  std::unique_lock lk(mu_);
  if (closing_ || state_ == ClientState::closed) throw ClientClosed();
  Packet p = Packet::make_publish(topic, std::move(payload), qos, retain, 0);
  if (qos > 0) p.packet_id = next_id_locked();
  encode_packet(p);  // validate before buffering

  if (state_ != ClientState::connected || !backlog_.empty()) {
    enqueue_locked(std::move(p));
    return PublishStatus::queued;
  }
  if (qos > 0) inflight_.push_back(p);
  if (!write_locked(p)) {
    if (qos > 0) inflight_.pop_back();
    enqueue_locked(std::move(p));
    return PublishStatus::queued;
  }
  if (qos == 0) return PublishStatus::delivered;

  const auto id = p.packet_id;
  const bool acked = cv_.wait_for(lk, options_.ack_timeout, [&] {
    return closing_ || std::none_of(inflight_.begin(), inflight_.end(),
                                    [&](const Packet& q) { return q.packet_id == id; });
  });
  const bool still_inflight = std::any_of(inflight_.begin(), inflight_.end(),
                                          [&](const Packet& q) { return q.packet_id == id; });
  return acked && !still_inflight ? PublishStatus::delivered : PublishStatus::queued;
}

void Client::subscribe(const std::string& filter, std::uint8_t qos, MessageHandler handler) {
  std::lock_guard lk(mu_);
  if (closing_) throw ClientClosed();
  subscriptions_[filter] = {qos, std::move(handler)};
  if (state_ == ClientState::connected)
    write_locked(Packet::make_subscribe(next_id_locked(), {{filter, qos}}));
}

bool Client::wait_connected(std::chrono::milliseconds timeout) {
  std::unique_lock lk(mu_);
  return cv_.wait_for(lk, timeout, [&] { return state_ == ClientState::connected || closing_; }) &&
         state_ == ClientState::connected;
}

bool Client::wait_drained(std::chrono::milliseconds timeout) {
  std::unique_lock lk(mu_);
  return cv_.wait_for(lk, timeout, [&] { return backlog_.empty() && inflight_.empty(); });
}

ClientState Client::state() const {
  std::lock_guard lk(mu_);
  return state_;
}

std::size_t Client::buffer_depth() const {
  std::lock_guard lk(mu_);
  return backlog_.size() + inflight_.size();
}

std::uint64_t Client::dropped() const {
  std::lock_guard lk(mu_);
  return dropped_;
}

std::uint64_t Client::connects() const {
  std::lock_guard lk(mu_);
  return connects_;
}

std::uint16_t Client::last_acked_id() const {
  std::lock_guard lk(mu_);
  return last_acked_;
}

void Client::close() {
  {
    std::lock_guard lk(mu_);
    if (state_ == ClientState::closed && !thread_.joinable()) return;
    if (state_ == ClientState::connected) write_locked(Packet::make(PacketType::disconnect));
    closing_ = true;
    sock_.shutdown();
  }
  cv_.notify_all();
  if (thread_.joinable()) thread_.join();
  std::lock_guard lk(mu_);
  state_ = ClientState::closed;
  sock_.close();
}

bool Client::try_connect() {
  net::Socket s;
  try {
    s = net::tcp_connect(options_.broker, options_.connect_timeout);
    net::send_all(s, encode_packet(Packet::make_connect(options_.client_id, options_.keepalive_s)));
  } catch (const net::NetError&) {
    return false;
  }
  PacketReader reader;
  std::vector<std::uint8_t> buf(4096);
  const auto deadline = std::chrono::steady_clock::now() + options_.connect_timeout;
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0 || !net::wait_readable(s, left)) return false;
    std::size_t n = 0;
    try {
      n = net::recv_some(s, buf);
    } catch (const net::NetError&) {
      return false;
    }
    if (n == 0) return false;
    reader.feed(std::span(buf.data(), n));
    std::optional<Packet> p;
    try {
      p = reader.next();
    } catch (const MqttError&) {
      return false;
    }
    if (!p) continue;
    if (p->type != PacketType::connack || p->return_code != 0) return false;
    break;
  }

  std::lock_guard lk(mu_);
  if (closing_) return false;
  sock_ = std::move(s);
  reader_ = std::move(reader);
  state_ = ClientState::connected;
  ++connects_;
  last_tx_ = std::chrono::steady_clock::now();
  for (const auto& [filter, sub] : subscriptions_)
    if (!write_locked(Packet::make_subscribe(next_id_locked(), {{filter, sub.first}})))
      return false;
  flush_locked();
  cv_.notify_all();
  return state_ == ClientState::connected;
}

void Client::flush_locked() {
  // Unacknowledged qos 1 messages go first, flagged as duplicates.
  for (auto& p : inflight_) {
    p.dup = true;
    if (!write_locked(p)) return;
  }
  while (!backlog_.empty()) {
    Packet p = backlog_.front();
    if (p.qos > 0) inflight_.push_back(p);
    if (!write_locked(p)) {
      if (p.qos > 0) inflight_.pop_back();
      return;
    }
    backlog_.pop_front();
  }
}

void Client::handle_incoming(Packet&& p) {
  switch (p.type) {
    case PacketType::puback: {
      {
        std::lock_guard lk(mu_);
        auto it = std::find_if(inflight_.begin(), inflight_.end(),
                               [&](const Packet& q) { return q.packet_id == p.packet_id; });
        if (it != inflight_.end()) inflight_.erase(it);
        last_acked_ = p.packet_id;
      }
      cv_.notify_all();
      return;
    }
    case PacketType::publish: {
      MessageHandler handler;
      {
        std::lock_guard lk(mu_);
        if (p.qos > 0) write_locked(Packet::make_puback(p.packet_id));
        // Deliver through the first registered filter that matches.
        for (const auto& [filter, sub] : subscriptions_) {
          if (match_topic(filter, p.topic)) {
            handler = sub.second;
            break;
          }
        }
      }
      if (handler) handler(p.topic, p.payload);
      return;
    }
    default:
      return;
  }
}

void Client::run() {
  unsigned attempt = 0;
  std::vector<std::uint8_t> buf(16 * 1024);
  for (;;) {
    {
      std::lock_guard lk(mu_);
      if (closing_) return;
    }
    if (state() != ClientState::connected) {
      if (try_connect()) {
        attempt = 0;
        continue;
      }
      const auto delay = reconnect_delay(options_, attempt++, rng_);
      std::unique_lock lk(mu_);
      cv_.wait_for(lk, delay, [&] { return closing_; });
      continue;
    }

    const auto ping_every = std::chrono::milliseconds(
        options_.keepalive_s ? options_.keepalive_s * 500 : 60'000);
    int sock_fd;
    {
      std::lock_guard lk(mu_);
      sock_fd = sock_.fd();
      if (options_.keepalive_s && std::chrono::steady_clock::now() - last_tx_ >= ping_every)
        write_locked(Packet::make(PacketType::pingreq));
    }
    pollfd pfd{sock_fd, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, 200);
    if (rc < 0 && errno != EINTR) continue;
    if (rc <= 0) continue;

    std::size_t n = 0;
    bool lost = false;
    const auto r = ::recv(sock_fd, buf.data(), buf.size(), 0);
    if (r <= 0) {
      lost = !(r < 0 && errno == EINTR);
    } else {
      n = static_cast<std::size_t>(r);
      reader_.feed(std::span(buf.data(), n));
      try {
        while (auto p = reader_.next()) handle_incoming(std::move(*p));
      } catch (const MqttError&) {
        lost = true;
      }
    }
    if (lost) {
      std::lock_guard lk(mu_);
      if (state_ == ClientState::connected) state_ = ClientState::connecting;
      sock_.close();
      reader_ = PacketReader{};
      cv_.notify_all();
    }
  }
}

}  // namespace piico::mqtt
