#include "piico/mqtt/broker.hpp"

#include <algorithm>
#include <cerrno>

#include <poll.h>
#include <sys/socket.h>

#include "piico/mqtt/topic.hpp"

namespace piico::mqtt {

namespace {

constexpr std::uint8_t kConnackAccepted = 0x00;
constexpr std::uint8_t kConnackIdRejected = 0x02;
constexpr std::uint8_t kConnackNotAuthorized = 0x05;

}  // namespace

void SubscriptionTable::add(const std::string& filter, SessionId session, std::uint8_t qos) {
  std::unique_lock lk(mu_);
  filters_[filter][session] = qos;
}

void SubscriptionTable::remove(const std::string& filter, SessionId session) {
  std::unique_lock lk(mu_);
  auto it = filters_.find(filter);
  if (it == filters_.end()) return;
  it->second.erase(session);
  if (it->second.empty()) filters_.erase(it);
}

void SubscriptionTable::remove_session(SessionId session) {
  std::unique_lock lk(mu_);
  for (auto it = filters_.begin(); it != filters_.end();) {
    it->second.erase(session);
    if (it->second.empty())
      it = filters_.erase(it);
    else
      ++it;
  }
}

std::map<SessionId, std::uint8_t> SubscriptionTable::match(std::string_view topic) const {
  std::shared_lock lk(mu_);
  std::map<SessionId, std::uint8_t> out;
  for (const auto& [filter, sessions] : filters_) {
    if (!match_topic(filter, topic)) continue;
    for (const auto& [sid, qos] : sessions) {
      auto [it, inserted] = out.emplace(sid, qos);
      if (!inserted) it->second = std::max(it->second, qos);
    }
  }
  return out;
}

std::size_t SubscriptionTable::filter_count() const {
  std::shared_lock lk(mu_);
  return filters_.size();
}

struct Broker::Session {
  SessionId id = 0;
  std::string client_id;
  net::Socket sock;
  std::mutex write_mu;
  std::uint16_t next_packet_id = 1;
  std::uint16_t keepalive_s = 0;
  std::atomic<bool> done{false};
  std::atomic<bool> finished{false};
  bool connected = false;

  bool write(const Packet& p) {
    const Bytes wire = encode_packet(p);
    std::lock_guard lk(write_mu);
    if (!sock) return false;
    try {
      net::send_all(sock, wire);
      return true;
    } catch (const net::NetError&) {
      sock.shutdown();
      return false;
    }
  }
};

Broker::Broker(BrokerOptions options) : options_(std::move(options)) {
  listen_ = net::tcp_listen(options_.bind);
  port_ = net::local_port(listen_);
  accept_thread_ = std::thread([this] { accept_loop(); });
}

Broker::~Broker() { stop(); }

void Broker::stop() {
  if (!running_.exchange(false)) {
    if (accept_thread_.joinable()) accept_thread_.join();
    return;
  }
  wake_.notify();
  if (accept_thread_.joinable()) accept_thread_.join();
  listen_.close();
  {
    std::lock_guard lk(mu_);
    for (auto& [id, s] : sessions_) {
      std::lock_guard wl(s->write_mu);
      s->sock.shutdown();
    }
  }
  std::list<std::pair<std::shared_ptr<Session>, std::thread>> threads;
  {
    std::lock_guard lk(threads_mu_);
    threads.swap(threads_);
  }
  for (auto& [s, t] : threads)
    if (t.joinable()) t.join();
}

void Broker::reap_finished() {
  std::lock_guard lk(threads_mu_);
  for (auto it = threads_.begin(); it != threads_.end();) {
    if (it->first->finished) {
      if (it->second.joinable()) it->second.join();
      it = threads_.erase(it);
    } else {
      ++it;
    }
  }
}

void Broker::accept_loop() {
  while (running_) {
    pollfd fds[2] = {{wake_.fd(), POLLIN, 0}, {listen_.fd(), POLLIN, 0}};
    if (::poll(fds, 2, 1000) < 0 && errno != EINTR) break;
    if (!running_) break;
    reap_finished();
    if (!(fds[1].revents & POLLIN)) continue;
    const int fd = ::accept4(listen_.fd(), nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    auto s = std::make_shared<Session>();
    s->sock = net::Socket(fd);
    {
      std::lock_guard lk(mu_);
      s->id = next_session_++;
    }
    std::lock_guard lk(threads_mu_);
    threads_.emplace_back(s, std::thread([this, s] { session_loop(s); }));
  }
}

void Broker::session_loop(std::shared_ptr<Session> s) {
  PacketReader reader;
  std::vector<std::uint8_t> buf(16 * 1024);
  auto last_rx = std::chrono::steady_clock::now();

  while (running_) {
    // Before CONNECT the connect timeout applies; afterwards 1.5x keepalive.
    std::chrono::milliseconds limit = options_.connect_timeout;
    if (s->connected) limit = std::chrono::milliseconds(s->keepalive_s * 1500);
    int wait_ms = 200;
    if (!s->connected || s->keepalive_s > 0) {
      // Rounded up so the session is never dropped before the limit.
      const auto left = std::chrono::ceil<std::chrono::milliseconds>(
          last_rx + limit - std::chrono::steady_clock::now());
      if (left.count() <= 0) {
        if (s->connected) ++keepalive_drops_;
        break;
      }
      wait_ms = static_cast<int>(std::min<long long>(left.count(), 200));
    }

    pollfd p{s->sock.fd(), POLLIN, 0};
    const int rc = ::poll(&p, 1, wait_ms);
    if (rc < 0 && errno != EINTR) break;
    if (rc <= 0) continue;

    std::size_t n = 0;
    try {
      n = net::recv_some(s->sock, buf);
    } catch (const net::NetError&) {
      break;
    }
    if (n == 0) break;
    last_rx = std::chrono::steady_clock::now();
    reader.feed(std::span(buf.data(), n));
    try {
      bool closing = false;
      while (auto pkt = reader.next()) {
        if (pkt->type == PacketType::disconnect) {
          closing = true;
          break;
        }
        handle(s, std::move(*pkt));
        if (!s->sock.valid() || s->done) {
          closing = true;
          break;
        }
      }
      if (closing) break;
    } catch (const MqttError&) {
      break;
    }
  }
  drop_session(s);
  s->done = true;
  s->finished = true;
}

void Broker::drop_session(const std::shared_ptr<Session>& s) {
  subs_.remove_session(s->id);
  {
    std::lock_guard lk(mu_);
    sessions_.erase(s->id);
    auto it = by_client_.find(s->client_id);
    if (it != by_client_.end() && it->second == s->id) by_client_.erase(it);
  }
  std::lock_guard wl(s->write_mu);
  s->sock.shutdown();
}

void Broker::handle(const std::shared_ptr<Session>& s, Packet&& p) {
  if (!s->connected) {
    if (p.type != PacketType::connect) {
      s->done = true;
      return;
    }
    const auto& cid = p.client_id;
    if (cid.empty() || cid.size() > 23) {
      s->write(Packet::make_connack(kConnackIdRejected));
      s->done = true;
      return;
    }
    if (!options_.allowlist.empty() &&
        std::find(options_.allowlist.begin(), options_.allowlist.end(), cid) ==
            options_.allowlist.end()) {
      s->write(Packet::make_connack(kConnackNotAuthorized));
      s->done = true;
      return;
    }
    std::shared_ptr<Session> previous;
    {
      std::lock_guard lk(mu_);
      if (auto it = by_client_.find(cid); it != by_client_.end()) {
        auto old = sessions_.find(it->second);
        if (old != sessions_.end()) previous = old->second;
      }
      s->client_id = cid;
      s->keepalive_s = p.keepalive_s;
      s->connected = true;
      sessions_[s->id] = s;
      by_client_[cid] = s->id;
    }
    if (previous) {
      // Takeover: the older connection with this client id is closed.
      subs_.remove_session(previous->id);
      std::lock_guard wl(previous->write_mu);
      previous->sock.shutdown();
    }
    s->write(Packet::make_connack(kConnackAccepted));
    return;
  }

  switch (p.type) {
    case PacketType::connect:
      s->done = true;  // second CONNECT is a protocol violation
      return;
    case PacketType::publish:
      // Acknowledge only once the message is stored and routed.
      route(s->client_id, p);
      if (p.qos == 1) s->write(Packet::make_puback(p.packet_id));
      return;
    case PacketType::subscribe: {
      std::vector<std::uint8_t> granted;
      // One copy per retained topic even when several new filters match it.
      std::map<std::string, std::pair<RetainedMessage, std::uint8_t>> to_send;
      {
        // Same lock as route(): a concurrent publish is seen either live or
        // as retained, never both.
        std::lock_guard lk(mu_);
        for (const auto& [filter, qos] : p.subscriptions) {
          subs_.add(filter, s->id, qos);
          granted.push_back(qos);
          for (const auto& [topic, msg] : retained_)
            if (match_topic(filter, topic)) {
              auto [it, fresh] = to_send.try_emplace(topic, msg, 0);
              it->second.second = std::max(it->second.second, std::min(qos, msg.qos));
            }
        }
      }
      s->write(Packet::make_suback(p.packet_id, std::move(granted)));
      for (const auto& [topic, entry] : to_send)
        deliver(s, topic, entry.first.payload, entry.second, true);
      return;
    }
    case PacketType::unsubscribe:
      for (const auto& f : p.unsubscribe_filters) subs_.remove(f, s->id);
      s->write(Packet::make_unsuback(p.packet_id));
      return;
    case PacketType::pingreq:
      s->write(Packet::make(PacketType::pingresp));
      return;
    case PacketType::puback:
      return;
    default:
      s->done = true;  // server-to-client packet types are not valid here
      return;
  }
}

void Broker::publish(const std::string& topic, Bytes payload, std::uint8_t qos, bool retain) {
  Packet p = Packet::make_publish(topic, std::move(payload), qos, retain, qos ? 1 : 0);
  if (!valid_topic_name(topic)) throw MqttError(MqttErrc::protocol_violation, "topic " + topic);
  if (qos > 1) throw MqttError(MqttErrc::unsupported_qos, "qos " + std::to_string(qos));
  route("", p);
}

void Broker::set_publish_observer(PublishObserver observer) {
  std::lock_guard lk(mu_);
  observer_ = std::move(observer);
}

void Broker::route(const std::string& origin, const Packet& p) {
  std::vector<std::pair<std::shared_ptr<Session>, std::uint8_t>> targets;
  PublishObserver observer;
  {
    std::lock_guard lk(mu_);
    observer = observer_;
    if (p.retain) {
      if (p.payload.empty())
        retained_.erase(p.topic);
      else
        retained_[p.topic] = RetainedMessage{p.payload, p.qos};
    }
    for (const auto& [sid, qos] : subs_.match(p.topic)) {
      auto it = sessions_.find(sid);
      if (it != sessions_.end()) targets.emplace_back(it->second, std::min(qos, p.qos));
    }
  }
  if (observer) observer(origin, p);
  for (const auto& [s, qos] : targets) deliver(s, p.topic, p.payload, qos, false);
}

void Broker::deliver(const std::shared_ptr<Session>& s, const std::string& topic,
                     const Bytes& payload, std::uint8_t qos, bool retain) {
  std::uint16_t id = 0;
  if (qos > 0) {
    std::lock_guard wl(s->write_mu);
    id = s->next_packet_id++;
    if (s->next_packet_id == 0) s->next_packet_id = 1;
  }
  s->write(Packet::make_publish(topic, payload, qos, retain, id));
}

std::size_t Broker::session_count() const {
  std::lock_guard lk(mu_);
  return sessions_.size();
}

std::optional<RetainedMessage> Broker::retained(const std::string& topic) const {
  std::lock_guard lk(mu_);
  auto it = retained_.find(topic);
  if (it == retained_.end()) return std::nullopt;
  return it->second;
}

}  // namespace piico::mqtt
