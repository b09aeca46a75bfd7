#include "piico/link.hpp"

#include <cerrno>
#include <cstring>
#include <vector>

#include <poll.h>
#include <sys/socket.h>

namespace piico {

namespace {

LinkError disconnected(const std::string& detail) {
  return LinkError(LinkErrc::disconnected, detail);
}

}  // namespace

const char* to_string(LinkErrc e) noexcept {
  switch (e) {
    case LinkErrc::bind_failure: return "bind-failure";
    case LinkErrc::disconnected: return "disconnected";
    case LinkErrc::payload_too_large: return "payload-too-large";
    case LinkErrc::consumer_closed: return "consumer-closed";
  }
  return "unknown";
}

LinkError::LinkError(LinkErrc code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

struct LinkListener::Conn {
  net::Socket sock;
  StreamFrameReader reader;
  std::mutex write_mu;
};

LinkListener::LinkListener(LinkEndpoint endpoint, FrameSink sink)
    : endpoint_(std::move(endpoint)), sink_(std::move(sink)) {
  try {
    sock_ = endpoint_.transport() == TransportKind::stream ? net::tcp_listen(endpoint_.address)
                                                           : net::udp_bind(endpoint_.address);
    port_ = net::local_port(sock_);
  } catch (const net::NetError& e) {
    throw LinkError(LinkErrc::bind_failure,
                    std::string(to_string(endpoint_.protocol)) + " " + e.what());
  }
  if (endpoint_.transport() == TransportKind::stream)
    thread_ = std::thread([this] { run_stream(); });
  else
    thread_ = std::thread([this] { run_datagram(); });
}

LinkListener::~LinkListener() { stop(); }

void LinkListener::stop() {
  running_ = false;
  wake_.notify();
  if (thread_.joinable()) thread_.join();
  std::lock_guard lk(mu_);
  by_node_.clear();
  sock_.close();
}

LinkStats LinkListener::stats() const {
  std::lock_guard lk(mu_);
  return stats_;
}

void LinkListener::count_malformed() {
  std::lock_guard lk(mu_);
  ++stats_.malformed;
}

bool LinkListener::deliver(LinkFrame&& f, std::size_t wire_bytes) {
  if (f.protocol != endpoint_.protocol) {
    count_malformed();
    return true;
  }
  {
    std::lock_guard lk(mu_);
    ++stats_.frames_accepted;
    stats_.bytes_accepted += wire_bytes;
  }
  ReceivedFrame rf{std::move(f), endpoint_.protocol, std::chrono::system_clock::now(),
                   wire_bytes};
  if (!sink_(std::move(rf))) {
    consumer_closed_ = true;
    running_ = false;
    return false;
  }
  return true;
}

void LinkListener::run_stream() {
  std::vector<std::shared_ptr<Conn>> conns;
  std::vector<pollfd> fds;
  std::vector<std::uint8_t> buf(16 * 1024);

  auto drop_conn = [&](std::size_t i) {
    std::lock_guard lk(mu_);
    for (auto it = by_node_.begin(); it != by_node_.end();) {
      if (it->second == conns[i])
        it = by_node_.erase(it);
      else
        ++it;
    }
    conns.erase(conns.begin() + static_cast<std::ptrdiff_t>(i));
  };

  while (running_) {
    fds.clear();
    fds.push_back({wake_.fd(), POLLIN, 0});
    fds.push_back({sock_.fd(), POLLIN, 0});
    for (auto& c : conns) fds.push_back({c->sock.fd(), POLLIN, 0});
    if (::poll(fds.data(), fds.size(), 500) < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (fds[0].revents) wake_.drain();
    if (!running_) break;

    if (fds[1].revents & POLLIN) {
      const int fd = ::accept4(sock_.fd(), nullptr, nullptr, SOCK_CLOEXEC);
      if (fd >= 0) {
        auto c = std::make_shared<Conn>();
        c->sock = net::Socket(fd);
        conns.push_back(std::move(c));
        std::lock_guard lk(mu_);
        ++stats_.connections;
      }
    }

    // Walk backwards so erasing keeps earlier poll indices valid.
    for (std::size_t k = fds.size(); k-- > 2;) {
      if (!fds[k].revents) continue;
      const std::size_t i = k - 2;
      auto& c = conns[i];
      std::size_t n = 0;
      try {
        n = net::recv_some(c->sock, buf);
      } catch (const net::NetError&) {
        n = 0;
      }
      if (n == 0) {
        drop_conn(i);
        continue;
      }
      c->reader.feed(std::span(buf.data(), n));
      bool broken = false;
      try {
        while (auto item = c->reader.next()) {
          if (!item->frame) {
            count_malformed();
            continue;
          }
          {
            std::lock_guard lk(mu_);
            by_node_[item->frame->node_id] = c;
          }
          if (!deliver(std::move(*item->frame), item->wire_bytes)) return;
        }
      } catch (const FrameError&) {
        count_malformed();
        broken = true;
      }
      if (broken) drop_conn(i);
    }
  }
}

void LinkListener::run_datagram() {
  std::vector<std::uint8_t> buf(64 * 1024);
  while (running_) {
    pollfd fds[2] = {{wake_.fd(), POLLIN, 0}, {sock_.fd(), POLLIN, 0}};
    if (::poll(fds, 2, 500) < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (fds[0].revents) wake_.drain();
    if (!running_) break;
    if (!(fds[1].revents & POLLIN)) continue;

    sockaddr_storage from{};
    socklen_t from_len = sizeof from;
    const auto n = ::recvfrom(sock_.fd(), buf.data(), buf.size(), 0,
                              reinterpret_cast<sockaddr*>(&from), &from_len);
    if (n < 0) continue;
    LinkFrame f;
    try {
      f = decode_frame(std::span(buf.data(), static_cast<std::size_t>(n)));
    } catch (const FrameError&) {
      count_malformed();
      continue;
    }
    {
      std::lock_guard lk(mu_);
      const auto* p = reinterpret_cast<const std::uint8_t*>(&from);
      dgram_peers_[f.node_id].assign(p, p + from_len);
    }
    if (!deliver(std::move(f), static_cast<std::size_t>(n))) return;
  }
}

void LinkListener::send_to(const std::string& node_id, const LinkFrame& f) {
  if (f.payload.size() > mtu(endpoint_.protocol))
    throw LinkError(LinkErrc::payload_too_large, std::to_string(f.payload.size()) + " bytes");
  const Bytes wire = encode_frame(f);
  if (endpoint_.transport() == TransportKind::datagram) {
    std::vector<std::uint8_t> addr;
    {
      std::lock_guard lk(mu_);
      auto it = dgram_peers_.find(node_id);
      if (it == dgram_peers_.end()) throw disconnected("no route to " + node_id);
      addr = it->second;
    }
    const auto rc = ::sendto(sock_.fd(), wire.data(), wire.size(), 0,
                             reinterpret_cast<const sockaddr*>(addr.data()),
                             static_cast<socklen_t>(addr.size()));
    if (rc < 0) throw disconnected(std::strerror(errno));
    return;
  }
  std::shared_ptr<Conn> c;
  {
    std::lock_guard lk(mu_);
    auto it = by_node_.find(node_id);
    if (it == by_node_.end()) throw disconnected("no connection from " + node_id);
    c = it->second;
  }
  std::lock_guard wl(c->write_mu);
  try {
    net::send_all(c->sock, wire);
  } catch (const net::NetError& e) {
    throw disconnected(e.what());
  }
}

LinkClient::LinkClient(LinkEndpoint endpoint, std::chrono::milliseconds connect_timeout)
    : endpoint_(std::move(endpoint)) {
  try {
    sock_ = endpoint_.transport() == TransportKind::stream
                ? net::tcp_connect(endpoint_.address, connect_timeout)
                : net::udp_connect(endpoint_.address);
  } catch (const net::NetError& e) {
    throw disconnected(e.what());
  }
}

void LinkClient::send(const LinkFrame& f) {
  if (f.payload.size() > mtu(endpoint_.protocol))
    throw LinkError(LinkErrc::payload_too_large, std::to_string(f.payload.size()) + " bytes");
  if (!sock_) throw disconnected("closed");
  const Bytes wire = encode_frame(f);

  if (endpoint_.transport() == TransportKind::stream) {
    // Check before writing so a closed peer never sees a torn frame.
    if (net::peer_closed(sock_)) {
      sock_.close();
      throw disconnected("peer closed");
    }
    try {
      net::send_all(sock_, wire);
    } catch (const net::NetError& e) {
      sock_.close();
      throw disconnected(e.what());
    }
    return;
  }

  auto pending_error = [this] {
    int err = 0;
    socklen_t len = sizeof err;
    ::getsockopt(sock_.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
    return err;
  };
  if (const int err = pending_error()) throw disconnected(std::strerror(err));
  if (::send(sock_.fd(), wire.data(), wire.size(), MSG_NOSIGNAL) < 0)
    throw disconnected(std::strerror(errno));
  // On loopback an ICMP port-unreachable is queued synchronously.
  if (const int err = pending_error()) throw disconnected(std::strerror(err));
}

std::optional<LinkFrame> LinkClient::receive(std::chrono::milliseconds timeout) {
  if (!sock_) throw disconnected("closed");
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  std::vector<std::uint8_t> buf(64 * 1024);
  for (;;) {
    if (endpoint_.transport() == TransportKind::stream) {
      try {
        while (auto item = reader_.next())
          if (item->frame) return std::move(item->frame);
      } catch (const FrameError& e) {
        sock_.close();
        throw disconnected(e.what());
      }
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0 || !net::wait_readable(sock_, left)) return std::nullopt;
    std::size_t n = 0;
    try {
      n = net::recv_some(sock_, buf);
    } catch (const net::NetError& e) {
      sock_.close();
      throw disconnected(e.what());
    }
    if (endpoint_.transport() == TransportKind::datagram) {
      try {
        return decode_frame(std::span(buf.data(), n));
      } catch (const FrameError&) {
        continue;
      }
    }
    if (n == 0) {
      sock_.close();
      throw disconnected("peer closed");
    }
    reader_.feed(std::span(buf.data(), n));
  }
}

}  // namespace piico
