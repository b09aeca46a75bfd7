#include "piico/net.hpp"

#include <cerrno>
#include <charconv>
#include <cstring>

#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <unistd.h>

namespace piico::net {

namespace {

struct AddrInfo {
  addrinfo* head = nullptr;
  ~AddrInfo() {
    if (head) ::freeaddrinfo(head);
  }
};

AddrInfo resolve(const HostPort& hp, int socktype, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = socktype;
  if (passive) hints.ai_flags = AI_PASSIVE;
  const std::string port = std::to_string(hp.port);
  const char* host = hp.host.empty() ? nullptr : hp.host.c_str();
  AddrInfo out;
  const int rc = ::getaddrinfo(host, port.c_str(), &hints, &out.head);
  if (rc != 0)
    throw NetError("resolve " + hp.str() + ": " + ::gai_strerror(rc), EHOSTUNREACH);
  return out;
}

[[noreturn]] void throw_errno(const std::string& what) {
  const int e = errno;
  throw NetError(what + ": " + std::strerror(e), e);
}

}  // namespace

NetError::NetError(const std::string& what, int err) : std::runtime_error(what), err_(err) {}

HostPort HostPort::parse(std::string_view s) {
  std::string_view host;
  std::string_view port;
  if (!s.empty() && s.front() == '[') {
    const auto close = s.find(']');
    if (close == std::string_view::npos || close + 1 >= s.size() || s[close + 1] != ':')
      throw std::invalid_argument("bad address: " + std::string(s));
    host = s.substr(1, close - 1);
    port = s.substr(close + 2);
  } else {
    const auto colon = s.rfind(':');
    if (colon == std::string_view::npos)
      throw std::invalid_argument("address needs host:port: " + std::string(s));
    host = s.substr(0, colon);
    port = s.substr(colon + 1);
  }
  unsigned value = 0;
  const auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), value);
  if (ec != std::errc{} || ptr != port.data() + port.size() || value > 65535)
    throw std::invalid_argument("bad port in address: " + std::string(s));
  return HostPort{std::string(host), static_cast<std::uint16_t>(value)};
}

std::string HostPort::str() const {
  if (host.find(':') != std::string::npos) return "[" + host + "]:" + std::to_string(port);
  return host + ":" + std::to_string(port);
}

Socket& Socket::operator=(Socket&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = o.release();
  }
  return *this;
}

void Socket::close() noexcept {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void Socket::shutdown() noexcept {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

Socket tcp_listen(const HostPort& at, int backlog) {
  auto ai = resolve(at, SOCK_STREAM, true);
  int last_err = 0;
  for (auto* a = ai.head; a; a = a->ai_next) {
    Socket s(::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol));
    if (!s) continue;
    int one = 1;
    ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(s.fd(), a->ai_addr, a->ai_addrlen) == 0 && ::listen(s.fd(), backlog) == 0)
      return s;
    last_err = errno;
  }
  throw NetError("bind " + at.str() + ": " + std::strerror(last_err), last_err);
}

Socket tcp_connect(const HostPort& to, std::chrono::milliseconds timeout) {
  auto ai = resolve(to, SOCK_STREAM, false);
  int last_err = ECONNREFUSED;
  for (auto* a = ai.head; a; a = a->ai_next) {
    Socket s(::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC | SOCK_NONBLOCK,
                      a->ai_protocol));
    if (!s) continue;
    int rc = ::connect(s.fd(), a->ai_addr, a->ai_addrlen);
    if (rc != 0 && errno == EINPROGRESS) {
      pollfd p{s.fd(), POLLOUT, 0};
      rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
      if (rc == 1) {
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
        rc = err == 0 ? 0 : -1;
        errno = err;
      } else {
        rc = -1;
        errno = ETIMEDOUT;
      }
    }
    if (rc == 0) {
      const int flags = ::fcntl(s.fd(), F_GETFL);
      ::fcntl(s.fd(), F_SETFL, flags & ~O_NONBLOCK);
      int one = 1;
      ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return s;
    }
    last_err = errno;
  }
  throw NetError("connect " + to.str() + ": " + std::strerror(last_err), last_err);
}

Socket udp_bind(const HostPort& at) {
  auto ai = resolve(at, SOCK_DGRAM, true);
  int last_err = 0;
  for (auto* a = ai.head; a; a = a->ai_next) {
    Socket s(::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol));
    if (!s) continue;
    if (::bind(s.fd(), a->ai_addr, a->ai_addrlen) == 0) return s;
    last_err = errno;
  }
  throw NetError("bind " + at.str() + ": " + std::strerror(last_err), last_err);
}

Socket udp_connect(const HostPort& to) {
  auto ai = resolve(to, SOCK_DGRAM, false);
  int last_err = 0;
  for (auto* a = ai.head; a; a = a->ai_next) {
    Socket s(::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol));
    if (!s) continue;
    if (::connect(s.fd(), a->ai_addr, a->ai_addrlen) == 0) return s;
    last_err = errno;
  }
  throw NetError("connect " + to.str() + ": " + std::strerror(last_err), last_err);
}

std::uint16_t local_port(const Socket& s) {
  sockaddr_storage ss{};
  socklen_t len = sizeof ss;
  if (::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&ss), &len) != 0)
    throw_errno("getsockname");
  if (ss.ss_family == AF_INET) return ntohs(reinterpret_cast<sockaddr_in*>(&ss)->sin_port);
  return ntohs(reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port);
}

void send_all(const Socket& s, std::span<const std::uint8_t> data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const auto n = ::send(s.fd(), data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("send");
    }
    off += static_cast<std::size_t>(n);
  }
}

std::size_t recv_some(const Socket& s, std::span<std::uint8_t> buf) {
  for (;;) {
    const auto n = ::recv(s.fd(), buf.data(), buf.size(), 0);
    if (n >= 0) return static_cast<std::size_t>(n);
    if (errno == EINTR) continue;
    throw_errno("recv");
  }
}

bool peer_closed(const Socket& s) {
  pollfd p{s.fd(), POLLIN | POLLRDHUP, 0};
  if (::poll(&p, 1, 0) <= 0) return false;
  if (p.revents & (POLLRDHUP | POLLHUP | POLLERR | POLLNVAL)) return true;
  std::uint8_t b;
  const auto n = ::recv(s.fd(), &b, 1, MSG_PEEK | MSG_DONTWAIT);
  return n == 0 || (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK);
}

bool wait_readable(const Socket& s, std::chrono::milliseconds timeout) {
  pollfd p{s.fd(), POLLIN, 0};
  for (;;) {
    const int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (rc < 0 && errno == EINTR) continue;
    return rc > 0;
  }
}

Wakeup::Wakeup() {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC | O_NONBLOCK) != 0) throw_errno("pipe");
  rd_ = fds[0];
  wr_ = fds[1];
}

Wakeup::~Wakeup() {
  ::close(rd_);
  ::close(wr_);
}

void Wakeup::notify() noexcept {
  const char c = 1;
  [[maybe_unused]] auto rc = ::write(wr_, &c, 1);
}

void Wakeup::drain() noexcept {
  char buf[64];
  while (::read(rd_, buf, sizeof buf) > 0) {
  }
}

}  // namespace piico::net
