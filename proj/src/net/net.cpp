#include "streamkit/net/net.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <openssl/err.h>
#include <openssl/ssl.h>
#include <openssl/x509.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/uio.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>

namespace streamkit::net {

namespace {

[[noreturn]] void throw_errno(const std::string& what) {
  throw NetError(what + ": " + std::strerror(errno));
}

std::string ssl_error_text(const std::string& what) {
  char buf[256];
  ERR_error_string_n(ERR_peek_last_error(), buf, sizeof buf);
  ERR_clear_error();
  return what + ": " + buf;
}

}  // namespace

Endpoint Endpoint::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 >= text.size()) {
    throw NetError("endpoint must be host:port, got \"" + std::string(text) + "\"");
  }
  Endpoint ep;
  ep.host = std::string(text.substr(0, colon));
  const auto port_text = text.substr(colon + 1);
  unsigned port = 0;
  auto [p, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
  if (ec != std::errc() || p != port_text.data() + port_text.size() || port > 65535) {
    throw NetError("bad port in endpoint \"" + std::string(text) + "\"");
  }
  ep.port = static_cast<std::uint16_t>(port);
  return ep;
}

Socket& Socket::operator=(Socket&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = o.fd_;
    o.fd_ = -1;
  }
  return *this;
}

void Socket::close() noexcept {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void Socket::tune() {
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  int buf = 8 << 20;
  ::setsockopt(fd_, SOL_SOCKET, SO_SNDBUF, &buf, sizeof buf);
  ::setsockopt(fd_, SOL_SOCKET, SO_RCVBUF, &buf, sizeof buf);
}

namespace {

struct AddrInfo {
  addrinfo* res = nullptr;
  ~AddrInfo() {
    if (res) freeaddrinfo(res);
  }
};

}  // namespace

Socket dial(const Endpoint& ep, int timeout_ms) {
  AddrInfo ai;
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  const std::string port = std::to_string(ep.port);
  const int rc = getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &ai.res);
  if (rc != 0) {
    throw NetError("resolve " + ep.str() + ": " + gai_strerror(rc));
  }

  std::string last_error = "no addresses";
  for (addrinfo* a = ai.res; a; a = a->ai_next) {
    Socket s(::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol));
    if (!s.valid()) {
      last_error = std::strerror(errno);
      continue;
    }
    // Connect with a deadline so a dead endpoint fails promptly.
    if (timeout_ms > 0) {
      timeval tv{timeout_ms / 1000, (timeout_ms % 1000) * 1000};
      ::setsockopt(s.fd(), SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
    }
    if (::connect(s.fd(), a->ai_addr, a->ai_addrlen) == 0) {
      timeval off{0, 0};
      ::setsockopt(s.fd(), SOL_SOCKET, SO_SNDTIMEO, &off, sizeof off);
      s.tune();
      return s;
    }
    last_error = std::strerror(errno);
  }
  throw NetError("connect " + ep.str() + ": " + last_error);
}

Listener Listener::bind(const Endpoint& ep) {
  AddrInfo ai;
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  const std::string port = std::to_string(ep.port);
  const int rc =
      getaddrinfo(ep.host.empty() ? nullptr : ep.host.c_str(), port.c_str(), &hints, &ai.res);
  if (rc != 0) {
    throw NetError("resolve " + ep.str() + ": " + gai_strerror(rc));
  }

  std::string last_error = "no addresses";
  for (addrinfo* a = ai.res; a; a = a->ai_next) {
    Socket s(::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol));
    if (!s.valid()) continue;
    int one = 1;
    ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(s.fd(), a->ai_addr, a->ai_addrlen) != 0 || ::listen(s.fd(), 128) != 0) {
      last_error = std::strerror(errno);
      continue;
    }
    sockaddr_storage bound{};
    socklen_t len = sizeof bound;
    getsockname(s.fd(), reinterpret_cast<sockaddr*>(&bound), &len);
    Listener l;
    l.port_ = ntohs(bound.ss_family == AF_INET6
                        ? reinterpret_cast<sockaddr_in6*>(&bound)->sin6_port
                        : reinterpret_cast<sockaddr_in*>(&bound)->sin_port);
    l.sock_ = std::move(s);
    return l;
  }
  throw NetError("bind " + ep.str() + ": " + last_error);
}

Socket Listener::accept() {
  while (sock_.valid()) {
    const int fd = ::accept4(sock_.fd(), nullptr, nullptr, SOCK_CLOEXEC);
    if (fd >= 0) {
      Socket s(fd);
      s.tune();
      return s;
    }
    if (errno == EINTR) continue;
    return Socket();  // listener shut down
  }
  return Socket();
}

void Listener::shutdown() noexcept {
  if (sock_.valid()) ::shutdown(sock_.fd(), SHUT_RDWR);
}

Stream Stream::plain(Socket s) {
  Stream st;
  st.sock_ = std::move(s);
  return st;
}

namespace {

std::string peer_common_name(SSL* ssl) {
  X509* cert = SSL_get1_peer_certificate(ssl);
  if (!cert) return {};
  char cn[256] = {0};
  X509_NAME_get_text_by_NID(X509_get_subject_name(cert), NID_commonName, cn, sizeof cn - 1);
  X509_free(cert);
  return cn;
}

SSL* tls_handshake(int fd, SSL_CTX* ctx, bool server) {
  SSL* ssl = SSL_new(ctx);
  if (!ssl) throw NetError(ssl_error_text("SSL_new"));
  SSL_set_fd(ssl, fd);
  const int rc = server ? SSL_accept(ssl) : SSL_connect(ssl);
  if (rc != 1) {
    const std::string msg = ssl_error_text(server ? "TLS accept" : "TLS connect");
    SSL_free(ssl);
    throw NetError(msg);
  }
  return ssl;
}

}  // namespace

Stream Stream::tls_server(Socket s, SSL_CTX* ctx) {
  Stream st;
  SSL* ssl = tls_handshake(s.fd(), ctx, true);
  st.sock_ = std::move(s);
  st.ssl_ = ssl;
  st.peer_name_ = peer_common_name(ssl);
  return st;
}

Stream Stream::tls_client(Socket s, SSL_CTX* ctx) {
  Stream st;
  SSL* ssl = tls_handshake(s.fd(), ctx, false);
  st.sock_ = std::move(s);
  st.ssl_ = ssl;
  st.peer_name_ = peer_common_name(ssl);
  return st;
}

Stream::Stream(Stream&& o) noexcept
    : sock_(std::move(o.sock_)), ssl_(o.ssl_), peer_name_(std::move(o.peer_name_)) {
  o.ssl_ = nullptr;
}

Stream& Stream::operator=(Stream&& o) noexcept {
  if (this != &o) {
    close();
    sock_ = std::move(o.sock_);
    ssl_ = o.ssl_;
    peer_name_ = std::move(o.peer_name_);
    o.ssl_ = nullptr;
  }
  return *this;
}

Stream::~Stream() { close(); }

void Stream::close() noexcept {
  if (ssl_) {
    SSL_free(ssl_);
    ssl_ = nullptr;
  }
  sock_.close();
}

std::size_t Stream::read_some(std::span<std::uint8_t> buf) {
  if (ssl_) {
    const int n = SSL_read(ssl_, buf.data(), static_cast<int>(buf.size()));
    if (n > 0) return static_cast<std::size_t>(n);
    const int err = SSL_get_error(ssl_, n);
    if (err == SSL_ERROR_ZERO_RETURN) return 0;
    if (err == SSL_ERROR_SYSCALL && errno == 0) return 0;  // peer dropped without close_notify
    throw NetError(ssl_error_text("TLS read"));
  }
  while (true) {
    const ssize_t n = ::recv(sock_.fd(), buf.data(), buf.size(), 0);
    if (n >= 0) return static_cast<std::size_t>(n);
    if (errno == EINTR) continue;
    if (errno == ECONNRESET) return 0;
    throw_errno("recv");
  }
}

void Stream::write_all(std::span<const std::uint8_t> data) {
  if (ssl_) {
    std::size_t off = 0;
    while (off < data.size()) {
      const int n = SSL_write(ssl_, data.data() + off,
                              static_cast<int>(std::min<std::size_t>(data.size() - off, 1 << 24)));
      if (n <= 0) throw NetError(ssl_error_text("TLS write"));
      off += static_cast<std::size_t>(n);
    }
    return;
  }
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::send(sock_.fd(), data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("send");
    }
    off += static_cast<std::size_t>(n);
  }
}

void Stream::write_all(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  iovec iov[2] = {{const_cast<std::uint8_t*>(a.data()), a.size()},
                  {const_cast<std::uint8_t*>(b.data()), b.size()}};
  write_gather(iov, 2);
}

void Stream::write_gather(iovec* iov, std::size_t count) {
  if (ssl_) {
    for (std::size_t i = 0; i < count; ++i) {
      write_all(std::span(static_cast<const std::uint8_t*>(iov[i].iov_base), iov[i].iov_len));
    }
    return;
  }
  msghdr msg{};
  msg.msg_iov = iov;
  msg.msg_iovlen = count;
  auto strip_empty = [&msg] {
    while (msg.msg_iovlen > 0 && msg.msg_iov[0].iov_len == 0) {
      ++msg.msg_iov;
      msg.msg_iovlen--;
    }
  };
  strip_empty();
  while (msg.msg_iovlen > 0) {
    const ssize_t n = ::sendmsg(sock_.fd(), &msg, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("sendmsg");
    }
    std::size_t adv = static_cast<std::size_t>(n);
    while (adv > 0) {
      if (adv >= msg.msg_iov[0].iov_len) {
        adv -= msg.msg_iov[0].iov_len;
        ++msg.msg_iov;
        msg.msg_iovlen--;
      } else {
        msg.msg_iov[0].iov_base = static_cast<std::uint8_t*>(msg.msg_iov[0].iov_base) + adv;
        msg.msg_iov[0].iov_len -= adv;
        adv = 0;
      }
    }
    strip_empty();
  }
}

void Stream::shutdown_write() noexcept {
  if (ssl_) SSL_shutdown(ssl_);
  if (sock_.valid()) ::shutdown(sock_.fd(), SHUT_WR);
}

void Stream::shutdown_both() noexcept {
  if (sock_.valid()) ::shutdown(sock_.fd(), SHUT_RDWR);
}

}  // namespace streamkit::net
