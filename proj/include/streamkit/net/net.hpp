#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>

#include "streamkit/error.hpp"

typedef struct ssl_st SSL;
typedef struct ssl_ctx_st SSL_CTX;
struct iovec;

namespace streamkit::net {

class NetError : public Error {
 public:
  using Error::Error;
};

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;

  static Endpoint parse(std::string_view text);  // "host:port"
  std::string str() const { return host + ":" + std::to_string(port); }
};

// RAII fd. Move-only.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { close(); }
  Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Socket& operator=(Socket&& o) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }
  void close() noexcept;

  void tune();  // TCP_NODELAY + large buffers

 private:
  int fd_ = -1;
};

Socket dial(const Endpoint& ep, int timeout_ms = 10000);

class Listener {
 public:
  // Binds and listens; port 0 picks an ephemeral port. Throws NetError.
  static Listener bind(const Endpoint& ep);

  // Blocks for the next connection. Returns an invalid Socket once the
  // listener has been shut down.
  Socket accept();

  std::uint16_t port() const noexcept { return port_; }
  void shutdown() noexcept;  // unblocks accept()

  Listener() = default;
  Listener(Listener&&) = default;
  Listener& operator=(Listener&&) = default;

 private:
  Socket sock_;
  std::uint16_t port_ = 0;
};

// A connected byte stream: plain TCP or TLS over it. All methods block.
class Stream {
 public:
  static Stream plain(Socket s);
  // Both TLS entry points run the handshake and verify the peer chain
  // against the store pinned in ctx; they throw NetError on any failure.
  static Stream tls_server(Socket s, SSL_CTX* ctx);
  static Stream tls_client(Socket s, SSL_CTX* ctx);

  Stream() = default;
  Stream(Stream&& o) noexcept;
  Stream& operator=(Stream&& o) noexcept;
  ~Stream();

  // Returns bytes read; 0 on orderly end of stream.
  std::size_t read_some(std::span<std::uint8_t> buf);
  void write_all(std::span<const std::uint8_t> data);
  // Writes a followed by b (single writev for plain sockets).
  void write_all(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);
  // Gathers many buffers into as few syscalls as possible. iov entries are
  // consumed; the caller must keep the referenced memory alive.
  void write_gather(iovec* iov, std::size_t count);

  void shutdown_write() noexcept;
  void shutdown_both() noexcept;
  void close() noexcept;

  bool valid() const noexcept { return sock_.valid(); }
  int fd() const noexcept { return sock_.fd(); }

  // Subject common name of the verified TLS peer; empty for plain streams.
  const std::string& peer_name() const noexcept { return peer_name_; }

 private:
  Socket sock_;
  SSL* ssl_ = nullptr;
  std::string peer_name_;
};

}  // namespace streamkit::net
