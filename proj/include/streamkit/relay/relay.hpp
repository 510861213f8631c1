#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "streamkit/relay/ring.hpp"

namespace streamkit::identity {
class TlsContext;
}

namespace streamkit::relay {

struct RelayConfig {
  std::string ingest_endpoint;  // producers connect here
  std::string egress_endpoint;  // consumers connect here
  std::optional<std::string> admin_endpoint;  // stats as JSON over HTTP

  std::size_t capacity_frames = 1024;
  std::size_t capacity_bytes = 4ull << 30;
  OverflowPolicy policy = OverflowPolicy::block;

  // Egress endpoint of another relay to bridge from (cache stacking).
  std::optional<std::string> upstream;

  std::uint64_t max_frame_size = 1ull << 30;

  // Per-consumer outbound window; a consumer whose window is full is
  // skipped by the dispatcher instead of stalling the ring.
  std::size_t window_frames = 4;
  std::size_t window_bytes = 64ull << 20;

  // Mutual TLS on ingest/egress when set; client context is used for
  // dialing upstream.
  std::shared_ptr<identity::TlsContext> tls_server;
  std::shared_ptr<identity::TlsContext> tls_client;
};

// Parses the relay serve YAML/JSON config file (endpoints, capacity, policy,
// upstream, tls paths). Throws Error with all problems listed.
RelayConfig load_relay_config(const std::string& text);

struct RelayStats {
  std::uint64_t frames_in = 0;
  std::uint64_t frames_out = 0;
  std::uint64_t bytes_in = 0;
  std::uint64_t bytes_out = 0;
  std::uint64_t dropped_count = 0;
  // Frames taken off the ring but never delivered: consumer crashed with
  // frames in its outbound window, or teardown with no consumer left.
  std::uint64_t delivery_failures = 0;
  std::uint64_t connected_producers = 0;
  std::uint64_t connected_consumers = 0;
  std::uint64_t queue_depth = 0;
  std::uint64_t queue_bytes = 0;
  std::uint64_t window_depth = 0;  // dispatched, not yet on the wire
};

void to_json(nlohmann::json& j, const RelayStats& s);
void from_json(const nlohmann::json& j, RelayStats& s);

class Relay {
 public:
  // Binds both endpoints and starts serving. Throws NetError on bind
  // failure or TLS misconfiguration.
  static std::unique_ptr<Relay> start(RelayConfig config);

  ~Relay();
  Relay(const Relay&) = delete;
  Relay& operator=(const Relay&) = delete;

  RelayStats stats() const;
  bool quiescent() const;  // nothing queued, nothing in flight

  std::uint16_t ingest_port() const;
  std::uint16_t egress_port() const;
  std::uint16_t admin_port() const;

  // Graceful shutdown: stops intake, waits up to drain for queued frames to
  // reach consumers, then tears all connections down. Idempotent.
  void stop(std::chrono::milliseconds drain = std::chrono::milliseconds(5000));

 private:
  Relay();
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace streamkit::relay
