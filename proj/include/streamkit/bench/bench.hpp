#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "streamkit/error.hpp"

namespace streamkit::bench {

class BenchError : public Error {
 public:
  using Error::Error;
};

struct Scenario {
  int producers = 4;
  int consumers = 4;
  int relays = 1;
  std::size_t message_size = 1 << 20;
  std::uint64_t message_count = 4096;  // total across producers
  std::string policy = "block";
  double duration_limit_s = 120.0;
  std::size_t relay_capacity_frames = 128;
  std::size_t consumer_window_frames = 8;
  int consumer_delay_ms = 0;  // attach consumers late (forces overflow handling)

  // Tool locations; empty means "next to this executable".
  std::string relay_bin;
  std::string self_bin;
};

struct Report {
  double aggregate_bytes_per_s = 0;  // payload bytes over the transfer window
  double wall_seconds = 0;           // first send to last receipt
  std::uint64_t frames_sent = 0;
  std::uint64_t bytes_sent = 0;
  std::vector<std::uint64_t> per_consumer_frames;
  std::uint64_t duplicates = 0;
  std::uint64_t losses = 0;
  std::uint64_t relay_dropped = 0;  // drop-oldest evictions reported by relays
  bool per_producer_order_ok = true;
  double p50_latency_s = 0;
  double p99_latency_s = 0;

  nlohmann::json to_json() const;
};

// Spawns relay(s), tagged producers and recording consumers as separate
// processes, waits for quiescence, tears everything down and accounts for
// every frame.
Report run_throughput(const Scenario& s);

struct TmoScenario {
  int workers = 16;
  int consumers = 4;
  std::uint64_t events_per_worker = 1000;
  std::uint64_t batch_size = 100;
  double duration_limit_s = 300.0;
  std::string relay_bin;
  std::string streamer_bin;
  std::string self_bin;
};

struct TmoReport {
  std::uint64_t blobs_expected = 0;
  std::uint64_t blobs_received = 0;
  std::uint64_t duplicates = 0;
  std::uint64_t missing = 0;
  std::uint64_t decode_failures = 0;
  double p50_latency_s = 0;  // first event of batch -> blob decoded at consumer
  double p99_latency_s = 0;
  double wall_seconds = 0;

  nlohmann::json to_json() const;
};

// The scaled deployment replica: N pipeline workers with synthetic sources
// stream batches through one relay to consumer processes that write the
// blobs out as .lsc1 files; every produced batch must land exactly once.
TmoReport run_scaled_tmo(const TmoScenario& s);

// ---- worker entry points (the CLI dispatches to these) ----

int produce_main(const std::string& endpoint, std::uint32_t producer_id, std::uint64_t count,
                 std::size_t size);

// mode "tagged": 28-byte receipt records (producer, seq, send_ns, recv_ns).
// mode "blob": saves each frame as <save_dir>/blob_<n>.lsc1 and records
// (recv_ns, sha256) pairs.
int consume_main(const std::string& endpoint, const std::string& receipts_path,
                 const std::string& mode, const std::string& save_dir);

// Directory of the running executable, for locating sibling tools.
std::string sibling_path(const std::string& name);

}  // namespace streamkit::bench
