#include "streamkit/bench/bench.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include "streamkit/bench/child.hpp"
#include "streamkit/http.hpp"
#include "streamkit/identity/hmac.hpp"
#include "streamkit/net/net.hpp"
#include "streamkit/pipeline/pipeline.hpp"
#include "streamkit/relay/relay.hpp"
#include "streamkit/wire/config.hpp"
#include "streamkit/wire/frame.hpp"

namespace streamkit::bench {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::int64_t wall_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

fs::path make_temp_dir(const std::string& tag) {
  auto dir =
      fs::temp_directory_path() / ("sk_bench_" + tag + "_" + std::to_string(::getpid()) + "_" +
                                   std::to_string(wall_ns() % 100000));
  fs::create_directories(dir);
  return dir;
}

struct TaggedReceipt {
  std::uint32_t producer;
  std::uint64_t seq;
  std::uint64_t send_ns;
  std::uint64_t recv_ns;
};

double percentile(std::vector<double>& values, double p) {
  if (values.empty()) return 0;
  std::sort(values.begin(), values.end());
  const std::size_t i =
      std::min(values.size() - 1, static_cast<std::size_t>(p * static_cast<double>(values.size())));
  return values[i];
}

relay::RelayStats fetch_stats(int admin_port) {
  httplib::Client cli("127.0.0.1", admin_port);
  cli.set_connection_timeout(2, 0);
  auto res = cli.Get("/stats");
  if (!res || res->status != 200) throw BenchError("relay admin /stats unreachable");
  return json::parse(res->body).get<relay::RelayStats>();
}

struct RelayProc {
  Child child;
  std::string ingest, egress;
  int admin_port = 0;
};

RelayProc spawn_relay(const std::string& relay_bin, const fs::path& dir, int index,
                      const Scenario& s) {
  const fs::path cfg_path = dir / ("relay_" + std::to_string(index) + ".yaml");
  {
    std::ofstream out(cfg_path);
    out << "ingest: 127.0.0.1:0\n";
    out << "egress: 127.0.0.1:0\n";
    out << "admin: 127.0.0.1:0\n";
    out << "policy: " << s.policy << "\n";
    out << "capacity_frames: " << s.relay_capacity_frames << "\n";
    out << "capacity_bytes: " << std::max<std::size_t>(s.relay_capacity_frames * s.message_size,
                                                       64ull << 20)
        << "\n";
    out << "max_frame_size: " << std::max<std::size_t>(s.message_size + 64, 1 << 20) << "\n";
    out << "window_frames: " << s.consumer_window_frames << "\n";
  }
  RelayProc rp;
  rp.child = Child::spawn({relay_bin, "serve", "--config", cfg_path.string()});
  const json endpoints = json::parse(rp.child.read_line());
  rp.ingest = endpoints.at("ingest").get<std::string>();
  rp.egress = endpoints.at("egress").get<std::string>();
  const std::string admin = endpoints.at("admin").get<std::string>();
  rp.admin_port = std::stoi(admin.substr(admin.rfind(':') + 1));
  return rp;
}

}  // namespace

std::string sibling_path(const std::string& name) {
  char buf[4096];
  const ssize_t n = ::readlink("/proc/self/exe", buf, sizeof buf - 1);
  if (n <= 0) return name;
  buf[n] = 0;
  return (fs::path(buf).parent_path() / name).string();
}

json Report::to_json() const {
  return {{"aggregate_bytes_per_s", aggregate_bytes_per_s},
          {"wall_seconds", wall_seconds},
          {"frames_sent", frames_sent},
          {"bytes_sent", bytes_sent},
          {"per_consumer_frames", per_consumer_frames},
          {"duplicates", duplicates},
          {"losses", losses},
          {"relay_dropped", relay_dropped},
          {"per_producer_order_ok", per_producer_order_ok},
          {"p50_latency_s", p50_latency_s},
          {"p99_latency_s", p99_latency_s}};
}

json TmoReport::to_json() const {
  return {{"blobs_expected", blobs_expected},
          {"blobs_received", blobs_received},
          {"duplicates", duplicates},
          {"missing", missing},
          {"decode_failures", decode_failures},
          {"p50_latency_s", p50_latency_s},
          {"p99_latency_s", p99_latency_s},
          {"wall_seconds", wall_seconds}};
}

// ---------------------------------------------------------------------------
// Worker entry points
// ---------------------------------------------------------------------------

int produce_main(const std::string& endpoint, std::uint32_t producer_id, std::uint64_t count,
                 std::size_t size) {
  const std::size_t payload_size = std::max<std::size_t>(size, 20);
  auto stream = net::Stream::plain(net::dial(net::Endpoint::parse(endpoint)));

  std::vector<std::uint8_t> frame(wire::kFrameHeaderSize + payload_size);
  const auto header = wire::encode_frame_header(payload_size);
  std::memcpy(frame.data(), header.data(), header.size());
  std::uint8_t* payload = frame.data() + wire::kFrameHeaderSize;
  std::memcpy(payload, &producer_id, 4);
  for (std::size_t i = 20; i < payload_size; ++i) {
    payload[i] = static_cast<std::uint8_t>(i * 31 + producer_id);
  }

  const std::int64_t start_ns = wall_ns();
  for (std::uint64_t seq = 0; seq < count; ++seq) {
    std::memcpy(payload + 4, &seq, 8);
    const std::uint64_t now = static_cast<std::uint64_t>(wall_ns());
    std::memcpy(payload + 12, &now, 8);
    stream.write_all(frame);
  }
  const std::int64_t end_ns = wall_ns();
  stream.shutdown_write();
  // Hold the connection until the relay has read everything.
  std::vector<std::uint8_t> sink(64);
  while (stream.read_some(sink) != 0) {
  }

  json summary = {{"producer", producer_id},
                  {"frames", count},
                  {"bytes", count * payload_size},
                  {"start_ns", start_ns},
                  {"end_ns", end_ns}};
  std::printf("%s\n", summary.dump().c_str());
  std::fflush(stdout);
  return 0;
}

int consume_main(const std::string& endpoint, const std::string& receipts_path,
                 const std::string& mode, const std::string& save_dir) {
  const bool blob_mode = mode == "blob";
  if (blob_mode && !save_dir.empty()) fs::create_directories(save_dir);

  auto stream = net::Stream::plain(net::dial(net::Endpoint::parse(endpoint)));
  std::ofstream receipts(receipts_path, std::ios::binary | std::ios::trunc);
  if (!receipts) throw BenchError("cannot write receipts " + receipts_path);

  std::vector<std::uint8_t> buf(4 << 20);
  std::uint64_t frames = 0, bytes = 0, blob_index = 0;
  std::int64_t first_ns = 0, last_ns = 0;

  auto note_frame = [&](std::size_t payload_size) {
    const std::int64_t now = wall_ns();
    if (frames == 0) first_ns = now;
    last_ns = now;
    ++frames;
    bytes += payload_size;
    return now;
  };

  if (blob_mode) {
    wire::FrameParser parser(1ull << 31);
    while (true) {
      const std::size_t n = stream.read_some(buf);
      if (n == 0) break;
      parser.push(std::span(buf.data(), n));
      while (auto f = parser.next()) {
        const std::int64_t now = note_frame(f->size());
        const std::string hash = identity::sha256_hex(*f);
        if (!save_dir.empty()) {
          const fs::path path =
              fs::path(save_dir) / ("blob_" + std::to_string(blob_index++) + ".lsc1");
          std::ofstream out(path, std::ios::binary);
          out.write(reinterpret_cast<const char*>(f->data()),
                    static_cast<std::streamsize>(f->size()));
        }
        const std::uint64_t recv_ns = static_cast<std::uint64_t>(now);
        receipts.write(reinterpret_cast<const char*>(&recv_ns), 8);
        receipts.write(hash.data(), 64);
      }
    }
  } else {
    // Tagged mode needs only the 8-byte header plus the 20-byte tag of each
    // frame; the rest of the payload is skipped without another copy.
    constexpr std::size_t kPrefix = wire::kFrameHeaderSize + 20;
    std::uint8_t prefix[kPrefix];
    std::size_t prefix_fill = 0;
    std::uint64_t skip = 0;
    while (true) {
      const std::size_t n = stream.read_some(buf);
      if (n == 0) break;
      std::size_t pos = 0;
      while (pos < n) {
        if (skip > 0) {
          const std::size_t take = static_cast<std::size_t>(
              std::min<std::uint64_t>(skip, n - pos));
          pos += take;
          skip -= take;
          continue;
        }
        const std::size_t take = std::min(kPrefix - prefix_fill, n - pos);
        std::memcpy(prefix + prefix_fill, buf.data() + pos, take);
        prefix_fill += take;
        pos += take;
        if (prefix_fill < kPrefix) continue;
        prefix_fill = 0;

        const std::uint64_t len = wire::decode_frame_header(
            std::span<const std::uint8_t, wire::kFrameHeaderSize>(prefix, 8));
        if (len < 20) throw BenchError("tagged frame shorter than its tag");
        const std::int64_t now = note_frame(static_cast<std::size_t>(len));
        TaggedReceipt r{};
        std::memcpy(&r.producer, prefix + 8, 4);
        std::memcpy(&r.seq, prefix + 12, 8);
        std::memcpy(&r.send_ns, prefix + 20, 8);
        r.recv_ns = static_cast<std::uint64_t>(now);
        receipts.write(reinterpret_cast<const char*>(&r.producer), 4);
        receipts.write(reinterpret_cast<const char*>(&r.seq), 8);
        receipts.write(reinterpret_cast<const char*>(&r.send_ns), 8);
        receipts.write(reinterpret_cast<const char*>(&r.recv_ns), 8);
        skip = len - 20;
      }
    }
  }
  receipts.close();

  json summary = {{"frames", frames}, {"bytes", bytes}, {"first_ns", first_ns},
                  {"last_ns", last_ns}};
  std::printf("%s\n", summary.dump().c_str());
  std::fflush(stdout);
  return 0;
}

// ---------------------------------------------------------------------------
// Throughput harness
// ---------------------------------------------------------------------------

namespace {

std::vector<TaggedReceipt> load_tagged_receipts(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::vector<TaggedReceipt> out;
  while (true) {
    TaggedReceipt r{};
    in.read(reinterpret_cast<char*>(&r.producer), 4);
    in.read(reinterpret_cast<char*>(&r.seq), 8);
    in.read(reinterpret_cast<char*>(&r.send_ns), 8);
    in.read(reinterpret_cast<char*>(&r.recv_ns), 8);
    if (!in) break;
    out.push_back(r);
  }
  return out;
}

}  // namespace

Report run_throughput(const Scenario& s) {
  if (s.producers < 1 || s.consumers < 1 || s.relays < 1 || s.message_count < 1) {
    throw BenchError("producers, consumers, relays and count must all be >= 1");
  }
  const std::string relay_bin = s.relay_bin.empty() ? sibling_path("relay") : s.relay_bin;
  const std::string self_bin = s.self_bin.empty() ? sibling_path("bench") : s.self_bin;
  const fs::path dir = make_temp_dir("tp");

  const auto hard_deadline =
      std::chrono::steady_clock::now() +
      std::chrono::milliseconds(static_cast<std::int64_t>(s.duration_limit_s * 1000));

  std::vector<RelayProc> relays;
  std::vector<Child> consumers;
  std::vector<Child> producers;
  Report report;

  try {
    for (int r = 0; r < s.relays; ++r) relays.push_back(spawn_relay(relay_bin, dir, r, s));

    std::vector<fs::path> receipt_files;
    auto spawn_consumers = [&] {
      for (int c = 0; c < s.consumers; ++c) {
        const fs::path receipts = dir / ("receipts_" + std::to_string(c) + ".bin");
        receipt_files.push_back(receipts);
        consumers.push_back(Child::spawn({self_bin, "consume", "--endpoint",
                                          relays[c % s.relays].egress, "--receipts",
                                          receipts.string()}));
      }
    };
    if (s.consumer_delay_ms == 0) {
      spawn_consumers();
      // Give consumers a beat to connect so dispatch starts immediately.
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }

    const std::uint64_t base = s.message_count / s.producers;
    std::uint64_t remainder = s.message_count % s.producers;
    for (int p = 0; p < s.producers; ++p) {
      const std::uint64_t share = base + (remainder > 0 ? 1 : 0);
      if (remainder > 0) --remainder;
      producers.push_back(Child::spawn({self_bin, "produce", "--endpoint",
                                        relays[p % s.relays].ingest, "--id", std::to_string(p),
                                        "--count", std::to_string(share), "--size",
                                        std::to_string(s.message_size)}));
    }

    if (s.consumer_delay_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(s.consumer_delay_ms));
      spawn_consumers();
    }

    std::int64_t min_start_ns = 0;
    for (auto& p : producers) {
      const json summary = json::parse(p.read_line());
      const int rc = p.wait();
      if (rc != 0) throw BenchError("producer exited with " + std::to_string(rc));
      report.frames_sent += summary.at("frames").get<std::uint64_t>();
      report.bytes_sent += summary.at("bytes").get<std::uint64_t>();
      const std::int64_t start = summary.at("start_ns").get<std::int64_t>();
      if (min_start_ns == 0 || start < min_start_ns) min_start_ns = start;
    }

    // Producers are done; wait for each relay to finish delivering.
    for (auto& rp : relays) {
      while (true) {
        if (std::chrono::steady_clock::now() > hard_deadline) {
          throw BenchError("scenario exceeded its duration limit during drain");
        }
        const auto stats = fetch_stats(rp.admin_port);
        if (stats.queue_depth == 0 && stats.window_depth == 0 &&
            stats.connected_producers == 0) {
          report.relay_dropped += stats.dropped_count;
          break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
      rp.child.signal(SIGTERM);
    }
    for (auto& rp : relays) rp.child.wait();

    std::int64_t max_last_ns = 0;
    for (auto& c : consumers) {
      const json summary = json::parse(c.read_line());
      const int rc = c.wait();
      if (rc != 0) throw BenchError("consumer exited with " + std::to_string(rc));
      report.per_consumer_frames.push_back(summary.at("frames").get<std::uint64_t>());
      max_last_ns = std::max(max_last_ns, summary.at("last_ns").get<std::int64_t>());
    }

    // Accounting across all receipts.
    std::map<std::pair<std::uint32_t, std::uint64_t>, int> receipt_count;
    std::vector<double> latencies;
    std::uint64_t received_bytes = 0;
    for (const auto& path : receipt_files) {
      std::map<std::uint32_t, std::uint64_t> last_seq;
      for (const TaggedReceipt& r : load_tagged_receipts(path)) {
        receipt_count[{r.producer, r.seq}]++;
        latencies.push_back(static_cast<double>(r.recv_ns - r.send_ns) / 1e9);
        received_bytes += s.message_size;
        auto it = last_seq.find(r.producer);
        if (it != last_seq.end() && r.seq <= it->second) report.per_producer_order_ok = false;
        last_seq[r.producer] = r.seq;
      }
    }
    for (const auto& [tag, count] : receipt_count) {
      if (count > 1) report.duplicates += static_cast<std::uint64_t>(count - 1);
    }
    report.losses = report.frames_sent - receipt_count.size();
    report.p50_latency_s = percentile(latencies, 0.50);
    report.p99_latency_s = percentile(latencies, 0.99);
    report.wall_seconds = static_cast<double>(max_last_ns - min_start_ns) / 1e9;
    if (report.wall_seconds > 0) {
      report.aggregate_bytes_per_s = static_cast<double>(received_bytes) / report.wall_seconds;
    }
  } catch (...) {
    for (auto& rp : relays) rp.child.signal(SIGKILL);
    fs::remove_all(dir);
    throw;
  }

  fs::remove_all(dir);
  return report;
}

// ---------------------------------------------------------------------------
// Scaled deployment replica
// ---------------------------------------------------------------------------

namespace {

json tmo_pipeline_config(const std::string& ingest, std::uint64_t events, std::uint64_t batch) {
  json cfg;
  cfg["lclstreamer"] = {{"event_source", "SyntheticEventSource"},
                        {"processing_pipeline", "BatchProcessingPipeline"},
                        {"data_serializer", "Lsc1Serializer"},
                        {"data_handlers", json::array({"BinaryDataStreamingDataHandler"})}};
  cfg["event_source"]["SyntheticEventSource"] = {{"seed", 7}, {"max_events", events}};
  cfg["processing_pipeline"]["BatchProcessingPipeline"] = {{"batch_size", batch}};
  cfg["data_serializer"]["Lsc1Serializer"] = {
      {"compression", "deflate"},
      {"compression_level", 1},
      {"fields", {{"timestamp", "/data/timestamp"}, {"detector_data", "/data/data"}}}};
  cfg["data_handlers"]["BinaryDataStreamingDataHandler"] = {{"endpoint", ingest}};
  cfg["data_sources"]["timestamp"] = {{"type", "SyntheticTimestamp"}};
  cfg["data_sources"]["detector_data"] = {{"type", "SyntheticAreaDetector"},
                                          {"shape", json::array({32, 32})},
                                          {"dtype", "f32"},
                                          {"calibration", true},
                                          {"gain", 2.0},
                                          {"offset", 1.0}};
  return cfg;
}

}  // namespace

TmoReport run_scaled_tmo(const TmoScenario& s) {
  const std::string relay_bin = s.relay_bin.empty() ? sibling_path("relay") : s.relay_bin;
  const std::string streamer_bin =
      s.streamer_bin.empty() ? sibling_path("streamer") : s.streamer_bin;
  const std::string self_bin = s.self_bin.empty() ? sibling_path("bench") : s.self_bin;
  const fs::path dir = make_temp_dir("tmo");

  TmoReport report;
  const auto t0 = std::chrono::steady_clock::now();
  const auto hard_deadline =
      t0 + std::chrono::milliseconds(static_cast<std::int64_t>(s.duration_limit_s * 1000));

  Scenario relay_scenario;
  relay_scenario.policy = "block";
  relay_scenario.relay_capacity_frames = 512;
  relay_scenario.message_size = 8 << 20;
  relay_scenario.consumer_window_frames = 8;

  std::vector<Child> consumers;
  std::vector<Child> workers;
  RelayProc relay;

  try {
    relay = spawn_relay(relay_bin, dir, 0, relay_scenario);

    std::vector<fs::path> receipt_files, save_dirs;
    for (int c = 0; c < s.consumers; ++c) {
      const fs::path receipts = dir / ("receipts_" + std::to_string(c) + ".bin");
      const fs::path save = dir / ("blobs_" + std::to_string(c));
      receipt_files.push_back(receipts);
      save_dirs.push_back(save);
      consumers.push_back(Child::spawn({self_bin, "consume", "--endpoint", relay.egress,
                                        "--receipts", receipts.string(), "--mode", "blob",
                                        "--save-dir", save.string()}));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(100));

    const json config = tmo_pipeline_config(relay.ingest, s.events_per_worker, s.batch_size);
    const fs::path config_path = dir / "pipeline.json";
    {
      std::ofstream out(config_path);
      out << config.dump(2) << "\n";
    }

    for (int w = 0; w < s.workers; ++w) {
      workers.push_back(Child::spawn({streamer_bin, "run", "-c", config_path.string(),
                                      "--worker-index", std::to_string(w), "--worker-count",
                                      std::to_string(s.workers), "--trace",
                                      (dir / ("trace_" + std::to_string(w) + ".jsonl")).string()}));
    }
    for (auto& w : workers) {
      const int rc = w.wait();
      if (rc != 0) throw BenchError("worker exited with " + std::to_string(rc));
    }

    while (true) {
      if (std::chrono::steady_clock::now() > hard_deadline) {
        throw BenchError("scenario exceeded its duration limit during drain");
      }
      const auto stats = fetch_stats(relay.admin_port);
      if (stats.queue_depth == 0 && stats.window_depth == 0 && stats.connected_producers == 0) {
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    relay.child.signal(SIGTERM);
    relay.child.wait();
    for (auto& c : consumers) {
      c.read_line();
      const int rc = c.wait();
      if (rc != 0) throw BenchError("consumer exited with " + std::to_string(rc));
    }

    // Expected blobs: the deterministic in-process replay of every worker.
    std::map<std::string, std::int64_t> expected;  // hash -> first event wall ns (filled below)
    auto parsed = wire::validate_config_json(config);
    if (!parsed.ok()) throw BenchError("internal config invalid:\n" + parsed.error_summary());
    for (int w = 0; w < s.workers; ++w) {
      wire::PipelineConfig cfg = *parsed.config;
      // Swap the streaming handler for a file sink the oracle can ignore.
      cfg.data_handlers = {"BinaryFileWritingDataHandler"};
      cfg.handlers.clear();
      wire::BinaryFileWritingParams sink;
      sink.directory = (dir / "oracle_out").string();
      sink.filename_pattern = "w" + std::to_string(w) + "_{seq:05}.lsc1";
      cfg.handlers.push_back({"BinaryFileWritingDataHandler", sink});

      pipeline::PipelineOptions options;
      options.worker_index = static_cast<std::uint32_t>(w);
      options.worker_count = static_cast<std::uint32_t>(s.workers);
      options.blob_observer = [&](const pipeline::BlobTrace& trace) {
        expected[identity::sha256_hex(*trace.blob)] = 0;
      };
      auto summary = pipeline::Pipeline::load(cfg, options).run();
      if (summary.aborted) throw BenchError("oracle pipeline aborted: " + summary.abort_reason);
    }
    report.blobs_expected = expected.size();

    // Worker traces give each blob's batch start time, keyed by hash.
    std::map<std::string, std::int64_t> batch_start_ns;
    for (int w = 0; w < s.workers; ++w) {
      std::ifstream in(dir / ("trace_" + std::to_string(w) + ".jsonl"));
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        batch_start_ns[j.at("sha256").get<std::string>()] =
            j.at("first_event_ns").get<std::int64_t>();
      }
    }

    // Receipts: hash multiset + latency from batch start to receipt.
    std::map<std::string, int> received;
    std::vector<double> latencies;
    for (std::size_t c = 0; c < receipt_files.size(); ++c) {
      std::ifstream in(receipt_files[c], std::ios::binary);
      while (true) {
        std::uint64_t recv_ns = 0;
        char hash[65] = {0};
        in.read(reinterpret_cast<char*>(&recv_ns), 8);
        in.read(hash, 64);
        if (!in) break;
        ++report.blobs_received;
        received[hash]++;
        auto it = batch_start_ns.find(hash);
        if (it != batch_start_ns.end()) {
          latencies.push_back(static_cast<double>(static_cast<std::int64_t>(recv_ns) -
                                                  it->second) /
                              1e9);
        }
      }
      // Every saved file must decode as a valid container.
      if (fs::exists(save_dirs[c])) {
        for (const auto& entry : fs::directory_iterator(save_dirs[c])) {
          std::ifstream blob_in(entry.path(), std::ios::binary);
          std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(blob_in)),
                                          std::istreambuf_iterator<char>());
          try {
            (void)wire::decode_container(bytes);
          } catch (const wire::ContainerError&) {
            ++report.decode_failures;
          }
        }
      }
    }

    for (const auto& [hash, count] : received) {
      if (count > 1) report.duplicates += static_cast<std::uint64_t>(count - 1);
      if (!expected.contains(hash)) ++report.decode_failures;  // foreign blob
    }
    for (const auto& [hash, t] : expected) {
      if (!received.contains(hash)) ++report.missing;
    }
    report.p50_latency_s = percentile(latencies, 0.50);
    report.p99_latency_s = percentile(latencies, 0.99);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  } catch (...) {
    relay.child.signal(SIGKILL);
    fs::remove_all(dir);
    throw;
  }

  fs::remove_all(dir);
  return report;
}

}  // namespace streamkit::bench
