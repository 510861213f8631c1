#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "streamkit/error.hpp"
#include "streamkit/wire/config.hpp"
#include "streamkit/wire/container.hpp"

namespace streamkit::pipeline {

class PipelineError : public Error {
 public:
  using Error::Error;
};

// Per-event extraction failure: the event is skipped and counted, the run
// continues (up to the skip-rate abort threshold).
class SourceError : public Error {
 public:
  using Error::Error;
};

struct Event {
  std::uint64_t sequence_number = 0;
  std::uint64_t noise_seed = 0;  // per-event seed for synthetic generators
  std::map<std::string, wire::Array> raw;  // entries carried by the source
};

// name -> per-event array (scalar arrays have an empty shape)
using EventRecord = std::map<std::string, wire::Array>;
// name -> stacked array, leading dim = events in the batch
using Batch = std::map<std::string, wire::Array>;

class EventSource {
 public:
  virtual ~EventSource() = default;
  virtual std::optional<Event> next() = 0;  // nullopt = end of source
};

// Deterministic pseudo-random event stream: same (seed, worker) -> same
// events, byte for byte. Rate-limited by a token bucket when configured.
class SyntheticEventSource final : public EventSource {
 public:
  SyntheticEventSource(const wire::SyntheticEventSourceParams& params,
                       std::uint32_t worker_index = 0, std::uint32_t worker_count = 1);
  std::optional<Event> next() override;

  static std::uint64_t worker_seed(std::uint64_t seed, std::uint32_t worker_index);

 private:
  wire::SyntheticEventSourceParams params_;
  std::uint64_t seed_ = 0;
  std::uint64_t next_seq_ = 0;
  double tokens_ = 0;
  std::chrono::steady_clock::time_point last_refill_;
};

// Replays events recorded as LSC1 containers (one file or a directory of
// files, lexicographic order). Row i of every field becomes event i's raw
// entry, keyed by container path. Workers take a strided share.
class FileReplayEventSource final : public EventSource {
 public:
  explicit FileReplayEventSource(const wire::FileReplayEventSourceParams& params,
                                 std::uint32_t worker_index = 0, std::uint32_t worker_count = 1);
  std::optional<Event> next() override;

 private:
  bool load_next_file();
  std::vector<std::filesystem::path> files_;
  std::size_t file_index_ = 0;
  wire::ArrayMap current_;
  std::uint64_t rows_in_current_ = 0;
  std::uint64_t row_ = 0;
  std::uint64_t global_index_ = 0;
  std::uint32_t worker_index_ = 0, worker_count_ = 1;
};

std::unique_ptr<EventSource> make_event_source(const wire::PipelineConfig& config,
                                               std::uint32_t worker_index,
                                               std::uint32_t worker_count);

// ---------------------------------------------------------------------------
// Data sources (per-event extractors)
// ---------------------------------------------------------------------------

class DataSource {
 public:
  virtual ~DataSource() = default;
  virtual wire::Array extract(const Event& event) = 0;  // throws SourceError
  const std::string& name() const { return name_; }

 protected:
  explicit DataSource(std::string name) : name_(std::move(name)) {}

 private:
  std::string name_;
};

std::unique_ptr<DataSource> make_data_source(const wire::DataSourceSpec& spec);

// Affine detector correction: value = gain * raw + offset, applied in the
// array's own dtype (integers rounded).
void calibrate(wire::Array& array, double gain, double offset);

// Runs every extractor; the record carries exactly one entry per source.
// Anything else in the event is discarded.
EventRecord extract_event(const Event& event,
                          const std::vector<std::unique_ptr<DataSource>>& sources);

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

class Batcher {
 public:
  explicit Batcher(std::uint64_t batch_size) : batch_size_(batch_size) {}

  void add(EventRecord record);  // throws PipelineError on shape drift
  bool full() const { return count_ >= batch_size_; }
  std::uint64_t size() const { return count_; }
  Batch take();  // stacks accumulated records and resets

 private:
  std::uint64_t batch_size_;
  std::uint64_t count_ = 0;
  std::map<std::string, wire::Array> stacked_;  // grown in place
};

// ---------------------------------------------------------------------------
// Handlers
// ---------------------------------------------------------------------------

using Blob = std::shared_ptr<const std::vector<std::uint8_t>>;

class BlobHandler {
 public:
  virtual ~BlobHandler() = default;
  virtual void handle(const Blob& blob) = 0;  // throws PipelineError on hard failure
  virtual void finalize() = 0;                // flush; throws pending hard failure
  virtual const char* kind() const = 0;
};

class FileWritingHandler final : public BlobHandler {
 public:
  explicit FileWritingHandler(const wire::BinaryFileWritingParams& params);
  void handle(const Blob& blob) override;
  void finalize() override {}
  const char* kind() const override { return "file"; }

  std::filesystem::path last_written() const { return last_written_; }
  static std::string substitute(const std::string& pattern, const std::string& run_id,
                                std::uint64_t seq);

 private:
  wire::BinaryFileWritingParams params_;
  std::uint64_t seq_ = 0;
  std::filesystem::path last_written_;
};

class StreamingHandler final : public BlobHandler {
 public:
  explicit StreamingHandler(const wire::BinaryDataStreamingParams& params);
  ~StreamingHandler() override;
  void handle(const Blob& blob) override;
  void finalize() override;
  const char* kind() const override { return "stream"; }

  std::uint64_t dropped() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::unique_ptr<BlobHandler> make_handler(const wire::DataHandlerSpec& spec);

// ---------------------------------------------------------------------------
// The run loop
// ---------------------------------------------------------------------------

struct RunSummary {
  std::uint64_t events_read = 0;
  std::uint64_t events_skipped = 0;
  std::uint64_t batches = 0;
  std::uint64_t blobs_handled = 0;  // deliveries: batches x handlers
  double duration_seconds = 0;
  bool aborted = false;
  std::string abort_reason;
};

struct BlobTrace {
  std::uint64_t batch_index = 0;
  std::int64_t first_event_wall_ns = 0;  // wall clock when the batch started
  std::int64_t emit_wall_ns = 0;         // wall clock when the blob was handed off
  const std::vector<std::uint8_t>* blob = nullptr;
};

struct PipelineOptions {
  std::uint32_t worker_index = 0;
  std::uint32_t worker_count = 1;
  double skip_abort_fraction = 0.10;  // abort when skips exceed this share
  std::uint64_t skip_abort_min_events = 50;
  std::function<void(const BlobTrace&)> blob_observer;  // bench/trace hook
};

class Pipeline {
 public:
  // Instantiates every component; failures (missing replay file, unwritable
  // directory) surface here, before any event is read.
  static Pipeline load(const wire::PipelineConfig& config, PipelineOptions options = {});

  RunSummary run();

  Pipeline(Pipeline&&) = default;
  Pipeline& operator=(Pipeline&&) = default;

 private:
  Pipeline() = default;
  wire::PipelineConfig config_;
  PipelineOptions options_;
  std::unique_ptr<EventSource> source_;
  std::vector<std::unique_ptr<DataSource>> sources_;
  std::vector<std::unique_ptr<BlobHandler>> handlers_;
};

}  // namespace streamkit::pipeline
