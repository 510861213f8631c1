#include <chrono>

#include "streamkit/pipeline/pipeline.hpp"

namespace streamkit::pipeline {

namespace {

std::int64_t wall_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

Pipeline Pipeline::load(const wire::PipelineConfig& config, PipelineOptions options) {
  if (options.worker_count < 1 || options.worker_index >= options.worker_count) {
    throw PipelineError("worker_index must be < worker_count");
  }
  Pipeline p;
  p.config_ = config;
  p.options_ = std::move(options);
  p.source_ = make_event_source(config, p.options_.worker_index, p.options_.worker_count);
  for (const auto& spec : config.data_sources) {
    p.sources_.push_back(make_data_source(spec));
  }
  for (const auto& spec : config.handlers) {
    p.handlers_.push_back(make_handler(spec));
  }
  if (p.handlers_.empty()) {
    throw PipelineError("a pipeline needs at least one data handler");
  }
  return p;
}

RunSummary Pipeline::run() {
  RunSummary summary;
  const auto t0 = std::chrono::steady_clock::now();
  Batcher batcher(config_.batch.batch_size);
  std::uint64_t batch_index = 0;
  std::int64_t batch_started_ns = 0;

  auto emit = [&]() {
    Batch batch = batcher.take();
    // Keep only the serializer's mapped fields, renamed to container paths.
    wire::ArrayMap named;
    for (const auto& [name, path] : config_.serializer.fields) {
      auto it = batch.find(name);
      if (it != batch.end()) named[path] = std::move(it->second);
    }
    auto blob = std::make_shared<const std::vector<std::uint8_t>>(wire::encode_container(
        named, config_.serializer.compression, config_.serializer.compression_level));
    if (options_.blob_observer) {
      BlobTrace trace;
      trace.batch_index = batch_index;
      trace.first_event_wall_ns = batch_started_ns;
      trace.emit_wall_ns = wall_ns();
      trace.blob = blob.get();
      options_.blob_observer(trace);
    }
    for (auto& handler : handlers_) {
      handler->handle(blob);
      ++summary.blobs_handled;
    }
    ++summary.batches;
    ++batch_index;
  };

  try {
    while (auto event = source_->next()) {
      if (batcher.size() == 0) batch_started_ns = wall_ns();
      ++summary.events_read;
      try {
        batcher.add(extract_event(*event, sources_));
      } catch (const SourceError&) {
        ++summary.events_skipped;
        if (summary.events_read >= options_.skip_abort_min_events &&
            static_cast<double>(summary.events_skipped) >
                options_.skip_abort_fraction * static_cast<double>(summary.events_read)) {
          throw PipelineError("skip rate exceeded " +
                              std::to_string(options_.skip_abort_fraction) + " after " +
                              std::to_string(summary.events_read) + " events");
        }
        continue;
      }
      if (batcher.full()) emit();
    }
    if (batcher.size() > 0) emit();  // final partial batch is flushed, never dropped
    for (auto& handler : handlers_) handler->finalize();
  } catch (const Error& e) {
    summary.aborted = true;
    summary.abort_reason = e.what();
  }

  summary.duration_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return summary;
}

}  // namespace streamkit::pipeline
