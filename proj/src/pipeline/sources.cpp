#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include "streamkit/pipeline/pipeline.hpp"

namespace streamkit::pipeline {

namespace fs = std::filesystem;
using wire::Array;
using wire::Dtype;

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
// Synthetic run epoch: timestamps are deterministic, not wall clock, so the
// same seed always produces byte-identical streams.
constexpr std::uint64_t kEpochNs = 1700000000000000000ull;
constexpr std::uint64_t kTickNs = 1000000ull;  // 1 kHz synthetic shot rate

std::uint64_t splitmix64(std::uint64_t& state) {
  state += kGolden;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Array u64_scalar(std::uint64_t value) {
  Array a;
  a.dtype = Dtype::u64;
  a.shape = {};
  a.data.resize(8);
  std::memcpy(a.data.data(), &value, 8);
  return a;
}

std::vector<fs::path> list_lsc1_files(const fs::path& path) {
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".lsc1") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
  } else if (fs::is_regular_file(path)) {
    files.push_back(path);
  }
  if (files.empty()) {
    throw PipelineError("no .lsc1 files at " + path.string());
  }
  return files;
}

wire::ArrayMap load_container_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw PipelineError("cannot open " + file.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return wire::decode_container(bytes);
  } catch (const wire::ContainerError& e) {
    throw PipelineError("corrupt container " + file.string() + ": " + e.what());
  }
}

std::uint64_t leading_dim(const wire::ArrayMap& fields) {
  if (fields.empty()) return 0;
  return fields.begin()->second.shape.empty() ? 0 : fields.begin()->second.shape[0];
}

// One row of a stacked array: shape drops the leading dim.
Array row_slice(const Array& stacked, std::uint64_t row) {
  Array out;
  out.dtype = stacked.dtype;
  out.shape.assign(stacked.shape.begin() + 1, stacked.shape.end());
  const std::uint64_t row_bytes = out.byte_size();
  out.data.assign(stacked.data.begin() + static_cast<std::ptrdiff_t>(row * row_bytes),
                  stacked.data.begin() + static_cast<std::ptrdiff_t>((row + 1) * row_bytes));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// SyntheticEventSource
// ---------------------------------------------------------------------------

std::uint64_t SyntheticEventSource::worker_seed(std::uint64_t seed, std::uint32_t worker_index) {
  std::uint64_t state = seed ^ (kGolden * (worker_index + 1));
  return splitmix64(state);
}

SyntheticEventSource::SyntheticEventSource(const wire::SyntheticEventSourceParams& params,
                                           std::uint32_t worker_index,
                                           std::uint32_t worker_count)
    : params_(params),
      seed_(worker_seed(params.seed, worker_index)),
      last_refill_(std::chrono::steady_clock::now()) {
  (void)worker_count;  // synthetic workers are independent streams
  tokens_ = params_.rate_limit > 0 ? 1.0 : 0.0;
}

std::optional<Event> SyntheticEventSource::next() {
  if (params_.max_events != 0 && next_seq_ >= params_.max_events) return std::nullopt;

  if (params_.rate_limit > 0) {
    const double burst = std::max(1.0, params_.rate_limit / 10.0);
    while (tokens_ < 1.0) {
      const auto now = std::chrono::steady_clock::now();
      tokens_ += std::chrono::duration<double>(now - last_refill_).count() * params_.rate_limit;
      tokens_ = std::min(tokens_, burst);
      last_refill_ = now;
      if (tokens_ < 1.0) std::this_thread::sleep_for(std::chrono::microseconds(200));
    }
    tokens_ -= 1.0;
  }

  Event ev;
  ev.sequence_number = next_seq_++;
  std::uint64_t state = seed_ ^ (ev.sequence_number * kGolden);
  ev.noise_seed = splitmix64(state);
  ev.raw["timestamp"] = u64_scalar(kEpochNs + ev.sequence_number * kTickNs);
  return ev;
}

// ---------------------------------------------------------------------------
// FileReplayEventSource
// ---------------------------------------------------------------------------

FileReplayEventSource::FileReplayEventSource(const wire::FileReplayEventSourceParams& params,
                                             std::uint32_t worker_index,
                                             std::uint32_t worker_count)
    : files_(list_lsc1_files(params.path)),
      worker_index_(worker_index),
      worker_count_(std::max<std::uint32_t>(worker_count, 1)) {}

bool FileReplayEventSource::load_next_file() {
  while (file_index_ < files_.size()) {
    current_ = load_container_file(files_[file_index_++]);
    rows_in_current_ = leading_dim(current_);
    row_ = 0;
    if (rows_in_current_ > 0) return true;
  }
  return false;
}

std::optional<Event> FileReplayEventSource::next() {
  while (true) {
    if (row_ >= rows_in_current_ && !load_next_file()) return std::nullopt;
    const std::uint64_t index = global_index_++;
    const std::uint64_t r = row_++;
    if (index % worker_count_ != worker_index_) continue;  // another worker's share

    Event ev;
    ev.sequence_number = index;
    for (const auto& [path, stacked] : current_) {
      ev.raw[path] = row_slice(stacked, r);
    }
    return ev;
  }
}

std::unique_ptr<EventSource> make_event_source(const wire::PipelineConfig& config,
                                               std::uint32_t worker_index,
                                               std::uint32_t worker_count) {
  if (config.event_source == "SyntheticEventSource") {
    return std::make_unique<SyntheticEventSource>(
        std::get<wire::SyntheticEventSourceParams>(config.source_params), worker_index,
        worker_count);
  }
  if (config.event_source == "FileReplayEventSource") {
    return std::make_unique<FileReplayEventSource>(
        std::get<wire::FileReplayEventSourceParams>(config.source_params), worker_index,
        worker_count);
  }
  throw PipelineError("no event source implementation for " + config.event_source);
}

// ---------------------------------------------------------------------------
// Data sources
// ---------------------------------------------------------------------------

void calibrate(wire::Array& array, double gain, double offset) {
  const std::size_t esize = wire::dtype_size(array.dtype);
  const std::size_t n = array.data.size() / esize;
  auto apply_int = [&](auto* values) {
    using T = std::remove_pointer_t<decltype(values)>;
    for (std::size_t i = 0; i < n; ++i) {
      values[i] = static_cast<T>(std::llround(gain * static_cast<double>(values[i]) + offset));
    }
  };
  switch (array.dtype) {
    case Dtype::u8: apply_int(reinterpret_cast<std::uint8_t*>(array.data.data())); break;
    case Dtype::i8: apply_int(reinterpret_cast<std::int8_t*>(array.data.data())); break;
    case Dtype::u16: apply_int(reinterpret_cast<std::uint16_t*>(array.data.data())); break;
    case Dtype::i16: apply_int(reinterpret_cast<std::int16_t*>(array.data.data())); break;
    case Dtype::u32: apply_int(reinterpret_cast<std::uint32_t*>(array.data.data())); break;
    case Dtype::i32: apply_int(reinterpret_cast<std::int32_t*>(array.data.data())); break;
    case Dtype::u64: apply_int(reinterpret_cast<std::uint64_t*>(array.data.data())); break;
    case Dtype::i64: apply_int(reinterpret_cast<std::int64_t*>(array.data.data())); break;
    case Dtype::f32: {
      auto* v = reinterpret_cast<float*>(array.data.data());
      for (std::size_t i = 0; i < n; ++i) {
        v[i] = static_cast<float>(gain * v[i] + offset);
      }
      break;
    }
    case Dtype::f64: {
      auto* v = reinterpret_cast<double*>(array.data.data());
      for (std::size_t i = 0; i < n; ++i) v[i] = gain * v[i] + offset;
      break;
    }
  }
}

namespace {

class SyntheticTimestampSource final : public DataSource {
 public:
  explicit SyntheticTimestampSource(std::string name) : DataSource(std::move(name)) {}
  Array extract(const Event& event) override {
    auto it = event.raw.find("timestamp");
    if (it == event.raw.end()) {
      throw SourceError("event " + std::to_string(event.sequence_number) +
                        " carries no timestamp entry");
    }
    return it->second;
  }
};

class SyntheticAreaDetectorSource final : public DataSource {
 public:
  SyntheticAreaDetectorSource(std::string name, wire::SyntheticAreaDetectorParams params)
      : DataSource(std::move(name)), params_(std::move(params)) {}

  Array extract(const Event& event) override {
    Array a;
    a.dtype = params_.dtype;
    a.shape = params_.shape;
    a.data.resize(a.byte_size());

    std::uint64_t state = event.noise_seed ^ (params_.seed * kGolden);
    const std::size_t esize = wire::dtype_size(a.dtype);
    const std::size_t n = a.data.size() / esize;
    if (a.dtype == Dtype::f32) {
      auto* v = reinterpret_cast<float*>(a.data.data());
      for (std::size_t i = 0; i < n; ++i) {
        v[i] = static_cast<float>((splitmix64(state) >> 40) * (1.0 / (1ull << 24)));
      }
    } else if (a.dtype == Dtype::f64) {
      auto* v = reinterpret_cast<double*>(a.data.data());
      for (std::size_t i = 0; i < n; ++i) {
        v[i] = (splitmix64(state) >> 11) * (1.0 / (1ull << 53));
      }
    } else {
      // Integer pixels: small non-negative counts.
      std::uint8_t* bytes = a.data.data();
      for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t value = splitmix64(state) % 1000;
        std::memcpy(bytes + i * esize, &value, esize);
      }
    }
    if (params_.calibration) calibrate(a, params_.gain, params_.offset);
    return a;
  }

 private:
  wire::SyntheticAreaDetectorParams params_;
};

class FileReplaySource final : public DataSource {
 public:
  FileReplaySource(std::string name, wire::FileReplayParams params)
      : DataSource(std::move(name)),
        params_(std::move(params)),
        files_(list_lsc1_files(params_.path)) {
    // Validate the field exists up front, at load time.
    const auto fields = load_container_file(files_[0]);
    if (!fields.contains(params_.field)) {
      throw PipelineError("field " + params_.field + " not present in " + files_[0].string());
    }
  }

  Array extract(const Event& event) override {
    while (row_ >= rows_ && file_index_ < files_.size()) {
      auto fields = load_container_file(files_[file_index_++]);
      auto it = fields.find(params_.field);
      if (it == fields.end()) {
        throw SourceError("field " + params_.field + " missing from replay file");
      }
      current_ = std::move(it->second);
      rows_ = current_.shape.empty() ? 0 : current_.shape[0];
      row_ = 0;
    }
    if (row_ >= rows_) {
      throw SourceError("replay data for " + name() + " exhausted at event " +
                        std::to_string(event.sequence_number));
    }
    return row_slice(current_, row_++);
  }

 private:
  wire::FileReplayParams params_;
  std::vector<fs::path> files_;
  std::size_t file_index_ = 0;
  Array current_;
  std::uint64_t rows_ = 0;
  std::uint64_t row_ = 0;
};

}  // namespace

std::unique_ptr<DataSource> make_data_source(const wire::DataSourceSpec& spec) {
  if (spec.type == "SyntheticTimestamp") {
    return std::make_unique<SyntheticTimestampSource>(spec.name);
  }
  if (spec.type == "SyntheticAreaDetector") {
    return std::make_unique<SyntheticAreaDetectorSource>(
        spec.name, std::get<wire::SyntheticAreaDetectorParams>(spec.params));
  }
  if (spec.type == "FileReplay") {
    return std::make_unique<FileReplaySource>(spec.name,
                                              std::get<wire::FileReplayParams>(spec.params));
  }
  throw PipelineError("no data source implementation for " + spec.type);
}

EventRecord extract_event(const Event& event,
                          const std::vector<std::unique_ptr<DataSource>>& sources) {
  EventRecord record;
  for (const auto& src : sources) {
    record[src->name()] = src->extract(event);
  }
  return record;
}

// ---------------------------------------------------------------------------
// Batcher
// ---------------------------------------------------------------------------

void Batcher::add(EventRecord record) {
  if (count_ == 0) {
    for (auto& [name, arr] : record) {
      Array stacked;
      stacked.dtype = arr.dtype;
      stacked.shape.reserve(arr.shape.size() + 1);
      stacked.shape.push_back(0);
      stacked.shape.insert(stacked.shape.end(), arr.shape.begin(), arr.shape.end());
      stacked.data.reserve(arr.data.size() * static_cast<std::size_t>(batch_size_));
      stacked_[name] = std::move(stacked);
    }
  }
  if (record.size() != stacked_.size()) {
    throw PipelineError("record key set changed mid-batch");
  }
  for (auto& [name, arr] : record) {
    auto it = stacked_.find(name);
    if (it == stacked_.end()) throw PipelineError("unexpected record key " + name);
    Array& stacked = it->second;
    if (arr.dtype != stacked.dtype ||
        !std::equal(arr.shape.begin(), arr.shape.end(), stacked.shape.begin() + 1,
                    stacked.shape.end())) {
      throw PipelineError("per-event shape drift in \"" + name + "\"");
    }
    stacked.data.insert(stacked.data.end(), arr.data.begin(), arr.data.end());
    stacked.shape[0]++;
  }
  ++count_;
}

Batch Batcher::take() {
  Batch out;
  for (auto& [name, arr] : stacked_) out[name] = std::move(arr);
  stacked_.clear();
  count_ = 0;
  return out;
}

}  // namespace streamkit::pipeline
