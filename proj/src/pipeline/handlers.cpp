#include <poll.h>

#include <condition_variable>
#include <deque>
#include <fstream>
#include <mutex>
#include <regex>
#include <thread>

#include "streamkit/net/net.hpp"
#include "streamkit/pipeline/pipeline.hpp"
#include "streamkit/wire/frame.hpp"

namespace streamkit::pipeline {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// FileWritingHandler
// ---------------------------------------------------------------------------

std::string FileWritingHandler::substitute(const std::string& pattern, const std::string& run_id,
                                           std::uint64_t seq) {
  static const std::regex seq_re(R"(\{seq(?::0?(\d+))?\})");
  std::string out;
  std::smatch m;
  std::string rest = pattern;
  while (std::regex_search(rest, m, seq_re)) {
    out += m.prefix();
    std::string digits = std::to_string(seq);
    if (m[1].matched) {
      const std::size_t width = std::stoul(m[1].str());
      if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
    }
    out += digits;
    rest = m.suffix();
  }
  out += rest;
  // {run_id} substitution
  std::string final_out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t hit = out.find("{run_id}", pos);
    if (hit == std::string::npos) {
      final_out += out.substr(pos);
      break;
    }
    final_out += out.substr(pos, hit - pos);
    final_out += run_id;
    pos = hit + 8;
  }
  return final_out;
}

FileWritingHandler::FileWritingHandler(const wire::BinaryFileWritingParams& params)
    : params_(params) {
  std::error_code ec;
  fs::create_directories(params_.directory, ec);
  // Probe writability now so a bad directory fails at load, not mid-run.
  const fs::path probe = fs::path(params_.directory) / ".write-probe";
  std::ofstream test(probe);
  if (!test) {
    throw PipelineError("output directory not writable: " + params_.directory);
  }
  test.close();
  fs::remove(probe, ec);
}

void FileWritingHandler::handle(const Blob& blob) {
  const std::string name = substitute(params_.filename_pattern, params_.run_id, seq_++);
  const fs::path target = fs::path(params_.directory) / name;
  const fs::path tmp = fs::path(params_.directory) / ("." + name + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw PipelineError("cannot create " + tmp.string());
    out.write(reinterpret_cast<const char*>(blob->data()),
              static_cast<std::streamsize>(blob->size()));
    if (!out) throw PipelineError("short write to " + tmp.string());
  }
  // Readers see either no file or a complete one.
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw PipelineError("rename " + tmp.string() + " -> " + target.string());
  last_written_ = target;
}

// ---------------------------------------------------------------------------
// StreamingHandler
// ---------------------------------------------------------------------------

struct StreamingHandler::Impl {
  explicit Impl(wire::BinaryDataStreamingParams p) : params(std::move(p)) {
    endpoint = net::Endpoint::parse(params.endpoint);
    worker = std::thread([this] { run(); });
  }

  ~Impl() {
    {
      std::lock_guard lock(mu);
      finishing = true;
      abandoned = true;  // an un-finalized handler must not hang in reconnect
    }
    cv.notify_all();
    if (worker.joinable()) worker.join();
  }

  void enqueue(const Blob& blob) {
    std::unique_lock lock(mu);
    if (!hard_error.empty()) throw PipelineError(hard_error);
    if (params.drop_when_disconnected && !connected && queue.size() >= kQueueLimit) {
      ++dropped_count;
      return;
    }
    cv.wait(lock, [&] { return queue.size() < kQueueLimit || !hard_error.empty(); });
    if (!hard_error.empty()) throw PipelineError(hard_error);
    queue.push_back(blob);
    cv.notify_all();
  }

  void finish() {
    std::unique_lock lock(mu);
    finishing = true;
    cv.notify_all();
    cv.wait(lock, [&] { return done; });
    if (!hard_error.empty()) throw PipelineError(hard_error);
  }

  void run() {
    while (true) {
      Blob blob;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return !queue.empty() || finishing; });
        if (queue.empty() && finishing) break;
        blob = queue.front();
      }
      try {
        ensure_connected();
        if (!peer_alive()) {
          // The relay went away since the last send; a write would vanish
          // into the dead socket without an error.
          {
            std::lock_guard lock(mu);
            connected = false;
          }
          stream.close();
          ensure_connected();
        }
        const auto header = wire::encode_frame_header(blob->size());
        stream.write_all(header, *blob);
        std::lock_guard lock(mu);
        queue.pop_front();
        cv.notify_all();
      } catch (const PipelineError& e) {
        std::lock_guard lock(mu);
        hard_error = e.what();
        queue.clear();
        cv.notify_all();
        break;
      } catch (const Error&) {
        // connection dropped: reconnect and resend the same blob
        std::lock_guard lock(mu);
        connected = false;
        stream.close();
      }
    }
    shutdown_stream();
    std::lock_guard lock(mu);
    done = true;
    cv.notify_all();
  }

  void ensure_connected() {
    if (connected) return;
    int delay_ms = params.reconnect_base_ms;
    int attempt = 0;
    while (true) {
      ++attempt;
      try {
        stream = net::Stream::plain(net::dial(endpoint, 2000));
        {
          std::lock_guard lock(mu);
          connected = true;
        }
        return;
      } catch (const Error& e) {
        if (params.max_attempts > 0 && attempt >= params.max_attempts) {
          throw PipelineError("stream endpoint " + params.endpoint + " unreachable after " +
                              std::to_string(attempt) + " attempts: " + e.what());
        }
        for (int waited = 0; waited < delay_ms; waited += 20) {
          {
            std::lock_guard lock(mu);
            if (abandoned) throw PipelineError("streaming handler abandoned mid-reconnect");
          }
          std::this_thread::sleep_for(std::chrono::milliseconds(std::min(20, delay_ms - waited)));
        }
        delay_ms = std::min(delay_ms * 2, params.reconnect_cap_ms);
      }
    }
  }

  // The relay never sends application bytes to producers, so anything
  // readable (or HUP/ERR) on the socket means the peer closed or reset.
  bool peer_alive() {
    pollfd p{};
    p.fd = stream.fd();
    p.events = POLLIN;
    if (::poll(&p, 1, 0) > 0 && (p.revents & (POLLIN | POLLHUP | POLLERR))) return false;
    return true;
  }

  void shutdown_stream() {
    if (connected) {
      stream.shutdown_write();
      // Wait for the relay to finish reading before closing.
      std::vector<std::uint8_t> sink(64);
      try {
        while (stream.read_some(sink) != 0) {
        }
      } catch (const Error&) {
      }
    }
    stream.close();
  }

  static constexpr std::size_t kQueueLimit = 4;

  wire::BinaryDataStreamingParams params;
  net::Endpoint endpoint;
  std::mutex mu;
  std::condition_variable cv;
  std::deque<Blob> queue;
  bool connected = false;
  bool finishing = false;
  bool abandoned = false;
  bool done = false;
  std::string hard_error;
  std::uint64_t dropped_count = 0;
  net::Stream stream;
  std::thread worker;
};

StreamingHandler::StreamingHandler(const wire::BinaryDataStreamingParams& params)
    : impl_(std::make_unique<Impl>(params)) {}

StreamingHandler::~StreamingHandler() = default;

void StreamingHandler::handle(const Blob& blob) { impl_->enqueue(blob); }

void StreamingHandler::finalize() { impl_->finish(); }

std::uint64_t StreamingHandler::dropped() const {
  std::lock_guard lock(impl_->mu);
  return impl_->dropped_count;
}

std::unique_ptr<BlobHandler> make_handler(const wire::DataHandlerSpec& spec) {
  if (spec.name == "BinaryFileWritingDataHandler") {
    return std::make_unique<FileWritingHandler>(std::get<wire::BinaryFileWritingParams>(spec.params));
  }
  if (spec.name == "BinaryDataStreamingDataHandler") {
    return std::make_unique<StreamingHandler>(
        std::get<wire::BinaryDataStreamingParams>(spec.params));
  }
  throw PipelineError("no handler implementation for " + spec.name);
}

}  // namespace streamkit::pipeline
