#include "streamkit/relay/relay.hpp"

#include <malloc.h>
#include <sys/uio.h>

#include <array>
#include <atomic>
#include <cstring>
#include <condition_variable>
#include <list>
#include <map>
#include <mutex>
#include <thread>

#include "streamkit/http.hpp"
#include "streamkit/identity/tls.hpp"
#include "streamkit/net/net.hpp"
#include "streamkit/relay/round_robin.hpp"
#include "streamkit/wire/config.hpp"
#include "streamkit/wire/frame.hpp"

namespace streamkit::relay {

using Frame = FrameRing::Frame;

void to_json(nlohmann::json& j, const RelayStats& s) {
  j = {{"frames_in", s.frames_in},
       {"frames_out", s.frames_out},
       {"bytes_in", s.bytes_in},
       {"bytes_out", s.bytes_out},
       {"dropped_count", s.dropped_count},
       {"delivery_failures", s.delivery_failures},
       {"connected_producers", s.connected_producers},
       {"connected_consumers", s.connected_consumers},
       {"queue_depth", s.queue_depth},
       {"queue_bytes", s.queue_bytes},
       {"window_depth", s.window_depth}};
}

void from_json(const nlohmann::json& j, RelayStats& s) {
  j.at("frames_in").get_to(s.frames_in);
  j.at("frames_out").get_to(s.frames_out);
  j.at("bytes_in").get_to(s.bytes_in);
  j.at("bytes_out").get_to(s.bytes_out);
  j.at("dropped_count").get_to(s.dropped_count);
  j.at("delivery_failures").get_to(s.delivery_failures);
  j.at("connected_producers").get_to(s.connected_producers);
  j.at("connected_consumers").get_to(s.connected_consumers);
  j.at("queue_depth").get_to(s.queue_depth);
  j.at("queue_bytes").get_to(s.queue_bytes);
  j.at("window_depth").get_to(s.window_depth);
}

RelayConfig load_relay_config(const std::string& text) {
  nlohmann::json doc = wire::parse_config_document(text);
  if (!doc.is_object()) throw Error("relay config must be a mapping");

  RelayConfig cfg;
  std::string problems;
  auto need_string = [&](const char* key) -> std::string {
    if (!doc.contains(key) || !doc.at(key).is_string()) {
      problems += std::string("missing or non-string \"") + key + "\"\n";
      return {};
    }
    return doc.at(key).get<std::string>();
  };

  cfg.ingest_endpoint = need_string("ingest");
  cfg.egress_endpoint = need_string("egress");
  if (doc.contains("admin")) cfg.admin_endpoint = doc.at("admin").get<std::string>();
  if (doc.contains("capacity_frames"))
    cfg.capacity_frames = doc.at("capacity_frames").get<std::size_t>();
  if (doc.contains("capacity_bytes"))
    cfg.capacity_bytes = doc.at("capacity_bytes").get<std::size_t>();
  if (doc.contains("max_frame_size"))
    cfg.max_frame_size = doc.at("max_frame_size").get<std::uint64_t>();
  if (doc.contains("window_frames")) cfg.window_frames = doc.at("window_frames").get<std::size_t>();
  if (doc.contains("window_bytes")) cfg.window_bytes = doc.at("window_bytes").get<std::size_t>();
  if (doc.contains("policy")) {
    try {
      cfg.policy = policy_from_name(doc.at("policy").get<std::string>());
    } catch (const Error& e) {
      problems += std::string(e.what()) + "\n";
    }
  }
  if (doc.contains("upstream")) cfg.upstream = doc.at("upstream").get<std::string>();
  if (doc.contains("tls")) {
    const auto& tls = doc.at("tls");
    const std::string cert = tls.at("cert").get<std::string>();
    const std::string key = tls.at("key").get<std::string>();
    const std::string ca = tls.at("peer_ca").get<std::string>();
    cfg.tls_server = identity::TlsContext::server(cert, key, ca);
    cfg.tls_client = identity::TlsContext::client(cert, key, ca);
  }

  if (cfg.capacity_frames < 1) problems += "capacity_frames must be >= 1\n";
  if (cfg.capacity_bytes < 1) problems += "capacity_bytes must be >= 1\n";
  if (cfg.max_frame_size > cfg.capacity_bytes) {
    problems += "max_frame_size must not exceed capacity_bytes\n";
  }
  if (!cfg.ingest_endpoint.empty() && cfg.ingest_endpoint == cfg.egress_endpoint &&
      !cfg.ingest_endpoint.ends_with(":0")) {  // :0 binds distinct ephemeral ports
    problems += "ingest and egress endpoints must be distinct\n";
  }
  if (!problems.empty()) throw Error("relay config:\n" + problems);
  return cfg;
}

namespace {

constexpr std::size_t kReadChunk = 256 << 10;

// Frame reader that lands payload bytes directly in the frame's own buffer,
// skipping the staging copy for the bulk of the traffic.
class DirectFrameReader {
 public:
  DirectFrameReader(net::Stream& stream, std::uint64_t max_frame_size)
      : stream_(stream), max_(max_frame_size), buf_(kReadChunk) {}

  // nullopt on end of stream. A connection cut mid-frame also ends the
  // stream; the partial frame is discarded. Throws FrameTooLarge.
  std::optional<Frame> next() {
    std::uint8_t header[wire::kFrameHeaderSize];
    std::size_t have = 0;
    while (have < sizeof header) {
      if (head_ == tail_ && !fill()) return std::nullopt;
      const std::size_t take = std::min(sizeof header - have, tail_ - head_);
      std::memcpy(header + have, buf_.data() + head_, take);
      head_ += take;
      have += take;
    }
    const std::uint64_t len = wire::decode_frame_header(std::span<const std::uint8_t, 8>(header));
    if (len > max_) {
      throw wire::FrameTooLarge("frame of " + std::to_string(len) + " bytes exceeds max " +
                                std::to_string(max_));
    }
    Frame f(static_cast<std::size_t>(len));
    const std::size_t buffered = std::min<std::size_t>(f.size(), tail_ - head_);
    std::memcpy(f.data(), buf_.data() + head_, buffered);
    head_ += buffered;
    std::size_t filled = buffered;
    while (filled < f.size()) {
      const std::size_t n = stream_.read_some(std::span(f.data() + filled, f.size() - filled));
      if (n == 0) return std::nullopt;
      filled += n;
    }
    return f;
  }

 private:
  bool fill() {
    head_ = tail_ = 0;
    const std::size_t n = stream_.read_some(buf_);
    tail_ = n;
    return n > 0;
  }

  net::Stream& stream_;
  std::uint64_t max_;
  std::vector<std::uint8_t> buf_;
  std::size_t head_ = 0, tail_ = 0;
};

struct Consumer {
  std::uint64_t id = 0;
  net::Stream stream;
  std::deque<Frame> window;
  std::size_t window_bytes = 0;
  bool dead = false;     // stop dispatching to it
  bool closing = false;  // relay teardown: flush and exit
  std::condition_variable cv;
  std::thread writer;
};

struct ProducerConn {
  net::Stream stream;
  std::thread thread;
};

}  // namespace

struct Relay::Impl {
  explicit Impl(RelayConfig c) : cfg(std::move(c)), core(cfg.capacity_frames, cfg.capacity_bytes) {}

  RelayConfig cfg;
  net::Listener ingest_listener;
  net::Listener egress_listener;

  std::atomic<bool> stopping{false};
  std::once_flag stop_once;

  std::atomic<std::uint64_t> frames_in{0}, bytes_in{0};
  std::atomic<std::uint64_t> frames_out{0}, bytes_out{0};
  std::atomic<std::uint64_t> delivery_failures{0};
  std::atomic<std::uint64_t> producers{0}, consumers_gauge{0};

  // One lock orders every frame movement: ring pushes, direct dispatch,
  // backlog dispatch, window drains. All condvars pair with it.
  mutable std::mutex mu;
  std::condition_variable space_cv;    // producers blocked on a full ring
  std::condition_variable backlog_cv;  // dispatcher waiting for work
  RingCore core;
  bool closed = false;    // no further submissions
  bool teardown = false;  // dispatcher discards what is left
  std::map<std::uint64_t, std::shared_ptr<Consumer>> consumers;  // live
  std::vector<std::shared_ptr<Consumer>> defunct;                // joined at stop
  RoundRobinCursor<std::uint64_t> cursor;
  std::uint64_t next_consumer_id = 1;
  std::uint64_t in_flight = 0;  // in consumer windows or being written

  std::mutex producers_mu;
  std::list<std::shared_ptr<ProducerConn>> producer_conns;
  net::Stream* bridge_stream = nullptr;  // guarded by producers_mu

  std::thread ingest_accepter;
  std::thread egress_accepter;
  std::thread dispatcher;
  std::thread bridge;
  std::thread admin_thread;
  httplib::Server admin;
  std::uint16_t admin_port = 0;

  static constexpr std::size_t kWriteBurst = 8;

  // ---- dispatch primitives (mu held) ----

  bool writable_locked(std::uint64_t id, std::size_t frame_size) const {
    auto it = consumers.find(id);
    if (it == consumers.end()) return false;
    const Consumer& c = *it->second;
    if (c.dead || c.closing) return false;
    if (c.window.size() >= cfg.window_frames) return false;
    return c.window.empty() || c.window_bytes + frame_size <= cfg.window_bytes;
  }

  bool any_writable_locked(std::size_t frame_size) const {
    for (const auto& [id, c] : consumers) {
      if (writable_locked(id, frame_size)) return true;
    }
    return false;
  }

  void hand_to_locked(std::uint64_t id, Frame&& f) {
    Consumer& c = *consumers.at(id);
    c.window_bytes += f.size();
    c.window.push_back(std::move(f));
    ++in_flight;
    c.cv.notify_one();
  }

  // ---- ingest ----

  // Accounts and routes one frame. Fast path hands the frame straight to a
  // consumer window when nothing is queued ahead of it; otherwise it goes
  // through the ring under the configured overflow policy.
  bool submit(Frame&& f) {
    const std::size_t size = f.size();
    std::unique_lock lock(mu);
    while (true) {
      if (closed) return false;
      if (core.queue.empty()) {
        auto id = cursor.next([&](std::uint64_t i) { return writable_locked(i, size); });
        if (id) {
          hand_to_locked(*id, std::move(f));
          break;
        }
      }
      if (cfg.policy == OverflowPolicy::drop_oldest) {
        core.push(std::move(f), OverflowPolicy::drop_oldest);
        backlog_cv.notify_one();
        break;
      }
      if (core.fits(size)) {
        core.push(std::move(f), OverflowPolicy::block);
        backlog_cv.notify_one();
        break;
      }
      space_cv.wait(lock);
    }
    lock.unlock();
    frames_in.fetch_add(1, std::memory_order_relaxed);
    bytes_in.fetch_add(size, std::memory_order_relaxed);
    return true;
  }

  void pump_frames(net::Stream& stream) {
    DirectFrameReader reader(stream, cfg.max_frame_size);
    while (true) {
      std::optional<Frame> f;
      try {
        f = reader.next();
      } catch (const Error&) {
        return;  // reset, or oversize frame: resync impossible, drop
      }
      if (!f) return;
      if (!submit(std::move(*f))) return;
    }
  }

  void accept_ingest() {
    while (true) {
      net::Socket s = ingest_listener.accept();
      if (!s.valid()) return;
      auto conn = std::make_shared<ProducerConn>();
      try {
        conn->stream = cfg.tls_server
                           ? net::Stream::tls_server(std::move(s), cfg.tls_server->ctx())
                           : net::Stream::plain(std::move(s));
      } catch (const Error&) {
        continue;  // failed handshake
      }
      {
        std::lock_guard lock(producers_mu);
        producer_conns.push_back(conn);
      }
      conn->thread = std::thread([this, conn] {
        producers.fetch_add(1);
        pump_frames(conn->stream);
        conn->stream.close();
        producers.fetch_sub(1);
      });
    }
  }

  // ---- backlog dispatch ----

  void dispatch_loop() {
    std::unique_lock lock(mu);
    while (true) {
      backlog_cv.wait(lock, [&] {
        return teardown ||
               (!core.queue.empty() && any_writable_locked(core.queue.front().size()));
      });
      if (teardown) {
        std::uint64_t discarded = 0;
        while (core.pop()) ++discarded;
        delivery_failures.fetch_add(discarded);
        return;
      }
      std::size_t moved = 0;
      while (!core.queue.empty()) {
        const std::size_t size = core.queue.front().size();
        auto id = cursor.next([&](std::uint64_t i) { return writable_locked(i, size); });
        if (!id) break;
        auto f = core.pop();
        hand_to_locked(*id, std::move(*f));
        ++moved;
      }
      if (moved > 0) space_cv.notify_all();
    }
  }

  // ---- egress ----

  void write_burst(Consumer& c, std::vector<Frame>& burst) {
    std::array<std::array<std::uint8_t, wire::kFrameHeaderSize>, kWriteBurst> headers;
    std::array<iovec, 2 * kWriteBurst> iov;
    for (std::size_t i = 0; i < burst.size(); ++i) {
      headers[i] = wire::encode_frame_header(burst[i].size());
      iov[2 * i] = {headers[i].data(), wire::kFrameHeaderSize};
      iov[2 * i + 1] = {burst[i].data(), burst[i].size()};
    }
    c.stream.write_gather(iov.data(), 2 * burst.size());
  }

  void writer_loop(std::shared_ptr<Consumer> c) {
    bool io_failed = false;
    std::vector<Frame> burst;
    std::unique_lock lock(mu);
    while (true) {
      c->cv.wait(lock, [&] { return !c->window.empty() || c->closing || c->dead; });
      if (c->window.empty()) break;  // closing or dead, fully flushed

      burst.clear();
      while (!c->window.empty() && burst.size() < kWriteBurst) {
        Frame f = std::move(c->window.front());
        c->window.pop_front();
        c->window_bytes -= f.size();
        burst.push_back(std::move(f));
      }
      lock.unlock();
      backlog_cv.notify_one();

      bool wrote = false;
      std::size_t burst_bytes = 0;
      for (const Frame& f : burst) burst_bytes += f.size();
      if (!io_failed) {
        try {
          write_burst(*c, burst);
          wrote = true;
        } catch (const Error&) {
          io_failed = true;
        }
      }

      lock.lock();
      in_flight -= burst.size();
      if (wrote) {
        frames_out.fetch_add(burst.size(), std::memory_order_relaxed);
        bytes_out.fetch_add(burst_bytes, std::memory_order_relaxed);
      } else {
        delivery_failures.fetch_add(burst.size());
        if (!c->dead) {
          c->dead = true;
          cursor.remove(c->id);
        }
      }
    }

    if (!c->dead) cursor.remove(c->id);
    c->dead = true;
    consumers.erase(c->id);
    defunct.push_back(c);
    lock.unlock();
    backlog_cv.notify_one();
    space_cv.notify_all();
    if (io_failed) {
      c->stream.close();
    } else {
      // Full flush: half-close so the consumer reads everything, then EOF.
      c->stream.shutdown_write();
    }
    consumers_gauge.fetch_sub(1);
  }

  void accept_egress() {
    while (true) {
      net::Socket s = egress_listener.accept();
      if (!s.valid()) return;
      auto c = std::make_shared<Consumer>();
      try {
        c->stream = cfg.tls_server ? net::Stream::tls_server(std::move(s), cfg.tls_server->ctx())
                                   : net::Stream::plain(std::move(s));
      } catch (const Error&) {
        continue;
      }
      consumers_gauge.fetch_add(1);
      {
        std::lock_guard lock(mu);
        c->id = next_consumer_id++;
        consumers[c->id] = c;
        cursor.add(c->id);
        c->writer = std::thread([this, c] { writer_loop(c); });
      }
      backlog_cv.notify_one();
    }
  }

  // ---- upstream bridge (cache stacking) ----

  void bridge_loop(const std::string& upstream) {
    const net::Endpoint ep = net::Endpoint::parse(upstream);
    int backoff_ms = 100;
    while (!stopping.load()) {
      net::Stream stream;
      try {
        net::Socket s = net::dial(ep, 2000);
        stream = cfg.tls_client ? net::Stream::tls_client(std::move(s), cfg.tls_client->ctx())
                                : net::Stream::plain(std::move(s));
      } catch (const Error&) {
        for (int waited = 0; waited < backoff_ms && !stopping.load(); waited += 50) {
          std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
        backoff_ms = std::min(backoff_ms * 2, 2000);
        continue;
      }
      backoff_ms = 100;
      producers.fetch_add(1);
      {
        std::lock_guard lock(producers_mu);
        bridge_stream = &stream;
      }
      pump_frames(stream);
      {
        std::lock_guard lock(producers_mu);
        bridge_stream = nullptr;
      }
      producers.fetch_sub(1);
    }
  }

  // ---- lifecycle ----

  void start_threads() {
    dispatcher = std::thread([this] { dispatch_loop(); });
    ingest_accepter = std::thread([this] { accept_ingest(); });
    egress_accepter = std::thread([this] { accept_egress(); });
    if (cfg.upstream) {
      bridge = std::thread([this] { bridge_loop(*cfg.upstream); });
    }
    if (cfg.admin_endpoint) {
      const net::Endpoint ep = net::Endpoint::parse(*cfg.admin_endpoint);
      admin.Get("/stats", [this](const httplib::Request&, httplib::Response& res) {
        nlohmann::json j = snapshot();
        res.set_content(j.dump(), "application/json");
      });
      admin_port = ep.port;
      if (ep.port == 0) {
        const int p = admin.bind_to_any_port(ep.host);
        if (p <= 0) throw net::NetError("admin bind failed on " + ep.host);
        admin_port = static_cast<std::uint16_t>(p);
      } else if (!admin.bind_to_port(ep.host, ep.port)) {
        throw net::NetError("admin bind failed on " + ep.str());
      }
      admin_thread = std::thread([this] { admin.listen_after_bind(); });
      admin.wait_until_ready();
    }
  }

  RelayStats snapshot() const {
    RelayStats s;
    {
      std::lock_guard lock(mu);
      s.dropped_count = core.dropped;
      s.queue_depth = core.queue.size();
      s.queue_bytes = core.bytes;
      s.window_depth = in_flight;
    }
    s.frames_in = frames_in.load();
    s.frames_out = frames_out.load();
    s.bytes_in = bytes_in.load();
    s.bytes_out = bytes_out.load();
    s.delivery_failures = delivery_failures.load();
    s.connected_producers = producers.load();
    s.connected_consumers = consumers_gauge.load();
    return s;
  }

  bool is_quiescent() const {
    std::lock_guard lock(mu);
    return core.queue.empty() && in_flight == 0;
  }

  void stop(std::chrono::milliseconds drain) {
    std::call_once(stop_once, [&] {
      stopping.store(true);

      ingest_listener.shutdown();
      egress_listener.shutdown();
      if (ingest_accepter.joinable()) ingest_accepter.join();
      if (egress_accepter.joinable()) egress_accepter.join();

      const auto deadline = std::chrono::steady_clock::now() + drain;
      while (!is_quiescent() && std::chrono::steady_clock::now() < deadline) {
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
      }

      // Unblock and cut all intake.
      {
        std::lock_guard lock(mu);
        closed = true;
      }
      space_cv.notify_all();
      {
        std::lock_guard lock(producers_mu);
        for (auto& conn : producer_conns) conn->stream.shutdown_both();
        if (bridge_stream) bridge_stream->shutdown_both();
      }
      for (auto& conn : producer_conns) {
        if (conn->thread.joinable()) conn->thread.join();
      }
      if (bridge.joinable()) bridge.join();

      // Dispatcher discards whatever could not drain in time.
      {
        std::lock_guard lock(mu);
        teardown = true;
      }
      backlog_cv.notify_all();
      if (dispatcher.joinable()) dispatcher.join();

      // Flush consumer windows and close.
      std::vector<std::shared_ptr<Consumer>> all;
      {
        std::lock_guard lock(mu);
        for (auto& [id, c] : consumers) {
          c->closing = true;
          c->cv.notify_all();
          all.push_back(c);
        }
      }
      for (auto& c : all) {
        if (c->writer.joinable()) c->writer.join();
      }
      {
        std::lock_guard lock(mu);
        for (auto& c : defunct) all.push_back(c);
        defunct.clear();
      }
      for (auto& c : all) {
        if (c->writer.joinable()) c->writer.join();
        c->stream.close();
      }

      if (cfg.admin_endpoint) {
        admin.stop();
        if (admin_thread.joinable()) admin_thread.join();
      }
    });
  }
};

Relay::Relay() = default;

Relay::~Relay() {
  if (impl_) impl_->stop(std::chrono::milliseconds(0));
}

std::unique_ptr<Relay> Relay::start(RelayConfig config) {
  if (config.max_frame_size > config.capacity_bytes) {
    throw Error("max_frame_size exceeds ring capacity_bytes; block policy would deadlock");
  }
  // Keep big frame buffers inside the malloc arena. Falling through to
  // mmap would hand back zeroed pages on every frame, one extra memory
  // pass at multi-GB/s rates.
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 64 << 20);
  auto relay = std::unique_ptr<Relay>(new Relay());
  relay->impl_ = std::make_unique<Impl>(std::move(config));
  Impl& im = *relay->impl_;
  im.ingest_listener = net::Listener::bind(net::Endpoint::parse(im.cfg.ingest_endpoint));
  im.egress_listener = net::Listener::bind(net::Endpoint::parse(im.cfg.egress_endpoint));
  im.start_threads();
  return relay;
}

RelayStats Relay::stats() const { return impl_->snapshot(); }

bool Relay::quiescent() const { return impl_->is_quiescent(); }

std::uint16_t Relay::ingest_port() const { return impl_->ingest_listener.port(); }
std::uint16_t Relay::egress_port() const { return impl_->egress_listener.port(); }
std::uint16_t Relay::admin_port() const { return impl_->admin_port; }

void Relay::stop(std::chrono::milliseconds drain) { impl_->stop(drain); }

}  // namespace streamkit::relay
