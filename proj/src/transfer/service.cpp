#include "streamkit/transfer/service.hpp"

#include <openssl/rand.h>

#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "streamkit/http.hpp"
#include "streamkit/identity/hmac.hpp"
#include "streamkit/identity/identity.hpp"
#include "streamkit/jobs/runner.hpp"
#include "streamkit/relay/relay.hpp"
#include "streamkit/wire/config.hpp"

namespace streamkit::transfer {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string random_hex(std::size_t bytes) {
  std::vector<unsigned char> buf(bytes);
  RAND_bytes(buf.data(), static_cast<int>(buf.size()));
  static const char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * bytes);
  for (unsigned char b : buf) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xf]);
  }
  return out;
}

double now_unix() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::optional<TransferEvent> event_for_job_state(jobs::JobState s) {
  switch (s) {
    case jobs::JobState::queued:
      return TransferEvent::job_queued;
    case jobs::JobState::active:
      return TransferEvent::job_active;
    case jobs::JobState::completed:
      return TransferEvent::job_completed;
    case jobs::JobState::failed:
      return TransferEvent::job_failed;
    case jobs::JobState::canceled:
      return TransferEvent::user_cancel;  // cancellation callbacks close the loop
  }
  return std::nullopt;
}

}  // namespace

struct Transfer {
  std::string id;
  mutable std::mutex mu;  // serializes FSM application per transfer
  TransferState state = TransferState::created;
  json request;
  std::string failure_reason;
  std::string jobid;
  std::string cb_secret;
  std::string ingest_endpoint, egress_endpoint;
  std::vector<std::pair<double, TransferState>> transitions;
  std::set<std::pair<std::uint64_t, std::string>> seen_callbacks;

  std::unique_ptr<relay::Relay> relay;
  std::thread setup;
  std::thread teardown;
  bool teardown_started = false;
};

struct TransferService::Impl {
  TransferServiceConfig cfg;
  std::unique_ptr<jobs::Store> store;
  std::unique_ptr<jobs::LocalRunner> runner;

  mutable std::mutex transfers_mu;
  std::map<std::string, std::shared_ptr<Transfer>> transfers;
  std::map<std::string, std::string> job_to_transfer;
  std::uint64_t next_id = 1;
  std::atomic<bool> stopping{false};
  std::atomic<int> relays_stopping{0};

  std::unique_ptr<httplib::Server> api;
  httplib::Server callbacks;
  std::thread api_thread, callback_thread;
  int api_port = 0, callback_port = 0;

  explicit Impl(TransferServiceConfig c) : cfg(std::move(c)) {
    fs::create_directories(cfg.work_dir);
    jobs::BackendConfig local;
    local.nickname = "local";
    local.type = "local";
    local.duration_scale = cfg.backend_duration_scale;
    store = std::make_unique<jobs::Store>(cfg.work_dir / "jobstore", std::map<std::string, jobs::BackendConfig>{{"local", local}});
    runner = std::make_unique<jobs::LocalRunner>(*store);
  }

  // ---- FSM application (side effects included) ----

  void apply(const std::shared_ptr<Transfer>& t, TransferEvent event,
             const std::string& reason = "") {
    bool start_drain_watch = false;
    bool start_teardown = false;
    {
      std::lock_guard lock(t->mu);
      const StepResult r = step(t->state, event);
      if (!r.changed) return;  // rejected (or job_queued): recorded, no transition
      t->state = r.next;
      t->transitions.emplace_back(now_unix(), r.next);
      if (!reason.empty() && t->failure_reason.empty()) t->failure_reason = reason;
      if (r.next == TransferState::draining) start_drain_watch = true;
      if (is_terminal(r.next) && !t->teardown_started) {
        t->teardown_started = true;
        start_teardown = true;
      }
    }
    if (start_drain_watch) {
      // Queued frames must reach consumers before the relay goes away.
      std::lock_guard lock(t->mu);
      if (!t->teardown_started) {
        t->teardown_started = true;
        t->teardown = std::thread([this, t] {
          wait_for_drain(t);
          apply_drain_done(t);
        });
      }
    }
    if (start_teardown) {
      t->teardown = std::thread([this, t] {
        wait_for_drain(t);
        shutdown_relay(t);
      });
    }
  }

  void wait_for_drain(const std::shared_ptr<Transfer>& t) {
    const auto deadline = std::chrono::steady_clock::now() + cfg.drain_timeout;
    while (std::chrono::steady_clock::now() < deadline && !stopping.load()) {
      {
        std::lock_guard lock(t->mu);
        if (!t->relay || t->relay->quiescent()) return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  }

  void apply_drain_done(const std::shared_ptr<Transfer>& t) {
    {
      std::lock_guard lock(t->mu);
      const StepResult r = step(t->state, TransferEvent::drain_done);
      if (r.changed) {
        t->state = r.next;
        t->transitions.emplace_back(now_unix(), r.next);
      }
    }
    shutdown_relay(t);
  }

  void shutdown_relay(const std::shared_ptr<Transfer>& t) {
    std::unique_ptr<relay::Relay> relay;
    {
      std::lock_guard lock(t->mu);
      if (t->relay) {
        relays_stopping.fetch_add(1);
        relay = std::move(t->relay);
      }
    }
    if (relay) {
      relay->stop(std::chrono::milliseconds(500));
      relay.reset();
      relays_stopping.fetch_sub(1);
    }
  }

  // ---- create flow ----

  std::string create(const json& request) {
    json errors = json::array();
    if (!request.is_object()) {
      throw RequestInvalid(json::array({{{"path", "/"}, {"message", "expected a JSON object"}}}));
    }
    if (!request.contains("config")) {
      errors.push_back({{"path", "/config"}, {"message", "missing pipeline configuration"}});
    }
    std::uint32_t worker_count = 1;
    if (request.contains("worker_count")) {
      if (!request.at("worker_count").is_number_integer() ||
          request.at("worker_count").get<std::int64_t>() < 1) {
        errors.push_back({{"path", "/worker_count"}, {"message", "must be an integer >= 1"}});
      } else {
        worker_count = request.at("worker_count").get<std::uint32_t>();
      }
    }

    relay::RelayConfig relay_cfg;
    relay_cfg.ingest_endpoint = cfg.advertise_host + ":0";
    relay_cfg.egress_endpoint = cfg.advertise_host + ":0";
    relay_cfg.capacity_frames = 1024;
    relay_cfg.capacity_bytes = 1ull << 30;
    relay_cfg.max_frame_size = 1ull << 30;
    if (request.contains("relay")) {
      const json& r = request.at("relay");
      if (!r.is_object()) {
        errors.push_back({{"path", "/relay"}, {"message", "expected a mapping"}});
      } else {
        if (r.contains("capacity_frames")) {
          relay_cfg.capacity_frames = r.at("capacity_frames").get<std::size_t>();
        }
        if (r.contains("capacity_bytes")) {
          relay_cfg.capacity_bytes = r.at("capacity_bytes").get<std::size_t>();
          relay_cfg.max_frame_size = std::min<std::uint64_t>(relay_cfg.max_frame_size,
                                                             relay_cfg.capacity_bytes);
        }
        if (r.contains("policy")) {
          try {
            relay_cfg.policy = relay::policy_from_name(r.at("policy").get<std::string>());
          } catch (const Error& e) {
            errors.push_back({{"path", "/relay/policy"}, {"message", e.what()}});
          }
        }
      }
    }

    // Validate the pipeline configuration itself, then require the streaming
    // handler: a transfer's whole point is to feed the provisioned relay.
    json config_doc;
    if (request.contains("config")) {
      config_doc = request.at("config");
      // The endpoint belongs to the relay this service provisions; accept
      // configs without one and fill it in after the relay is up.
      if (config_doc.is_object()) {
        auto& handler_params = config_doc["data_handlers"]["BinaryDataStreamingDataHandler"];
        if (!handler_params.contains("endpoint")) handler_params["endpoint"] = "127.0.0.1:1";
      }
      auto result = wire::validate_config_json(config_doc);
      if (!result.ok()) {
        for (const auto& e : result.errors) {
          errors.push_back({{"path", "/config" + e.path}, {"message", e.message}});
        }
      } else {
        const auto& handlers = result.config->data_handlers;
        if (std::find(handlers.begin(), handlers.end(), "BinaryDataStreamingDataHandler") ==
            handlers.end()) {
          errors.push_back(
              {{"path", "/config/lclstreamer/data_handlers"},
               {"message", "a transfer needs BinaryDataStreamingDataHandler to feed the relay"}});
        }
      }
    }
    if (!errors.empty()) throw RequestInvalid(std::move(errors));

    auto t = std::make_shared<Transfer>();
    {
      std::lock_guard lock(transfers_mu);
      t->id = std::to_string(static_cast<std::int64_t>(::time(nullptr))) + "." +
              std::to_string(next_id++);
      t->request = request;
      t->transitions.emplace_back(now_unix(), TransferState::created);
      t->cb_secret = random_hex(32);
      transfers[t->id] = t;
    }

    t->setup = std::thread([this, t, relay_cfg, config_doc, worker_count]() mutable {
      setup_transfer(t, std::move(relay_cfg), config_doc, worker_count);
    });
    return t->id;
  }

  void setup_transfer(const std::shared_ptr<Transfer>& t, relay::RelayConfig relay_cfg,
                      json config_doc, std::uint32_t worker_count) {
    // 1. Provision the relay.
    try {
      auto relay = relay::Relay::start(relay_cfg);
      std::unique_lock lock(t->mu);
      if (is_terminal(t->state)) {  // canceled while we were binding
        lock.unlock();
        relay->stop(std::chrono::milliseconds(0));
        return;
      }
      t->ingest_endpoint = cfg.advertise_host + ":" + std::to_string(relay->ingest_port());
      t->egress_endpoint = cfg.advertise_host + ":" + std::to_string(relay->egress_port());
      t->relay = std::move(relay);
    } catch (const Error& e) {
      apply(t, TransferEvent::start_failed, std::string("relay start failed: ") + e.what());
      return;
    }
    apply(t, TransferEvent::relay_ready);
    {
      std::lock_guard lock(t->mu);
      if (is_terminal(t->state)) return;  // canceled during startup; teardown owns the relay
    }

    // 2. Point the streaming handler at the provisioned relay and write the
    //    config where the workers will find it.
    std::string ingest;
    {
      std::lock_guard lock(t->mu);
      ingest = t->ingest_endpoint;
    }
    config_doc["data_handlers"]["BinaryDataStreamingDataHandler"]["endpoint"] = ingest;
    const fs::path tdir = cfg.work_dir / "transfers" / t->id;
    fs::create_directories(tdir);
    const fs::path config_path = tdir / "config.json";
    {
      std::ofstream out(config_path, std::ios::trunc);
      out << config_doc.dump(2) << "\n";
    }

    // 3. Launch the streaming job with callbacks pointing back here.
    jobs::JobSpec spec;
    spec.name = "transfer-" + t->id;
    spec.script = worker_script(config_path, worker_count);
    spec.backend = "local";
    spec.resources.duration = cfg.job_duration;
    spec.resources.processes_per_node = worker_count;
    spec.callback = "http://" + cfg.callback_host + ":" + std::to_string(callback_port) +
                    "/callbacks";
    spec.cb_secret = t->cb_secret;

    std::string jobid;
    try {
      jobid = store->create(spec);
    } catch (const Error& e) {
      apply(t, TransferEvent::job_failed, std::string("job submission failed: ") + e.what());
      return;
    }
    bool already_terminal = false;
    {
      std::lock_guard lock(t->mu);
      t->jobid = jobid;
      already_terminal = is_terminal(t->state);
    }
    {
      std::lock_guard lock(transfers_mu);
      job_to_transfer[jobid] = t->id;
    }
    if (already_terminal) {  // canceled while the job was being written
      try {
        store->cancel(jobid);
      } catch (const jobs::JobError&) {
      }
      return;
    }
    runner->poke();
  }

  std::string worker_script(const fs::path& config_path, std::uint32_t worker_count) const {
    std::string s;
    s += "pids=\"\"\n";
    s += "i=0\n";
    s += "while [ $i -lt " + std::to_string(worker_count) + " ]; do\n";
    s += "  '" + cfg.streamer_path + "' run -c '" + config_path.string() + "' --worker-index $i";
    s += " --worker-count " + std::to_string(worker_count) + " &\n";
    s += "  pids=\"$pids $!\"\n";
    s += "  i=$((i+1))\n";
    s += "done\n";
    s += "rc=0\n";
    s += "for p in $pids; do wait $p || rc=1; done\n";
    s += "exit $rc\n";
    return s;
  }

  // ---- reads and actions ----

  std::shared_ptr<Transfer> find(const std::string& id) const {
    std::lock_guard lock(transfers_mu);
    auto it = transfers.find(id);
    if (it == transfers.end()) throw UnknownTransfer("no transfer " + id);
    return it->second;
  }

  json get(const std::string& id) const {
    auto t = find(id);
    std::lock_guard lock(t->mu);
    json transitions = json::array();
    for (const auto& [ts, state] : t->transitions) {
      transitions.push_back({{"t", ts}, {"state", std::string(state_name(state))}});
    }
    return {{"id", t->id},
            {"state", std::string(state_name(t->state))},
            {"ingest_endpoint", t->ingest_endpoint},
            {"egress_endpoint", t->egress_endpoint},
            {"jobid", t->jobid},
            {"transitions", transitions},
            {"failure_reason", t->failure_reason}};
  }

  void cancel(const std::string& id) {
    auto t = find(id);
    std::string jobid;
    {
      std::lock_guard lock(t->mu);
      if (is_terminal(t->state)) {
        throw CancelConflict("transfer " + id + " is already terminal (" +
                             std::string(state_name(t->state)) + ")");
      }
      if (t->state == TransferState::draining) {
        throw CancelConflict("transfer " + id + " is draining; it will complete on its own");
      }
      jobid = t->jobid;
    }
    apply(t, TransferEvent::user_cancel);
    if (!jobid.empty()) {
      try {
        store->cancel(jobid);
      } catch (const jobs::JobError&) {
        // already terminal; the callback loop has nothing more to do
      }
    }
  }

  void handle_callback(const std::string& body, const std::string& signature) {
    json doc = json::parse(body, nullptr, false);
    if (doc.is_discarded()) throw TransferError("callback body is not JSON");
    jobs::Callback cb = jobs::Callback::from_json(doc);

    std::shared_ptr<Transfer> t;
    {
      std::lock_guard lock(transfers_mu);
      auto it = job_to_transfer.find(cb.jobid);
      if (it == job_to_transfer.end()) throw UnknownTransfer("no transfer for job " + cb.jobid);
      t = transfers.at(it->second);
    }
    if (!identity::verify_body(t->cb_secret, body, signature)) {
      throw BadSignature("callback signature did not verify");
    }
    {
      std::lock_guard lock(t->mu);
      const auto key = std::make_pair(cb.jobndx, std::string(jobs::state_name(cb.state)));
      if (!t->seen_callbacks.insert(key).second) return;  // duplicate: no double transition
    }
    if (auto event = event_for_job_state(cb.state)) {
      apply(t, *event,
            cb.state == jobs::JobState::failed
                ? "job failed with info " + std::to_string(cb.info)
                : "");
    }
  }

  bool idle() const {
    if (relays_stopping.load() > 0) return false;
    std::lock_guard lock(transfers_mu);
    for (const auto& [id, t] : transfers) {
      std::lock_guard tl(t->mu);
      if (!is_terminal(t->state) || t->relay) return false;
    }
    return relays_stopping.load() == 0;
  }

  // ---- HTTP ----

  void log(const std::string& peer, const httplib::Request& req, int status) {
    if (cfg.access_log) cfg.access_log->record(peer, req.method, req.path, status);
  }

  std::string peer_of(const httplib::Request& req) {
    if (req.ssl) {
      X509* cert = SSL_get1_peer_certificate(req.ssl);
      if (cert) {
        identity::CertPtr leaf(cert);
        return identity::cert_common_name(leaf.get());
      }
    }
    return "";
  }

  void route_api(httplib::Server& s) {
    s.Post("/transfers", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        const json body = json::parse(req.body, nullptr, false);
        if (body.is_discarded()) throw RequestInvalid(json::array(
            {{{"path", "/"}, {"message", "body is not valid JSON"}}}));
        const std::string id = create(body);
        res.set_content(json({{"id", id}}).dump(), "application/json");
      } catch (const RequestInvalid& e) {
        res.status = 422;
        res.set_content(json({{"errors", e.errors()}}).dump(), "application/json");
      }
      log(peer_of(req), req, res.status);
    });

    s.Get(R"(/transfers/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        res.set_content(get(req.matches[1]).dump(), "application/json");
      } catch (const UnknownTransfer& e) {
        res.status = 404;
        res.set_content(json({{"error", e.what()}}).dump(), "application/json");
      }
      log(peer_of(req), req, res.status);
    });

    s.Delete(R"(/transfers/([^/]+))",
             [this](const httplib::Request& req, httplib::Response& res) {
               try {
                 cancel(req.matches[1]);
                 res.set_content(json({{"id", std::string(req.matches[1])},
                                       {"state", "CANCELED"}})
                                     .dump(),
                                 "application/json");
               } catch (const UnknownTransfer& e) {
                 res.status = 404;
                 res.set_content(json({{"error", e.what()}}).dump(), "application/json");
               } catch (const CancelConflict& e) {
                 res.status = 409;
                 res.set_content(json({{"error", e.what()}}).dump(), "application/json");
               }
               log(peer_of(req), req, res.status);
             });
  }

  void start() {
    callbacks.Post("/callbacks", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        handle_callback(req.body, req.get_header_value("X-Psk-Signature"));
        res.set_content("{}", "application/json");
      } catch (const BadSignature& e) {
        res.status = 401;
        res.set_content(json({{"error", e.what()}}).dump(), "application/json");
      } catch (const UnknownTransfer& e) {
        res.status = 404;
        res.set_content(json({{"error", e.what()}}).dump(), "application/json");
      } catch (const Error& e) {
        res.status = 422;
        res.set_content(json({{"error", e.what()}}).dump(), "application/json");
      }
    });
    callback_port = cfg.callback_port;
    if (callback_port == 0) {
      callback_port = callbacks.bind_to_any_port(cfg.callback_host);
    } else if (!callbacks.bind_to_port(cfg.callback_host, callback_port)) {
      throw TransferError("callback listener bind failed");
    }
    callback_thread = std::thread([this] { callbacks.listen_after_bind(); });
    callbacks.wait_until_ready();

    if (cfg.tls) {
      auto ssl = std::make_unique<httplib::SSLServer>(cfg.tls->cert.c_str(),
                                                      cfg.tls->key.c_str(),
                                                      cfg.tls->peer_ca.c_str());
      if (!ssl->is_valid()) throw TransferError("TLS configuration invalid for transfer API");
      api = std::move(ssl);
    } else {
      api = std::make_unique<httplib::Server>();
    }
    route_api(*api);
    api_port = cfg.api_port;
    if (api_port == 0) {
      api_port = api->bind_to_any_port(cfg.api_host);
    } else if (!api->bind_to_port(cfg.api_host, api_port)) {
      throw TransferError("transfer API bind failed");
    }
    api_thread = std::thread([this] { api->listen_after_bind(); });
    api->wait_until_ready();

    runner->start();
  }

  void stop() {
    stopping.store(true);
    if (api) api->stop();
    callbacks.stop();
    if (api_thread.joinable()) api_thread.join();
    if (callback_thread.joinable()) callback_thread.join();
    runner->stop();
    store->flush_callbacks();

    std::vector<std::shared_ptr<Transfer>> all;
    {
      std::lock_guard lock(transfers_mu);
      for (auto& [id, t] : transfers) all.push_back(t);
    }
    for (auto& t : all) {
      if (t->setup.joinable()) t->setup.join();
      if (t->teardown.joinable()) t->teardown.join();
      shutdown_relay(t);
    }
  }
};

TransferService::TransferService(TransferServiceConfig config)
    : impl_(std::make_unique<Impl>(std::move(config))) {}

TransferService::~TransferService() {
  if (impl_) impl_->stop();
}

void TransferService::start() { impl_->start(); }
void TransferService::stop() { impl_->stop(); }
int TransferService::api_port() const { return impl_->api_port; }
int TransferService::callback_port() const { return impl_->callback_port; }

std::string TransferService::create(const nlohmann::json& request) {
  return impl_->create(request);
}
nlohmann::json TransferService::get(const std::string& id) const { return impl_->get(id); }
void TransferService::cancel(const std::string& id) { impl_->cancel(id); }
void TransferService::handle_callback(const std::string& body, const std::string& signature) {
  impl_->handle_callback(body, signature);
}
bool TransferService::idle() const { return impl_->idle(); }

}  // namespace streamkit::transfer
