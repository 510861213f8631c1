#include "streamkit/jobs/api.hpp"

#include <openssl/ssl.h>
#include <openssl/x509.h>

#include <fstream>
#include <sstream>
#include <thread>

#include "streamkit/http.hpp"
#include "streamkit/identity/identity.hpp"

namespace streamkit::jobs {

using nlohmann::json;

namespace {

json errors_to_json(const std::vector<FieldError>& errors) {
  json out = json::array();
  for (const auto& e : errors) out.push_back({{"path", e.path}, {"message", e.message}});
  return {{"errors", out}};
}

std::string tail_lines(const std::string& text, std::size_t n) {
  if (n == 0) return {};
  std::size_t pos = text.size();
  std::size_t lines = 0;
  // Skip one trailing newline so "a\nb\n" tails as {a, b}.
  if (pos > 0 && text[pos - 1] == '\n') --pos;
  while (pos > 0 && lines < n) {
    const std::size_t prev = text.rfind('\n', pos - 1);
    if (prev == std::string::npos) {
      pos = 0;
      break;
    }
    ++lines;
    if (lines == n) {
      pos = prev + 1;
      break;
    }
    pos = prev;
  }
  return text.substr(pos);
}

}  // namespace

struct JobsApi::Impl {
  Store& store;
  LocalRunner* runner;
  ApiOptions options;
  std::unique_ptr<httplib::Server> server;
  std::thread thread;
  int bound_port = 0;

  Impl(Store& s, LocalRunner* r, ApiOptions o) : store(s), runner(r), options(std::move(o)) {}

  // Peer identity: client certificate CN under mutual TLS, or the proxy
  // header when configured. Revoked certificates are rejected here.
  std::optional<std::string> authenticate(const httplib::Request& req, httplib::Response& res) {
    std::string peer;
    if (req.ssl) {
      X509* cert = SSL_get1_peer_certificate(req.ssl);
      if (cert) {
        identity::CertPtr leaf(cert);
        peer = identity::cert_common_name(leaf.get());
        if (options.signature_db) {
          std::uint64_t serial = 0;
          ASN1_INTEGER_get_uint64(&serial, X509_get0_serialNumber(leaf.get()));
          if (auto record = options.signature_db->find(serial); record && record->revoked) {
            res.status = 401;
            res.set_content(json({{"error", "certificate revoked"}}).dump(), "application/json");
            return std::nullopt;
          }
        }
      }
    } else if (options.proxy_identity_header && req.has_header(*options.proxy_identity_header)) {
      peer = req.get_header_value(*options.proxy_identity_header);
    }
    return peer;
  }

  void log(const std::string& peer, const httplib::Request& req, int status) {
    if (options.access_log) options.access_log->record(peer, req.method, req.path, status);
  }

  void route(httplib::Server& s) {
    s.Post("/jobs", [this](const httplib::Request& req, httplib::Response& res) {
      auto peer = authenticate(req, res);
      if (!peer) return log("", req, res.status);
      const json doc = json::parse(req.body, nullptr, false);
      if (doc.is_discarded()) {
        res.status = 422;
        res.set_content(errors_to_json({{"", "body is not valid JSON"}}).dump(),
                        "application/json");
        return log(*peer, req, res.status);
      }
      try {
        const JobSpec spec = JobSpec::from_json(doc);
        const std::string jobid = store.create(spec);
        if (runner) runner->poke();
        res.set_content(json({{"jobid", jobid}}).dump(), "application/json");
      } catch (const ValidationError& e) {
        res.status = 422;
        res.set_content(errors_to_json(e.errors()).dump(), "application/json");
      }
      log(*peer, req, res.status);
    });

    s.Get("/jobs", [this](const httplib::Request& req, httplib::Response& res) {
      auto peer = authenticate(req, res);
      if (!peer) return log("", req, res.status);
      json out = json::array();
      for (const auto& jobid : store.list()) {
        try {
          const auto cur = store.current(jobid);
          const auto spec = store.spec(jobid);
          out.push_back({{"jobid", jobid},
                         {"name", spec.name},
                         {"backend", spec.backend},
                         {"state", std::string(state_name(cur.state))},
                         {"jobndx", cur.jobndx}});
        } catch (const Error&) {
        }
      }
      res.set_content(out.dump(), "application/json");
      log(*peer, req, res.status);
    });

    s.Get(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto peer = authenticate(req, res);
      if (!peer) return log("", req, res.status);
      const std::string jobid = req.matches[1];
      try {
        json hist = json::array();
        for (const auto& line : store.history(jobid)) {
          hist.push_back({{"t", line.t},
                          {"state", std::string(state_name(line.state))},
                          {"info", line.info},
                          {"jobndx", line.jobndx}});
        }
        res.set_content(
            json({{"jobid", jobid}, {"spec", store.spec(jobid).to_json()}, {"history", hist}})
                .dump(),
            "application/json");
      } catch (const UnknownJob&) {
        res.status = 404;
        res.set_content(json({{"error", "no job " + jobid}}).dump(), "application/json");
      }
      log(*peer, req, res.status);
    });

    s.Delete(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto peer = authenticate(req, res);
      if (!peer) return log("", req, res.status);
      const std::string jobid = req.matches[1];
      try {
        store.cancel(jobid);
        res.set_content(json({{"jobid", jobid}, {"state", "canceled"}}).dump(),
                        "application/json");
      } catch (const UnknownJob&) {
        res.status = 404;
        res.set_content(json({{"error", "no job " + jobid}}).dump(), "application/json");
      } catch (const IllegalTransition& e) {
        res.status = 409;
        res.set_content(json({{"error", e.what()}}).dump(), "application/json");
      }
      log(*peer, req, res.status);
    });

    s.Get(R"(/jobs/([^/]+)/logs/(\d+))",
          [this](const httplib::Request& req, httplib::Response& res) {
            auto peer = authenticate(req, res);
            if (!peer) return log("", req, res.status);
            const std::string jobid = req.matches[1];
            const std::uint64_t ndx = std::stoull(req.matches[2]);
            const std::string stream = req.get_param_value("stream").empty()
                                           ? "out"
                                           : req.get_param_value("stream");
            if (stream != "out" && stream != "err") {
              res.status = 422;
              res.set_content(json({{"error", "stream must be out or err"}}).dump(),
                              "application/json");
              return log(*peer, req, res.status);
            }
            try {
              store.current(jobid);  // 404 for unknown jobs
            } catch (const UnknownJob&) {
              res.status = 404;
              res.set_content(json({{"error", "no job " + jobid}}).dump(), "application/json");
              return log(*peer, req, res.status);
            }
            std::ifstream in(store.log_path(jobid, ndx, stream), std::ios::binary);
            if (!in) {
              res.status = 404;
              res.set_content(json({{"error", "no log " + std::to_string(ndx)}}).dump(),
                              "application/json");
              return log(*peer, req, res.status);
            }
            std::ostringstream text;
            text << in.rdbuf();
            std::string body = text.str();
            if (!req.get_param_value("tail").empty()) {
              body = tail_lines(body, std::stoul(req.get_param_value("tail")));
            }
            res.set_content(body, "text/plain");
            log(*peer, req, res.status);
          });
  }

  void start() {
    if (options.tls) {
      auto ssl = std::make_unique<httplib::SSLServer>(options.tls->cert.c_str(),
                                                      options.tls->key.c_str(),
                                                      options.tls->peer_ca.c_str());
      if (!ssl->is_valid()) throw JobError("TLS configuration invalid for jobs API");
      server = std::move(ssl);
    } else {
      server = std::make_unique<httplib::Server>();
    }
    route(*server);
    bound_port = options.port;
    if (options.port == 0) {
      bound_port = server->bind_to_any_port(options.host);
      if (bound_port <= 0) throw JobError("jobs API bind failed on " + options.host);
    } else if (!server->bind_to_port(options.host, options.port)) {
      throw JobError("jobs API bind failed on " + options.host + ":" +
                     std::to_string(options.port));
    }
    thread = std::thread([this] { server->listen_after_bind(); });
    server->wait_until_ready();
  }

  void stop() {
    if (server) server->stop();
    if (thread.joinable()) thread.join();
  }
};

JobsApi::JobsApi(Store& store, LocalRunner* runner, ApiOptions options)
    : impl_(std::make_unique<Impl>(store, runner, std::move(options))) {}

JobsApi::~JobsApi() {
  if (impl_) impl_->stop();
}

void JobsApi::start() { impl_->start(); }
void JobsApi::stop() { impl_->stop(); }
int JobsApi::port() const { return impl_->bound_port; }

}  // namespace streamkit::jobs
