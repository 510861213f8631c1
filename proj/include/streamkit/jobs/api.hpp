#pragma once

#include <memory>
#include <optional>
#include <string>

#include "streamkit/identity/access_log.hpp"
#include "streamkit/jobs/jobs.hpp"
#include "streamkit/jobs/runner.hpp"

namespace streamkit::identity {
class SignatureDb;
}

namespace streamkit::jobs {

struct TlsFiles {
  std::string cert;     // server certificate chain PEM
  std::string key;      // server private key PEM
  std::string peer_ca;  // pinned issuer for client certificates
};

struct ApiOptions {
  std::string host = "127.0.0.1";
  int port = 0;  // 0 picks an ephemeral port

  // Mutual TLS when set; otherwise plain HTTP (dev / behind a proxy).
  std::optional<TlsFiles> tls;
  // Trusted reverse-proxy identity header (only sensible when the proxy
  // itself is authenticated, e.g. plain HTTP on localhost behind it).
  std::optional<std::string> proxy_identity_header;

  identity::AccessLog* access_log = nullptr;
  identity::SignatureDb* signature_db = nullptr;  // revocation checks when set
};

// REST face of the store:
//   POST   /jobs                    create        -> {"jobid": ...} | 422
//   GET    /jobs                    flat list across backends
//   GET    /jobs/{id}               spec + state history
//   DELETE /jobs/{id}               cancel        -> 200 | 404 | 409
//   GET    /jobs/{id}/logs/{ndx}?stream=out|err&tail=N
class JobsApi {
 public:
  JobsApi(Store& store, LocalRunner* runner, ApiOptions options);
  ~JobsApi();

  void start();  // binds and serves on a background thread
  void stop();
  int port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace streamkit::jobs
