#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "streamkit/error.hpp"
#include "streamkit/jobs/api.hpp"
#include "streamkit/transfer/fsm.hpp"

namespace streamkit::transfer {

class TransferError : public Error {
 public:
  using Error::Error;
};
class UnknownTransfer final : public TransferError {
 public:
  using TransferError::TransferError;
};
class CancelConflict final : public TransferError {
 public:
  using TransferError::TransferError;
};
class BadSignature final : public TransferError {
 public:
  using TransferError::TransferError;
};

// Raised by create() with the accumulated config problems (maps to 422).
class RequestInvalid final : public TransferError {
 public:
  explicit RequestInvalid(nlohmann::json errors)
      : TransferError("transfer request invalid"), errors_(std::move(errors)) {}
  const nlohmann::json& errors() const { return errors_; }

 private:
  nlohmann::json errors_;
};

struct TransferServiceConfig {
  std::filesystem::path work_dir;  // job store + per-transfer files live here

  std::string api_host = "127.0.0.1";
  int api_port = 0;
  std::optional<jobs::TlsFiles> tls;  // mutual TLS for the /transfers routes

  // Job callbacks arrive on a separate localhost listener, authenticated by
  // HMAC rather than client certificates.
  std::string callback_host = "127.0.0.1";
  int callback_port = 0;

  // How workers are launched: the streamer binary and the host consumers
  // should be told to dial for egress.
  std::string streamer_path = "streamer";
  std::string advertise_host = "127.0.0.1";

  std::chrono::milliseconds drain_timeout{10000};
  double backend_duration_scale = 60.0;  // tests shrink job duration units
  std::uint64_t job_duration = 60;

  identity::AccessLog* access_log = nullptr;
};

// Accepts a pipeline configuration, provisions a relay, launches the
// streaming job through the job store, and drives the transfer FSM from job
// callbacks and user actions.
//
//   POST   /transfers      typed JSON {config, worker_count, relay{...}}
//   GET    /transfers/{id}
//   DELETE /transfers/{id}
//   POST   /callbacks      job state changes (HMAC signed)
class TransferService {
 public:
  explicit TransferService(TransferServiceConfig config);
  ~TransferService();

  void start();
  void stop();

  int api_port() const;
  int callback_port() const;

  // The HTTP layer is a thin wrapper over these.
  std::string create(const nlohmann::json& request);  // throws RequestInvalid
  nlohmann::json get(const std::string& id) const;    // throws UnknownTransfer
  void cancel(const std::string& id);  // throws UnknownTransfer / CancelConflict
  void handle_callback(const std::string& body,
                       const std::string& signature);  // throws BadSignature / UnknownTransfer

  // Test support: true once every transfer reached a terminal state and its
  // relay is gone.
  bool idle() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace streamkit::transfer
