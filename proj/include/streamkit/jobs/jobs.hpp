#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "streamkit/error.hpp"

namespace streamkit::jobs {

class JobError : public Error {
 public:
  using Error::Error;
};

class UnknownJob final : public JobError {
 public:
  using JobError::JobError;
};

class IllegalTransition final : public JobError {
 public:
  using JobError::JobError;
};

struct FieldError {
  std::string path;
  std::string message;
};

class ValidationError final : public JobError {
 public:
  explicit ValidationError(std::vector<FieldError> errors);
  const std::vector<FieldError>& errors() const { return errors_; }

 private:
  std::vector<FieldError> errors_;
};

// ---------------------------------------------------------------------------
// Documents
// ---------------------------------------------------------------------------

struct Resources {
  std::uint64_t duration = 60;  // minutes
  std::uint64_t node_count = 1;
  std::uint64_t processes_per_node = 1;
  std::uint64_t cpu_cores_per_process = 1;
};

struct JobSpec {
  std::string name;
  std::optional<std::string> directory;
  std::string script;
  Resources resources;
  std::string backend;
  std::optional<std::string> callback;   // POSTed to on state change
  std::optional<std::string> cb_secret;  // HMAC key for callback bodies

  nlohmann::json to_json() const;
  // Strict: unknown fields and wrong types are validation errors with paths.
  static JobSpec from_json(const nlohmann::json& doc);
};

enum class JobState { queued, active, completed, canceled, failed };

std::string_view state_name(JobState s);
std::optional<JobState> state_from_name(std::string_view name);
bool is_terminal(JobState s);
// queued -> {active, canceled}; active -> {completed, canceled, failed}.
bool can_transition(JobState from, JobState to);

// Spawn/timeout info codes (exit codes are >= 0; signals are 128 + sig).
inline constexpr int kInfoSpawnFailure = -1;
inline constexpr int kInfoTimeout = -2;

struct StatusLine {
  double t = 0;  // unix seconds
  JobState state = JobState::queued;
  int info = 0;
  std::uint64_t jobndx = 0;
};

struct Callback {
  std::string jobid;
  std::uint64_t jobndx = 0;
  JobState state = JobState::queued;
  int info = 0;

  nlohmann::json to_json() const;
  static Callback from_json(const nlohmann::json& doc);
};

struct BackendConfig {
  std::string nickname;
  std::string type;  // "local" | "slurm-script"
  std::string queue_name;
  std::string project_name;
  // Seconds per duration unit; production is minutes, tests shrink it.
  double duration_scale = 60.0;
  int grace_seconds = 5;  // TERM -> KILL when canceling or timing out
};

// ---------------------------------------------------------------------------
// The file-backed store
// ---------------------------------------------------------------------------
//
// jobs/<JobID>/
//   spec.json
//   status.jsonl       one {"t","state","info","jobndx"} object per line
//   log/<ndx>.out, log/<ndx>.err
//   work/
//   scripts/run
//

class Store {
 public:
  Store(std::filesystem::path root, std::map<std::string, BackendConfig> backends);
  ~Store();

  std::string create(const JobSpec& spec);

  JobSpec spec(const std::string& jobid) const;
  std::vector<StatusLine> history(const std::string& jobid) const;
  StatusLine current(const std::string& jobid) const;
  std::vector<std::string> list() const;  // all job ids, ascending

  // Appends a state change; illegal transitions throw IllegalTransition and
  // leave the history untouched. Fires the job's callback (async, ordered).
  void reached(const std::string& jobid, JobState state, int info);

  // queued -> canceled without running; active -> the registered canceler
  // kills the process (the runner then records canceled); terminal -> error.
  void cancel(const std::string& jobid);

  // Re-queues a terminal job under the next run index. Returns the new ndx.
  std::uint64_t rerun(const std::string& jobid);

  const BackendConfig& backend(const std::string& nickname) const;
  const std::map<std::string, BackendConfig>& backends() const { return backends_; }

  std::filesystem::path root() const { return root_; }
  std::filesystem::path job_dir(const std::string& jobid) const;
  std::filesystem::path log_path(const std::string& jobid, std::uint64_t ndx,
                                 const std::string& stream) const;
  std::filesystem::path script_path(const std::string& jobid) const;
  std::filesystem::path work_dir(const std::string& jobid) const;

  // The local runner registers this; it returns true when it owns the job's
  // process and will record the cancel itself after the kill.
  void set_canceler(std::function<bool(const std::string&)> canceler);

  // Serializes mutation per job id.
  std::unique_lock<std::mutex> lock_job(const std::string& jobid) const;

  // Waits until every queued callback POST has been attempted.
  void flush_callbacks();

  static std::vector<FieldError> validate(const JobSpec& spec,
                                          const std::map<std::string, BackendConfig>& backends);

 private:
  void append_status(const std::string& jobid, JobState state, int info, std::uint64_t ndx);
  void fire_callback(const std::string& jobid, JobState state, int info, std::uint64_t ndx);
  void require_exists(const std::string& jobid) const;

  std::filesystem::path root_;
  std::map<std::string, BackendConfig> backends_;
  std::function<bool(const std::string&)> canceler_;

  mutable std::mutex locks_mu_;
  mutable std::map<std::string, std::unique_ptr<std::mutex>> job_locks_;

  std::mutex id_mu_;
  std::int64_t last_second_ = 0;
  std::uint64_t counter_ = 0;

  struct CallbackQueue;
  std::unique_ptr<CallbackQueue> callbacks_;
};

// Deterministic batch script with scheduler directives for the resources
// and queue, wrapping the user script between state notifications. Emission
// only; nothing here submits it.
std::string emit_slurm_script(const JobSpec& spec, const BackendConfig& backend,
                              const std::string& jobid);

}  // namespace streamkit::jobs
