#include "streamkit/jobs/runner.hpp"

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>

extern char** environ;

namespace streamkit::jobs {

namespace {

// waitpid with a deadline; returns true when the child exited, false on
// timeout (status untouched).
bool wait_with_deadline(pid_t pid, int* status, std::chrono::steady_clock::time_point deadline) {
  while (true) {
    const pid_t r = ::waitpid(pid, status, WNOHANG);
    if (r == pid) return true;
    if (std::chrono::steady_clock::now() >= deadline) return false;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

void kill_tree(pid_t pid, int sig) {
  // The child leads its own process group, so signal the whole group.
  ::kill(-pid, sig);
  ::kill(pid, sig);
}

}  // namespace

LocalRunner::LocalRunner(Store& store, int slots) : store_(store), slots_(slots) {
  store_.set_canceler([this](const std::string& jobid) { return cancel_job(jobid); });
}

LocalRunner::~LocalRunner() { stop(); }

void LocalRunner::start() {
  std::lock_guard lock(mu_);
  if (scanner_.joinable()) return;
  stopping_ = false;
  scanner_ = std::thread([this] { scan_loop(); });
}

void LocalRunner::stop() {
  {
    std::lock_guard lock(mu_);
    if (stopping_ && !scanner_.joinable()) return;
    stopping_ = true;
    for (auto& [jobid, pid] : running_) {
      cancel_flags_[jobid] = true;
      kill_tree(pid, SIGTERM);
    }
  }
  cv_.notify_all();
  if (scanner_.joinable()) scanner_.join();
  for (auto& w : workers_) {
    if (w.joinable()) w.join();
  }
  workers_.clear();
}

void LocalRunner::poke() { cv_.notify_all(); }

void LocalRunner::scan_loop() {
  while (true) {
    std::string next;
    {
      std::unique_lock lock(mu_);
      cv_.wait_for(lock, std::chrono::milliseconds(200), [&] { return stopping_; });
      if (stopping_) return;
      if (active_ >= slots_) continue;
    }
    for (const std::string& jobid : store_.list()) {
      try {
        if (store_.current(jobid).state != JobState::queued) continue;
        if (store_.backend(store_.spec(jobid).backend).type != "local") continue;
      } catch (const Error&) {
        continue;
      }
      {
        std::lock_guard lock(mu_);
        if (stopping_ || active_ >= slots_) break;
        if (claimed_.contains(jobid)) continue;
        claimed_.insert(jobid);
        ++active_;
      }
      workers_.emplace_back([this, jobid] {
        run_job(jobid);
        std::lock_guard lock(mu_);
        claimed_.erase(jobid);
        --active_;
      });
    }
  }
}

bool LocalRunner::cancel_job(const std::string& jobid) {
  pid_t pid = 0;
  {
    std::lock_guard lock(mu_);
    auto it = running_.find(jobid);
    if (it == running_.end()) return false;
    pid = it->second;
    cancel_flags_[jobid] = true;
  }
  kill_tree(pid, SIGTERM);
  return true;
}

void LocalRunner::run_job(const std::string& jobid) {
  const JobSpec spec = store_.spec(jobid);
  const BackendConfig& backend = store_.backend(spec.backend);

  std::uint64_t ndx = 0;
  {
    auto lock = store_.lock_job(jobid);
    const StatusLine cur = store_.current(jobid);
    if (cur.state != JobState::queued) return;
    ndx = cur.jobndx;
  }
  try {
    store_.reached(jobid, JobState::active, 0);
  } catch (const IllegalTransition&) {
    return;  // canceled between claim and start
  }

  const std::string script = store_.script_path(jobid).string();
  const std::string out_path = store_.log_path(jobid, ndx, "out").string();
  const std::string err_path = store_.log_path(jobid, ndx, "err").string();

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, STDIN_FILENO, "/dev/null", O_RDONLY, 0);
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, out_path.c_str(),
                                   O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, err_path.c_str(),
                                   O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawnattr_t attr;
  posix_spawnattr_init(&attr);
  posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
  posix_spawnattr_setpgroup(&attr, 0);  // own group, so cancel kills the tree

  const char* argv[] = {"/bin/sh", script.c_str(), nullptr};
  pid_t pid = 0;
  const int rc = ::posix_spawn(&pid, "/bin/sh", &actions, &attr, const_cast<char**>(argv),
                               environ);
  posix_spawn_file_actions_destroy(&actions);
  posix_spawnattr_destroy(&attr);
  if (rc != 0) {
    store_.reached(jobid, JobState::failed, kInfoSpawnFailure);
    return;
  }
  {
    std::lock_guard lock(mu_);
    running_[jobid] = pid;
  }

  const auto deadline =
      std::chrono::steady_clock::now() +
      std::chrono::milliseconds(static_cast<std::int64_t>(
          static_cast<double>(spec.resources.duration) * backend.duration_scale * 1000.0));

  int status = 0;
  bool timed_out = false;
  if (!wait_with_deadline(pid, &status, deadline)) {
    timed_out = true;
    kill_tree(pid, SIGTERM);
    const auto grace =
        std::chrono::steady_clock::now() + std::chrono::seconds(backend.grace_seconds);
    if (!wait_with_deadline(pid, &status, grace)) {
      kill_tree(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
    }
  }

  bool cancel_requested = false;
  {
    std::lock_guard lock(mu_);
    running_.erase(jobid);
    cancel_requested = cancel_flags_[jobid];
    cancel_flags_.erase(jobid);
  }

  try {
    if (cancel_requested) {
      store_.reached(jobid, JobState::canceled, WIFSIGNALED(status) ? WTERMSIG(status) : 0);
    } else if (timed_out) {
      store_.reached(jobid, JobState::failed, kInfoTimeout);
    } else if (WIFEXITED(status) && WEXITSTATUS(status) == 0) {
      store_.reached(jobid, JobState::completed, 0);
    } else if (WIFEXITED(status)) {
      store_.reached(jobid, JobState::failed, WEXITSTATUS(status));
    } else {
      store_.reached(jobid, JobState::failed, 128 + WTERMSIG(status));
    }
  } catch (const IllegalTransition&) {
    // A direct cancel beat us to the terminal state; nothing to record.
  }
}

}  // namespace streamkit::jobs
