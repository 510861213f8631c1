#pragma once

#include <condition_variable>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "streamkit/jobs/jobs.hpp"

namespace streamkit::jobs {

// Executes queued local-backend jobs: scripts/run under sh, stdout/stderr to
// log/<ndx>.{out,err}, duration enforced with TERM then KILL. Registers
// itself as the store's canceler.
class LocalRunner {
 public:
  explicit LocalRunner(Store& store, int slots = 4);
  ~LocalRunner();

  // Background scan loop picking up queued jobs, bounded by the slot count.
  void start();
  void stop();

  // Runs one queued job to its terminal state on the calling thread.
  void run_job(const std::string& jobid);

  // Kills the job's process if this runner owns it; the runner then records
  // canceled. Returns false for jobs it is not running.
  bool cancel_job(const std::string& jobid);

  void poke();  // wake the scan loop (a job was just created)

 private:
  void scan_loop();

  Store& store_;
  int slots_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, pid_t> running_;      // jobid -> child pid
  std::map<std::string, bool> cancel_flags_;  // jobid -> cancel requested
  std::set<std::string> claimed_;
  int active_ = 0;
  bool stopping_ = false;
  std::thread scanner_;
  std::vector<std::thread> workers_;
};

}  // namespace streamkit::jobs
