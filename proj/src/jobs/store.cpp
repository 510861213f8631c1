#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <condition_variable>
#include <deque>
#include <fstream>
#include <thread>

#include "streamkit/http.hpp"
#include "streamkit/identity/hmac.hpp"
#include "streamkit/jobs/jobs.hpp"

namespace streamkit::jobs {

namespace fs = std::filesystem;
using nlohmann::json;

ValidationError::ValidationError(std::vector<FieldError> errors)
    : JobError("validation failed (" + std::to_string(errors.size()) + " problems)"),
      errors_(std::move(errors)) {}

// ---------------------------------------------------------------------------
// Documents
// ---------------------------------------------------------------------------

json JobSpec::to_json() const {
  json j;
  j["name"] = name;
  if (directory) j["directory"] = *directory;
  j["script"] = script;
  j["resources"] = {{"duration", resources.duration},
                    {"node_count", resources.node_count},
                    {"processes_per_node", resources.processes_per_node},
                    {"cpu_cores_per_process", resources.cpu_cores_per_process}};
  j["backend"] = backend;
  if (callback) j["callback"] = *callback;
  if (cb_secret) j["cb_secret"] = *cb_secret;
  return j;
}

namespace {

void check_keys(const json& obj, const std::string& at,
                std::initializer_list<std::string_view> allowed, std::vector<FieldError>& errors) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    bool known = false;
    for (auto a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) errors.push_back({at + key, "unknown field"});
  }
}

}  // namespace

JobSpec JobSpec::from_json(const json& doc) {
  std::vector<FieldError> errors;
  if (!doc.is_object()) throw ValidationError(std::vector<FieldError>{{"", "expected a JSON object"}});
  check_keys(doc, "",
             {"name", "directory", "script", "resources", "backend", "callback", "cb_secret"},
             errors);

  JobSpec spec;
  auto str = [&](const char* key, bool required) -> std::optional<std::string> {
    if (!doc.contains(key)) {
      if (required) errors.push_back({key, "missing required field"});
      return std::nullopt;
    }
    if (!doc.at(key).is_string()) {
      errors.push_back({key, "expected a string"});
      return std::nullopt;
    }
    return doc.at(key).get<std::string>();
  };
  if (auto v = str("name", true)) spec.name = *v;
  spec.directory = str("directory", false);
  if (auto v = str("script", true)) spec.script = *v;
  if (auto v = str("backend", true)) spec.backend = *v;
  spec.callback = str("callback", false);
  spec.cb_secret = str("cb_secret", false);

  if (doc.contains("resources")) {
    const json& r = doc.at("resources");
    if (!r.is_object()) {
      errors.push_back({"resources", "expected a mapping"});
    } else {
      check_keys(r, "resources/",
                 {"duration", "node_count", "processes_per_node", "cpu_cores_per_process"},
                 errors);
      auto uint_field = [&](const char* key, std::uint64_t& out) {
        if (!r.contains(key)) return;
        const auto& v = r.at(key);
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                       v.get<std::int64_t>() < 0)) {
          errors.push_back({std::string("resources/") + key, "expected a non-negative integer"});
          return;
        }
        out = v.get<std::uint64_t>();
      };
      uint_field("duration", spec.resources.duration);
      uint_field("node_count", spec.resources.node_count);
      uint_field("processes_per_node", spec.resources.processes_per_node);
      uint_field("cpu_cores_per_process", spec.resources.cpu_cores_per_process);
    }
  }

  if (!errors.empty()) throw ValidationError(std::move(errors));
  return spec;
}

json Callback::to_json() const {
  return {{"jobid", jobid},
          {"jobndx", jobndx},
          {"state", std::string(state_name(state))},
          {"info", info}};
}

Callback Callback::from_json(const json& doc) {
  std::vector<FieldError> errors;
  if (!doc.is_object()) throw ValidationError(std::vector<FieldError>{{"", "expected a JSON object"}});
  check_keys(doc, "", {"jobid", "jobndx", "state", "info"}, errors);
  Callback cb;
  if (!doc.contains("jobid") || !doc.at("jobid").is_string()) {
    errors.push_back({"jobid", "missing or non-string"});
  } else {
    cb.jobid = doc.at("jobid").get<std::string>();
  }
  if (!doc.contains("jobndx") || !doc.at("jobndx").is_number_integer() ||
      (!doc.at("jobndx").is_number_unsigned() && doc.at("jobndx").get<std::int64_t>() < 0)) {
    errors.push_back({"jobndx", "missing or non-integer"});
  } else {
    cb.jobndx = doc.at("jobndx").get<std::uint64_t>();
  }
  if (!doc.contains("state") || !doc.at("state").is_string()) {
    errors.push_back({"state", "missing or non-string"});
  } else if (auto s = state_from_name(doc.at("state").get<std::string>())) {
    cb.state = *s;
  } else {
    errors.push_back({"state", "unknown state \"" + doc.at("state").get<std::string>() + "\""});
  }
  if (!doc.contains("info") || !doc.at("info").is_number_integer()) {
    errors.push_back({"info", "missing or non-integer"});
  } else {
    cb.info = doc.at("info").get<int>();
  }
  if (!errors.empty()) throw ValidationError(std::move(errors));
  return cb;
}

// ---------------------------------------------------------------------------
// States
// ---------------------------------------------------------------------------

std::string_view state_name(JobState s) {
  switch (s) {
    case JobState::queued:
      return "queued";
    case JobState::active:
      return "active";
    case JobState::completed:
      return "completed";
    case JobState::canceled:
      return "canceled";
    case JobState::failed:
      return "failed";
  }
  return "?";
}

std::optional<JobState> state_from_name(std::string_view name) {
  for (JobState s : {JobState::queued, JobState::active, JobState::completed, JobState::canceled,
                     JobState::failed}) {
    if (state_name(s) == name) return s;
  }
  return std::nullopt;
}

bool is_terminal(JobState s) {
  return s == JobState::completed || s == JobState::canceled || s == JobState::failed;
}

bool can_transition(JobState from, JobState to) {
  switch (from) {
    case JobState::queued:
      return to == JobState::active || to == JobState::canceled;
    case JobState::active:
      return to == JobState::completed || to == JobState::canceled || to == JobState::failed;
    default:
      return false;
  }
}

// ---------------------------------------------------------------------------
// Callback delivery: one FIFO worker so callbacks leave in transition order
// ---------------------------------------------------------------------------

struct Store::CallbackQueue {
  struct Item {
    std::string url;
    std::string body;
    std::string secret;
  };

  CallbackQueue() : worker([this] { run(); }) {}

  ~CallbackQueue() {
    {
      std::lock_guard lock(mu);
      stopping = true;
    }
    cv.notify_all();
    if (worker.joinable()) worker.join();
  }

  void push(Item item) {
    {
      std::lock_guard lock(mu);
      queue.push_back(std::move(item));
    }
    cv.notify_all();
  }

  void flush() {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return (queue.empty() && !busy) || stopping; });
  }

  void run() {
    while (true) {
      Item item;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return !queue.empty() || stopping; });
        if (queue.empty()) return;
        item = std::move(queue.front());
        queue.pop_front();
        busy = true;
      }
      deliver(item);
      {
        std::lock_guard lock(mu);
        busy = false;
      }
      cv.notify_all();
    }
  }

  void deliver(const Item& item) {
    // scheme://host:port/path
    const auto scheme_end = item.url.find("://");
    if (scheme_end == std::string::npos) return;
    const auto path_start = item.url.find('/', scheme_end + 3);
    const std::string base = item.url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : item.url.substr(path_start);

    const std::string signature = identity::sign_body(item.secret, item.body);
    for (int attempt = 0; attempt < 3; ++attempt) {
      {
        std::lock_guard lock(mu);
        if (stopping) return;
      }
      httplib::Client client(base);
      client.set_connection_timeout(2, 0);
      httplib::Headers headers = {{"X-Psk-Signature", signature}};
      auto res = client.Post(path, headers, item.body, "application/json");
      if (res && res->status < 500) return;  // delivered (or rejected: no point retrying 4xx)
      std::this_thread::sleep_for(std::chrono::milliseconds(200 * (attempt + 1)));
    }
    // Delivery failure never blocks the job; note it and move on.
    std::fprintf(stderr, "callback delivery to %s failed after 3 attempts\n", item.url.c_str());
  }

  std::mutex mu;
  std::condition_variable cv;
  std::deque<Item> queue;
  bool stopping = false;
  bool busy = false;
  std::thread worker;
};

// ---------------------------------------------------------------------------
// Store
// ---------------------------------------------------------------------------

Store::Store(fs::path root, std::map<std::string, BackendConfig> backends)
    : root_(std::move(root)),
      backends_(std::move(backends)),
      callbacks_(std::make_unique<CallbackQueue>()) {
  fs::create_directories(root_ / "jobs");
}

Store::~Store() = default;

void Store::set_canceler(std::function<bool(const std::string&)> canceler) {
  canceler_ = std::move(canceler);
}

void Store::flush_callbacks() { callbacks_->flush(); }

std::unique_lock<std::mutex> Store::lock_job(const std::string& jobid) const {
  std::lock_guard lock(locks_mu_);
  auto& slot = job_locks_[jobid];
  if (!slot) slot = std::make_unique<std::mutex>();
  return std::unique_lock<std::mutex>(*slot);
}

fs::path Store::job_dir(const std::string& jobid) const { return root_ / "jobs" / jobid; }
fs::path Store::script_path(const std::string& jobid) const {
  return job_dir(jobid) / "scripts" / "run";
}
fs::path Store::work_dir(const std::string& jobid) const { return job_dir(jobid) / "work"; }

fs::path Store::log_path(const std::string& jobid, std::uint64_t ndx,
                         const std::string& stream) const {
  return job_dir(jobid) / "log" / (std::to_string(ndx) + "." + stream);
}

const BackendConfig& Store::backend(const std::string& nickname) const {
  auto it = backends_.find(nickname);
  if (it == backends_.end()) throw JobError("unknown backend nickname \"" + nickname + "\"");
  return it->second;
}

std::vector<FieldError> Store::validate(const JobSpec& spec,
                                        const std::map<std::string, BackendConfig>& backends) {
  std::vector<FieldError> errors;
  if (spec.name.empty()) errors.push_back({"name", "must not be empty"});
  if (spec.script.empty()) errors.push_back({"script", "must not be empty"});
  if (spec.resources.duration < 1) errors.push_back({"resources/duration", "must be >= 1"});
  if (spec.resources.node_count < 1) errors.push_back({"resources/node_count", "must be >= 1"});
  if (spec.resources.processes_per_node < 1) {
    errors.push_back({"resources/processes_per_node", "must be >= 1"});
  }
  if (spec.resources.cpu_cores_per_process < 1) {
    errors.push_back({"resources/cpu_cores_per_process", "must be >= 1"});
  }
  if (!backends.contains(spec.backend)) {
    std::string known;
    for (const auto& [nick, b] : backends) {
      if (!known.empty()) known += ", ";
      known += nick;
    }
    errors.push_back({"backend", "unknown backend nickname \"" + spec.backend +
                                     "\" (configured: " + known + ")"});
  }
  if (spec.callback && !spec.cb_secret) {
    errors.push_back({"cb_secret", "required when callback is set"});
  }
  return errors;
}

std::string Store::create(const JobSpec& spec) {
  auto errors = validate(spec, backends_);
  if (!errors.empty()) throw ValidationError(std::move(errors));
  const BackendConfig& be = backend(spec.backend);

  std::string jobid;
  {
    std::lock_guard lock(id_mu_);
    const std::int64_t now = static_cast<std::int64_t>(::time(nullptr));
    if (now != last_second_) {
      last_second_ = now;
      counter_ = 0;
    }
    do {
      ++counter_;
      jobid = std::to_string(now) + "." + std::to_string(counter_);
    } while (fs::exists(job_dir(jobid)));
  }

  const fs::path dir = job_dir(jobid);
  fs::create_directories(dir / "log");
  fs::create_directories(dir / "work");
  fs::create_directories(dir / "scripts");

  {
    std::ofstream out(dir / "spec.json", std::ios::trunc);
    out << spec.to_json().dump(2) << "\n";
  }

  std::string script;
  if (be.type == "slurm-script") {
    script = emit_slurm_script(spec, be, jobid);
  } else {
    const std::string cwd = spec.directory.value_or(work_dir(jobid).string());
    script = "#!/bin/sh\ncd '" + cwd + "' || exit 125\n" + spec.script + "\n";
  }
  {
    std::ofstream out(script_path(jobid), std::ios::trunc);
    out << script;
  }
  fs::permissions(script_path(jobid),
                  fs::perms::owner_all | fs::perms::group_read | fs::perms::others_read);

  auto lock = lock_job(jobid);
  append_status(jobid, JobState::queued, 0, 0);
  fire_callback(jobid, JobState::queued, 0, 0);
  return jobid;
}

void Store::require_exists(const std::string& jobid) const {
  if (!fs::exists(job_dir(jobid) / "status.jsonl")) {
    throw UnknownJob("no job " + jobid);
  }
}

JobSpec Store::spec(const std::string& jobid) const {
  require_exists(jobid);
  std::ifstream in(job_dir(jobid) / "spec.json");
  return JobSpec::from_json(json::parse(in));
}

std::vector<StatusLine> Store::history(const std::string& jobid) const {
  require_exists(jobid);
  std::ifstream in(job_dir(jobid) / "status.jsonl");
  std::vector<StatusLine> lines;
  std::string text;
  while (std::getline(in, text)) {
    if (text.empty()) continue;
    const json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) continue;  // torn tail after a crash
    StatusLine line;
    line.t = j.at("t").get<double>();
    line.state = *state_from_name(j.at("state").get<std::string>());
    line.info = j.at("info").get<int>();
    line.jobndx = j.at("jobndx").get<std::uint64_t>();
    lines.push_back(line);
  }
  return lines;
}

StatusLine Store::current(const std::string& jobid) const {
  auto lines = history(jobid);
  if (lines.empty()) throw UnknownJob("no status for " + jobid);
  return lines.back();
}

std::vector<std::string> Store::list() const {
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(root_ / "jobs")) {
    if (entry.is_directory()) ids.push_back(entry.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

void Store::append_status(const std::string& jobid, JobState state, int info, std::uint64_t ndx) {
  const json j = {{"t", std::chrono::duration<double>(
                            std::chrono::system_clock::now().time_since_epoch())
                            .count()},
                  {"state", std::string(state_name(state))},
                  {"info", info},
                  {"jobndx", ndx}};
  std::string line = j.dump() + "\n";
  // One O_APPEND write per line: concurrent appends never interleave and a
  // crash can only truncate the final line.
  const fs::path path = job_dir(jobid) / "status.jsonl";
  const int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw JobError("cannot append to " + path.string());
  // A torn line from a crash must not swallow this append: start on a fresh
  // line when the file does not end with a newline.
  struct stat st{};
  if (::fstat(fd, &st) == 0 && st.st_size > 0) {
    char last = 0;
    if (::pread(fd, &last, 1, st.st_size - 1) == 1 && last != '\n') {
      line.insert(line.begin(), '\n');
    }
  }
  const ssize_t n = ::write(fd, line.data(), line.size());
  ::close(fd);
  if (n != static_cast<ssize_t>(line.size())) {
    throw JobError("short status append for " + jobid);
  }
}

void Store::fire_callback(const std::string& jobid, JobState state, int info, std::uint64_t ndx) {
  JobSpec s;
  try {
    s = spec(jobid);
  } catch (const Error&) {
    return;
  }
  if (!s.callback || !s.cb_secret) return;
  Callback cb;
  cb.jobid = jobid;
  cb.jobndx = ndx;
  cb.state = state;
  cb.info = info;
  callbacks_->push({*s.callback, cb.to_json().dump(), *s.cb_secret});
}

void Store::reached(const std::string& jobid, JobState state, int info) {
  auto lock = lock_job(jobid);
  require_exists(jobid);
  const StatusLine cur = current(jobid);
  if (!can_transition(cur.state, state)) {
    throw IllegalTransition("job " + jobid + ": " + std::string(state_name(cur.state)) +
                            " -> " + std::string(state_name(state)) + " is not legal");
  }
  append_status(jobid, state, info, cur.jobndx);
  fire_callback(jobid, state, info, cur.jobndx);
}

void Store::cancel(const std::string& jobid) {
  auto lock = lock_job(jobid);
  require_exists(jobid);
  const StatusLine cur = current(jobid);
  if (is_terminal(cur.state)) {
    throw IllegalTransition("job " + jobid + " is already terminal (" +
                            std::string(state_name(cur.state)) + ")");
  }
  if (cur.state == JobState::queued) {
    append_status(jobid, JobState::canceled, 0, cur.jobndx);
    fire_callback(jobid, JobState::canceled, 0, cur.jobndx);
    return;
  }
  // Active: hand the kill to the runner when it owns the process.
  lock.unlock();
  if (canceler_ && canceler_(jobid)) return;
  // Nothing is running it (e.g. orphaned after a restart): record directly.
  lock.lock();
  const StatusLine again = current(jobid);
  if (again.state == JobState::active) {
    append_status(jobid, JobState::canceled, 0, again.jobndx);
    fire_callback(jobid, JobState::canceled, 0, again.jobndx);
  }
}

std::uint64_t Store::rerun(const std::string& jobid) {
  auto lock = lock_job(jobid);
  require_exists(jobid);
  const StatusLine cur = current(jobid);
  if (!is_terminal(cur.state)) {
    throw IllegalTransition("job " + jobid + " is still " +
                            std::string(state_name(cur.state)) + "; rerun needs a terminal job");
  }
  const std::uint64_t ndx = cur.jobndx + 1;
  append_status(jobid, JobState::queued, 0, ndx);
  fire_callback(jobid, JobState::queued, 0, ndx);
  return ndx;
}

}  // namespace streamkit::jobs
