#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "streamkit/jobs/jobs.hpp"
#include "streamkit/wire/config.hpp"

using namespace streamkit;

namespace {

std::map<std::string, jobs::BackendConfig> load_backends(const std::string& path) {
  std::map<std::string, jobs::BackendConfig> backends;
  if (path.empty()) {
    jobs::BackendConfig local;
    local.nickname = "local";
    local.type = "local";
    backends["local"] = local;
    return backends;
  }
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  std::ostringstream text;
  text << in.rdbuf();
  const auto doc = wire::parse_config_document(text.str());
  for (const auto& [nickname, b] : doc.items()) {
    jobs::BackendConfig cfg;
    cfg.nickname = nickname;
    cfg.type = b.value("type", "local");
    cfg.queue_name = b.value("queue_name", "");
    cfg.project_name = b.value("project_name", "");
    cfg.duration_scale = b.value("duration_scale", 60.0);
    cfg.grace_seconds = b.value("grace_seconds", 5);
    backends[nickname] = cfg;
  }
  return backends;
}

std::string default_root() {
  if (const char* env = std::getenv("PSK_ROOT")) return env;
  return "./psk-store";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"file-backed batch job manager"};
  app.require_subcommand(1);

  std::string root = default_root();
  std::string backends_path;
  app.add_option("--root", root, "job store directory (default $PSK_ROOT or ./psk-store)");
  app.add_option("--backends", backends_path, "backend config file (YAML or JSON)");

  std::string spec_path;
  auto* create = app.add_subcommand("create", "queue a job from a JobSpec document");
  create->add_option("spec", spec_path, "JobSpec JSON file")->required();

  std::string jobid, state_name_arg;
  int info = 0;
  auto* reached = app.add_subcommand("reached", "record a job state change");
  reached->add_option("jobid", jobid)->required();
  reached->add_option("state", state_name_arg)->required();
  reached->add_option("info", info)->required();

  std::string cancel_id;
  auto* cancel = app.add_subcommand("cancel", "cancel a queued or running job");
  cancel->add_option("jobid", cancel_id)->required();

  auto* list = app.add_subcommand("list", "list all jobs");

  std::string rerun_id;
  auto* rerun = app.add_subcommand("rerun", "re-queue a terminal job under the next run index");
  rerun->add_option("jobid", rerun_id)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    jobs::Store store(root, load_backends(backends_path));

    if (*create) {
      std::ifstream in(spec_path);
      if (!in) throw Error("cannot read " + spec_path);
      const auto doc = nlohmann::json::parse(in);
      try {
        const std::string id = store.create(jobs::JobSpec::from_json(doc));
        store.flush_callbacks();
        std::cout << id << "\n";
      } catch (const jobs::ValidationError& e) {
        for (const auto& err : e.errors()) {
          std::cerr << err.path << ": " << err.message << "\n";
        }
        return 2;
      }
      return 0;
    }
    if (*reached) {
      const auto state = jobs::state_from_name(state_name_arg);
      if (!state) {
        std::cerr << "unknown state \"" << state_name_arg
                  << "\" (queued, active, completed, canceled, failed)\n";
        return 2;
      }
      store.reached(jobid, *state, info);
      store.flush_callbacks();
      return 0;
    }
    if (*cancel) {
      store.cancel(cancel_id);
      store.flush_callbacks();
      return 0;
    }
    if (*rerun) {
      std::cout << store.rerun(rerun_id) << "\n";
      store.flush_callbacks();
      return 0;
    }
    if (*list) {
      for (const auto& id : store.list()) {
        const auto cur = store.current(id);
        const auto spec = store.spec(id);
        std::cout << id << "\t" << jobs::state_name(cur.state) << "\t" << spec.name << "\n";
      }
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "psk: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
