#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "streamkit/identity/access_log.hpp"
#include "streamkit/identity/identity.hpp"
#include "streamkit/jobs/api.hpp"
#include "streamkit/jobs/runner.hpp"
#include "streamkit/wire/config.hpp"

using namespace streamkit;

namespace {

std::atomic<bool> g_stop{false};
void on_signal(int) { g_stop.store(true); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"job manager REST service"};
  app.require_subcommand(1);

  std::string config_path;
  auto* serve = app.add_subcommand("serve", "serve the jobs API");
  serve->add_option("--config", config_path, "server config (YAML or JSON)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    std::ifstream in(config_path);
    if (!in) throw Error("cannot read " + config_path);
    std::ostringstream text;
    text << in.rdbuf();
    const auto doc = wire::parse_config_document(text.str());

    std::map<std::string, jobs::BackendConfig> backends;
    if (doc.contains("backends")) {
      for (const auto& [nickname, b] : doc.at("backends").items()) {
        jobs::BackendConfig cfg;
        cfg.nickname = nickname;
        cfg.type = b.value("type", "local");
        cfg.queue_name = b.value("queue_name", "");
        cfg.project_name = b.value("project_name", "");
        cfg.duration_scale = b.value("duration_scale", 60.0);
        cfg.grace_seconds = b.value("grace_seconds", 5);
        backends[nickname] = cfg;
      }
    } else {
      jobs::BackendConfig local;
      local.nickname = "local";
      local.type = "local";
      backends["local"] = local;
    }

    jobs::Store store(doc.value("root", "./jobstore"), backends);
    jobs::LocalRunner runner(store, doc.value("slots", 4));
    runner.start();

    std::ofstream log_file;
    std::unique_ptr<identity::AccessLog> access_log;
    if (doc.contains("access_log")) {
      const std::string path = doc.at("access_log").get<std::string>();
      if (path == "-") {
        access_log = std::make_unique<identity::AccessLog>(std::cerr);
      } else {
        log_file.open(path, std::ios::app);
        access_log = std::make_unique<identity::AccessLog>(log_file);
      }
    }

    std::unique_ptr<identity::SignatureDb> sigdb;
    if (doc.contains("signature_db")) {
      sigdb = std::make_unique<identity::SignatureDb>(
          doc.at("signature_db").get<std::string>());
    }

    jobs::ApiOptions options;
    options.host = doc.value("host", "127.0.0.1");
    options.port = doc.value("port", 0);
    if (doc.contains("tls")) {
      const auto& tls = doc.at("tls");
      options.tls = jobs::TlsFiles{tls.at("cert").get<std::string>(),
                                   tls.at("key").get<std::string>(),
                                   tls.at("peer_ca").get<std::string>()};
    }
    if (doc.contains("proxy_identity_header")) {
      options.proxy_identity_header = doc.at("proxy_identity_header").get<std::string>();
    }
    options.access_log = access_log.get();
    options.signature_db = sigdb.get();

    jobs::JobsApi api(store, &runner, options);
    api.start();
    std::cout << nlohmann::json({{"port", api.port()}}).dump() << "\n" << std::flush;

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop.load()) {
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    api.stop();
    runner.stop();
    store.flush_callbacks();
    return 0;
  } catch (const Error& e) {
    std::cerr << "jobd: " << e.what() << "\n";
    return 1;
  }
}
