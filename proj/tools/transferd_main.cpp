#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "streamkit/identity/access_log.hpp"
#include "streamkit/transfer/service.hpp"
#include "streamkit/wire/config.hpp"

using namespace streamkit;

namespace {

std::atomic<bool> g_stop{false};
void on_signal(int) { g_stop.store(true); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"data transfer control service"};
  app.require_subcommand(1);

  std::string config_path;
  auto* serve = app.add_subcommand("serve", "serve the transfer API");
  serve->add_option("--config", config_path, "server config (YAML or JSON)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    std::ifstream in(config_path);
    if (!in) throw Error("cannot read " + config_path);
    std::ostringstream text;
    text << in.rdbuf();
    const auto doc = wire::parse_config_document(text.str());

    transfer::TransferServiceConfig cfg;
    cfg.work_dir = doc.value("work_dir", "./transferd");
    cfg.api_host = doc.value("host", "127.0.0.1");
    cfg.api_port = doc.value("port", 0);
    cfg.callback_host = doc.value("callback_host", "127.0.0.1");
    cfg.callback_port = doc.value("callback_port", 0);
    cfg.streamer_path = doc.value("streamer", "streamer");
    cfg.advertise_host = doc.value("advertise_host", "127.0.0.1");
    cfg.drain_timeout = std::chrono::milliseconds(doc.value("drain_timeout_ms", 10000));
    cfg.backend_duration_scale = doc.value("duration_scale", 60.0);
    cfg.job_duration = doc.value("job_duration", 60);
    if (doc.contains("tls")) {
      const auto& tls = doc.at("tls");
      cfg.tls = jobs::TlsFiles{tls.at("cert").get<std::string>(),
                               tls.at("key").get<std::string>(),
                               tls.at("peer_ca").get<std::string>()};
    }

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
      cfg.access_log = access_log.get();
    }

    transfer::TransferService service(std::move(cfg));
    service.start();
    std::cout << nlohmann::json({{"port", service.api_port()},
                                 {"callback_port", service.callback_port()}})
                     .dump()
              << "\n"
              << std::flush;

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop.load()) {
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    service.stop();
    return 0;
  } catch (const Error& e) {
    std::cerr << "transferd: " << e.what() << "\n";
    return 1;
  }
}
