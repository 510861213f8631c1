#include <signal.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "streamkit/error.hpp"
#include "streamkit/http.hpp"
#include "streamkit/net/net.hpp"
#include "streamkit/relay/relay.hpp"

namespace {

std::atomic<bool> g_stop{false};
void on_signal(int) { g_stop.store(true); }

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw streamkit::Error("cannot read " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"many-producer many-consumer frame relay"};
  app.require_subcommand(1);

  std::string config_path;
  int drain_ms = 5000;
  auto* serve = app.add_subcommand("serve", "run a relay from a config file");
  serve->add_option("--config", config_path, "relay config (YAML or JSON)")->required();
  serve->add_option("--drain-ms", drain_ms, "drain window on shutdown");

  std::string stats_endpoint;
  auto* stats = app.add_subcommand("stats", "fetch stats from a relay admin endpoint");
  stats->add_option("endpoint", stats_endpoint, "admin host:port")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve) {
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::signal(SIGPIPE, SIG_IGN);

      auto cfg = streamkit::relay::load_relay_config(read_file(config_path));
      auto relay = streamkit::relay::Relay::start(cfg);

      const streamkit::net::Endpoint ingest = streamkit::net::Endpoint::parse(cfg.ingest_endpoint);
      const streamkit::net::Endpoint egress = streamkit::net::Endpoint::parse(cfg.egress_endpoint);
      nlohmann::json endpoints = {
          {"ingest", ingest.host + ":" + std::to_string(relay->ingest_port())},
          {"egress", egress.host + ":" + std::to_string(relay->egress_port())},
      };
      if (cfg.admin_endpoint) {
        const auto admin = streamkit::net::Endpoint::parse(*cfg.admin_endpoint);
        endpoints["admin"] = admin.host + ":" + std::to_string(relay->admin_port());
      }
      std::cout << endpoints.dump() << "\n" << std::flush;

      while (!g_stop.load()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
      }
      relay->stop(std::chrono::milliseconds(drain_ms));
      return 0;
    }

    if (*stats) {
      const auto ep = streamkit::net::Endpoint::parse(stats_endpoint);
      httplib::Client cli(ep.host, ep.port);
      cli.set_connection_timeout(3, 0);
      auto res = cli.Get("/stats");
      if (!res || res->status != 200) {
        std::cerr << "stats fetch failed from " << stats_endpoint << "\n";
        return 1;
      }
      std::cout << nlohmann::json::parse(res->body).dump(2) << "\n";
      return 0;
    }
  } catch (const streamkit::Error& e) {
    std::cerr << "relay: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
