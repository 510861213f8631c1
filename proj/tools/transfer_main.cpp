#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "client_common.hpp"
#include "streamkit/wire/config.hpp"

using namespace streamkit;

int main(int argc, char** argv) {
  CLI::App app{"client for the transfer control service"};
  app.require_subcommand(1);

  std::string home = tools::default_home().string();
  std::string server;
  app.add_option("--home", home, "configuration directory (default $STREAMKIT_HOME)");
  app.add_option("--server", server, "service nickname from the trust store")->required();

  std::string config_path;
  std::uint32_t workers = 1;
  auto* create = app.add_subcommand("create", "start a transfer from a pipeline config");
  create->add_option("-c,--config", config_path, "pipeline config (YAML or JSON)")->required();
  create->add_option("--workers", workers, "parallel pipeline workers");

  std::string get_id;
  auto* get = app.add_subcommand("get", "read a transfer's status");
  get->add_option("id", get_id)->required();

  std::string cancel_id;
  auto* cancel = app.add_subcommand("cancel", "stop a transfer");
  cancel->add_option("id", cancel_id)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const auto store = identity::TrustStore::load(tools::trust_path(home));
    const identity::TrustEntry& entry = store.resolve(server);
    auto cli = tools::client_for(home, entry);
    cli->set_connection_timeout(5, 0);

    if (*create) {
      std::ifstream in(config_path);
      if (!in) throw Error("cannot read " + config_path);
      std::ostringstream text;
      text << in.rdbuf();
      const nlohmann::json request = {
          {"config", wire::parse_config_document(text.str())},
          {"worker_count", workers},
      };
      auto res = cli->Post("/transfers", request.dump(), "application/json");
      if (!res) throw Error("request failed: " + httplib::to_string(res.error()));
      if (res->status != 200) {
        std::cerr << res->body << "\n";
        return 1;
      }
      std::cout << nlohmann::json::parse(res->body).at("id").get<std::string>() << "\n";
      return 0;
    }
    if (*get) {
      auto res = cli->Get("/transfers/" + get_id);
      if (!res) throw Error("request failed: " + httplib::to_string(res.error()));
      std::cout << res->body << "\n";
      return res->status == 200 ? 0 : 1;
    }
    if (*cancel) {
      auto res = cli->Delete("/transfers/" + cancel_id);
      if (!res) throw Error("request failed: " + httplib::to_string(res.error()));
      std::cout << res->body << "\n";
      return res->status == 200 ? 0 : 1;
    }
  } catch (const Error& e) {
    std::cerr << "transfer: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
