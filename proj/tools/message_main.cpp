#include <iostream>

#include <CLI11.hpp>

#include "client_common.hpp"

using namespace streamkit;

// cURL-like client for named, trusted services: looks up the URL and pinned
// issuer by nickname and speaks mutually-authenticated HTTPS.
int main(int argc, char** argv) {
  CLI::App app{"send a request to a named, trusted service"};

  std::string home = tools::default_home().string();
  std::string nickname, path, body;
  bool do_delete = false;
  app.add_option("--home", home, "configuration directory (default $STREAMKIT_HOME)");
  app.add_option("nickname", nickname, "service nickname from the trust store")->required();
  app.add_option("path", path, "request path, e.g. /jobs")->required();
  auto* json_opt = app.add_option("--json", body, "POST this JSON body instead of GET");
  app.add_flag("--delete", do_delete, "send DELETE instead of GET");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto store = identity::TrustStore::load(tools::trust_path(home));
    const identity::TrustEntry& entry = store.resolve(nickname);
    auto cli = tools::client_for(home, entry);
    cli->set_connection_timeout(5, 0);

    httplib::Result res;
    if (*json_opt) {
      res = cli->Post(path, body, "application/json");
    } else if (do_delete) {
      res = cli->Delete(path);
    } else {
      res = cli->Get(path);
    }
    if (!res) {
      std::cerr << "message: request to " << entry.url << path
                << " failed: " << httplib::to_string(res.error()) << "\n";
      return 1;
    }
    std::cerr << res->status << "\n";
    std::cout << res->body;
    if (!res->body.empty() && res->body.back() != '\n') std::cout << "\n";
    return res->status < 400 ? 0 : 1;
  } catch (const Error& e) {
    std::cerr << "message: " << e.what() << "\n";
    return 1;
  }
}
