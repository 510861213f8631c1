#pragma once

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <string>

#include "streamkit/error.hpp"
#include "streamkit/http.hpp"
#include "streamkit/identity/identity.hpp"
#include "streamkit/identity/trust.hpp"

namespace streamkit::tools {

inline std::filesystem::path default_home() {
  if (const char* env = std::getenv("STREAMKIT_HOME")) return env;
  if (const char* home = std::getenv("HOME")) {
    return std::filesystem::path(home) / ".streamkit";
  }
  return ".streamkit";
}

inline std::filesystem::path identity_dir(const std::filesystem::path& home) {
  return home / "identity";
}
inline std::filesystem::path trust_path(const std::filesystem::path& home) {
  return home / "services.json";
}
inline std::filesystem::path sigdb_path(const std::filesystem::path& home) {
  return home / "sigdb.jsonl";
}

struct ParsedUrl {
  bool https = false;
  std::string host;
  int port = 0;
  std::string base;  // scheme://host:port
};

inline ParsedUrl parse_url(const std::string& url) {
  ParsedUrl out;
  std::string rest;
  if (url.rfind("https://", 0) == 0) {
    out.https = true;
    rest = url.substr(8);
  } else if (url.rfind("http://", 0) == 0) {
    rest = url.substr(7);
  } else {
    throw Error("url must start with http:// or https://: " + url);
  }
  const auto slash = rest.find('/');
  const std::string hostport = rest.substr(0, slash);
  const auto colon = hostport.rfind(':');
  if (colon == std::string::npos) {
    out.host = hostport;
    out.port = out.https ? 443 : 80;
  } else {
    out.host = hostport.substr(0, colon);
    out.port = std::stoi(hostport.substr(colon + 1));
  }
  out.base = (out.https ? "https://" : "http://") + hostport;
  return out;
}

// Client for a named, trusted service: our identity on the client side, the
// entry's issuer pinned for the server side. Plain http URLs skip TLS.
inline std::unique_ptr<httplib::Client> client_for(const std::filesystem::path& home,
                                                   const identity::TrustEntry& entry) {
  const ParsedUrl url = parse_url(entry.url);
  if (!url.https) {
    return std::make_unique<httplib::Client>(url.base);
  }
  const auto cert = identity::identity_cert_path(identity_dir(home));
  const auto key = identity::identity_key_path(identity_dir(home));
  auto cli = std::make_unique<httplib::Client>(url.base, cert.string(), key.string());
  cli->set_ca_cert_path(entry.issuer_ca.string());
  cli->enable_server_certificate_verification(true);
  return cli;
}

}  // namespace streamkit::tools
