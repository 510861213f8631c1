#include "streamkit/identity/trust.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

namespace streamkit::identity {

TrustStore TrustStore::load(const std::filesystem::path& file) {
  TrustStore store;
  std::ifstream in(file);
  if (!in) return store;  // empty store until first add
  nlohmann::json doc = nlohmann::json::parse(in);
  for (const auto& [nickname, entry] : doc.items()) {
    store.entries_[nickname] = TrustEntry{
        nickname,
        entry.at("url").get<std::string>(),
        entry.at("issuer_ca").get<std::string>(),
    };
  }
  return store;
}

void TrustStore::save(const std::filesystem::path& file) const {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [nickname, e] : entries_) {
    doc[nickname] = {{"url", e.url}, {"issuer_ca", e.issuer_ca.string()}};
  }
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  out << doc.dump(2) << "\n";
}

void TrustStore::add(TrustEntry entry) { entries_[entry.nickname] = std::move(entry); }

void TrustStore::remove(const std::string& nickname) { entries_.erase(nickname); }

const TrustEntry& TrustStore::resolve(const std::string& nickname) const {
  auto it = entries_.find(nickname);
  if (it != entries_.end()) return it->second;
  std::ostringstream known;
  bool first = true;
  for (const auto& [name, e] : entries_) {
    if (!first) known << ", ";
    known << name;
    first = false;
  }
  throw Error("unknown service nickname \"" + nickname + "\" (known: " +
              (entries_.empty() ? "none" : known.str()) + ")");
}

}  // namespace streamkit::identity
