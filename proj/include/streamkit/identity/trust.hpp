#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "streamkit/error.hpp"

namespace streamkit::identity {

struct TrustEntry {
  std::string nickname;
  std::string url;                    // e.g. https://127.0.0.1:8443
  std::filesystem::path issuer_ca;    // PEM path of the pinned issuer
};

// Named, trusted services. Lookups are by nickname only; callers pin the
// returned issuer for the TLS connection to that URL. Persisted as one JSON
// file so each configuration directory is fully independent.
class TrustStore {
 public:
  TrustStore() = default;
  static TrustStore load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

  void add(TrustEntry entry);  // replaces an existing nickname
  void remove(const std::string& nickname);

  // Unknown nickname -> Error naming the known nicknames.
  const TrustEntry& resolve(const std::string& nickname) const;

  const std::map<std::string, TrustEntry>& entries() const { return entries_; }

 private:
  std::map<std::string, TrustEntry> entries_;
};

}  // namespace streamkit::identity
