#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "streamkit/error.hpp"

typedef struct evp_pkey_st EVP_PKEY;
typedef struct x509_st X509;

namespace streamkit::identity {

class IdentityError : public Error {
 public:
  using Error::Error;
};

struct EvpKeyDeleter {
  void operator()(EVP_PKEY* k) const noexcept;
};
struct X509Deleter {
  void operator()(X509* c) const noexcept;
};
using KeyPtr = std::unique_ptr<EVP_PKEY, EvpKeyDeleter>;
using CertPtr = std::unique_ptr<X509, X509Deleter>;

CertPtr clone_cert(const X509* cert);

// A named Ed25519 keypair plus its certificate (self-signed until an issuer
// signs it) and any issuing chain. The private key never leaves the
// directory it was created in.
struct Identity {
  std::string name;
  KeyPtr key;
  CertPtr cert;
  std::vector<CertPtr> chain;  // issuing chain, leaf's issuer first

  std::string cert_pem() const;
  std::string public_key_pem() const;
};

// Fresh Ed25519 keypair with a self-signed certificate (CN = name).
// subject_alt_names uses OpenSSL syntax, e.g. "IP:127.0.0.1,DNS:localhost";
// services need one matching the host clients dial.
Identity new_identity(const std::string& name, int validity_days = 90,
                      const std::string& subject_alt_names = "");

// Directory layout: key.pem (0600), cert.pem (leaf + chain). Refuses to
// overwrite an existing identity unless force is set.
void save_identity(const Identity& id, const std::filesystem::path& dir, bool force = false);
Identity load_identity(const std::filesystem::path& dir);

std::filesystem::path identity_key_path(const std::filesystem::path& dir);
std::filesystem::path identity_cert_path(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Signature records
// ---------------------------------------------------------------------------

struct SignatureRecord {
  std::uint64_t serial = 0;
  std::string subject_name;
  std::string subject_public_key_pem;
  std::int64_t issued_at = 0;  // unix seconds
  bool revoked = false;
};

// Single-file store of every certificate this issuer has signed, queryable
// for revocation. One JSON object per line; revocation is set-once.
class SignatureDb {
 public:
  explicit SignatureDb(std::filesystem::path file);

  SignatureRecord append(const std::string& subject_name, const std::string& subject_pubkey_pem);
  void revoke(std::uint64_t serial);  // unknown serial -> IdentityError

  std::optional<SignatureRecord> find(std::uint64_t serial) const;
  std::optional<SignatureRecord> find_live(const std::string& subject_name,
                                           const std::string& subject_pubkey_pem) const;
  std::vector<SignatureRecord> records() const { return records_; }

 private:
  void persist() const;
  std::filesystem::path file_;
  std::vector<SignatureRecord> records_;
};

// Issues a certificate binding subject_pubkey_pem to subject_name, signed by
// the issuer. Only public material is handled. A live (unrevoked) record for
// the same (name, key) is refused.
struct IssueResult {
  CertPtr cert;
  SignatureRecord record;
};
IssueResult sign_identity(const Identity& issuer, const std::string& subject_pubkey_pem,
                          const std::string& subject_name, SignatureDb& db,
                          int validity_days = 90, const std::string& subject_alt_names = "");

// ---------------------------------------------------------------------------
// Peer verification
// ---------------------------------------------------------------------------

enum class VerifyCause {
  ok,
  malformed,
  untrusted_issuer,
  not_yet_valid,
  expired,
  revoked,
  key_mismatch,  // presented key differs from the recorded signed key
};

std::string_view verify_cause_name(VerifyCause c);

struct VerifyResult {
  VerifyCause cause = VerifyCause::malformed;
  std::string peer_name;  // set when cause == ok
  bool ok() const { return cause == VerifyCause::ok; }
};

// Verifies a presented chain (leaf first) against a pinned issuer, the
// validity window and, when a database is supplied, revocation and key
// identity. now_override lets tests shift the clock.
VerifyResult verify_peer(const std::vector<X509*>& presented_chain, X509* trusted_issuer,
                         const SignatureDb* db = nullptr,
                         std::optional<std::chrono::system_clock::time_point> now_override =
                             std::nullopt);

// PEM helpers.
std::string cert_to_pem(const X509* cert);
CertPtr cert_from_pem(const std::string& pem);
std::vector<CertPtr> certs_from_pem(const std::string& pem);  // whole bundle
std::string public_key_to_pem(EVP_PKEY* key);
KeyPtr public_key_from_pem(const std::string& pem);
std::string cert_common_name(const X509* cert);

}  // namespace streamkit::identity
