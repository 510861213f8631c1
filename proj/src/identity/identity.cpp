#include "streamkit/identity/identity.hpp"

#include <fcntl.h>
#include <openssl/bio.h>
#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/pem.h>
#include <openssl/x509.h>
#include <openssl/x509v3.h>
#include <sys/stat.h>
#include <unistd.h>

#include <fstream>
#include <json.hpp>
#include <sstream>

namespace streamkit::identity {

namespace {

[[noreturn]] void throw_ssl(const std::string& what) {
  char buf[256];
  ERR_error_string_n(ERR_peek_last_error(), buf, sizeof buf);
  ERR_clear_error();
  throw IdentityError(what + ": " + buf);
}

struct BioDeleter {
  void operator()(BIO* b) const noexcept { BIO_free(b); }
};
using BioPtr = std::unique_ptr<BIO, BioDeleter>;

std::string bio_to_string(BIO* bio) {
  char* data = nullptr;
  const long len = BIO_get_mem_data(bio, &data);
  return std::string(data, static_cast<std::size_t>(len));
}

void add_extension(X509* cert, int nid, const char* value) {
  X509V3_CTX ctx;
  X509V3_set_ctx_nodb(&ctx);
  X509V3_set_ctx(&ctx, cert, cert, nullptr, nullptr, 0);
  X509_EXTENSION* ext = X509V3_EXT_conf_nid(nullptr, &ctx, nid, value);
  if (!ext) throw_ssl("extension");
  X509_add_ext(cert, ext, -1);
  X509_EXTENSION_free(ext);
}

void set_subject_cn(X509_NAME* name, const std::string& cn) {
  if (X509_NAME_add_entry_by_txt(name, "CN", MBSTRING_UTF8,
                                 reinterpret_cast<const unsigned char*>(cn.c_str()), -1, -1,
                                 0) != 1) {
    throw_ssl("subject CN");
  }
}

CertPtr make_cert(EVP_PKEY* subject_key, const std::string& subject_name, EVP_PKEY* issuer_key,
                  X509_NAME* issuer_name, std::uint64_t serial, int validity_days, bool is_ca,
                  const std::string& san = "") {
  CertPtr cert(X509_new());
  if (!cert) throw_ssl("X509_new");
  X509_set_version(cert.get(), 2);
  ASN1_INTEGER_set_uint64(X509_get_serialNumber(cert.get()), serial);

  X509_gmtime_adj(X509_getm_notBefore(cert.get()), -300);  // clock-skew slack
  X509_gmtime_adj(X509_getm_notAfter(cert.get()), static_cast<long>(validity_days) * 86400);

  X509_NAME* subject = X509_get_subject_name(cert.get());
  set_subject_cn(subject, subject_name);
  X509_set_issuer_name(cert.get(), issuer_name ? issuer_name : subject);
  if (X509_set_pubkey(cert.get(), subject_key) != 1) throw_ssl("set pubkey");

  add_extension(cert.get(), NID_basic_constraints, is_ca ? "critical,CA:TRUE" : "critical,CA:FALSE");
  add_extension(cert.get(), NID_key_usage,
                is_ca ? "critical,digitalSignature,keyCertSign" : "critical,digitalSignature");
  if (!san.empty()) add_extension(cert.get(), NID_subject_alt_name, san.c_str());

  // Ed25519 signs with no separate digest.
  if (X509_sign(cert.get(), issuer_key, nullptr) == 0) throw_ssl("X509_sign");
  return cert;
}

void write_file(const std::filesystem::path& path, const std::string& content, mode_t mode) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, mode);
  if (fd < 0) throw IdentityError("cannot write " + path.string());
  ::fchmod(fd, mode);  // O_CREAT mode is masked by umask; force it
  std::size_t off = 0;
  while (off < content.size()) {
    const ssize_t n = ::write(fd, content.data() + off, content.size() - off);
    if (n < 0) {
      ::close(fd);
      throw IdentityError("short write to " + path.string());
    }
    off += static_cast<std::size_t>(n);
  }
  ::close(fd);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdentityError("cannot read " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

void EvpKeyDeleter::operator()(EVP_PKEY* k) const noexcept { EVP_PKEY_free(k); }
void X509Deleter::operator()(X509* c) const noexcept { X509_free(c); }

CertPtr clone_cert(const X509* cert) {
  return CertPtr(X509_dup(const_cast<X509*>(cert)));
}

std::string cert_to_pem(const X509* cert) {
  BioPtr bio(BIO_new(BIO_s_mem()));
  if (PEM_write_bio_X509(bio.get(), const_cast<X509*>(cert)) != 1) throw_ssl("cert to PEM");
  return bio_to_string(bio.get());
}

CertPtr cert_from_pem(const std::string& pem) {
  BioPtr bio(BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())));
  CertPtr cert(PEM_read_bio_X509(bio.get(), nullptr, nullptr, nullptr));
  if (!cert) throw_ssl("PEM to cert");
  return cert;
}

std::vector<CertPtr> certs_from_pem(const std::string& pem) {
  BioPtr bio(BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())));
  std::vector<CertPtr> out;
  while (true) {
    CertPtr cert(PEM_read_bio_X509(bio.get(), nullptr, nullptr, nullptr));
    if (!cert) {
      ERR_clear_error();
      break;
    }
    out.push_back(std::move(cert));
  }
  if (out.empty()) throw IdentityError("no certificates in PEM bundle");
  return out;
}

std::string public_key_to_pem(EVP_PKEY* key) {
  BioPtr bio(BIO_new(BIO_s_mem()));
  if (PEM_write_bio_PUBKEY(bio.get(), key) != 1) throw_ssl("pubkey to PEM");
  return bio_to_string(bio.get());
}

KeyPtr public_key_from_pem(const std::string& pem) {
  BioPtr bio(BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())));
  KeyPtr key(PEM_read_bio_PUBKEY(bio.get(), nullptr, nullptr, nullptr));
  if (!key) throw_ssl("PEM to pubkey");
  return key;
}

std::string cert_common_name(const X509* cert) {
  char cn[256] = {0};
  X509_NAME_get_text_by_NID(X509_get_subject_name(const_cast<X509*>(cert)), NID_commonName, cn,
                            sizeof cn - 1);
  return cn;
}

std::string Identity::cert_pem() const {
  std::string pem = cert_to_pem(cert.get());
  for (const auto& c : chain) pem += cert_to_pem(c.get());
  return pem;
}

std::string Identity::public_key_pem() const { return public_key_to_pem(key.get()); }

Identity new_identity(const std::string& name, int validity_days,
                      const std::string& subject_alt_names) {
  if (name.empty()) throw IdentityError("identity name must not be empty");
  KeyPtr key(EVP_PKEY_Q_keygen(nullptr, nullptr, "ED25519"));
  if (!key) throw_ssl("Ed25519 keygen");

  Identity id;
  id.name = name;
  id.cert = make_cert(key.get(), name, key.get(), nullptr, 1, validity_days, /*is_ca=*/true,
                      subject_alt_names);
  id.key = std::move(key);
  return id;
}

std::filesystem::path identity_key_path(const std::filesystem::path& dir) {
  return dir / "key.pem";
}
std::filesystem::path identity_cert_path(const std::filesystem::path& dir) {
  return dir / "cert.pem";
}

void save_identity(const Identity& id, const std::filesystem::path& dir, bool force) {
  namespace fs = std::filesystem;
  if (!force && fs::exists(identity_key_path(dir))) {
    throw IdentityError("identity already exists at " + dir.string() +
                        " (use force to overwrite)");
  }
  fs::create_directories(dir);
  fs::permissions(dir, fs::perms::owner_all, fs::perm_options::replace);

  BioPtr bio(BIO_new(BIO_s_mem()));
  if (PEM_write_bio_PrivateKey(bio.get(), id.key.get(), nullptr, nullptr, 0, nullptr, nullptr) !=
      1) {
    throw_ssl("key to PEM");
  }
  write_file(identity_key_path(dir), bio_to_string(bio.get()), 0600);
  write_file(identity_cert_path(dir), id.cert_pem(), 0644);
}

Identity load_identity(const std::filesystem::path& dir) {
  const std::string key_pem = read_file(identity_key_path(dir));
  BioPtr bio(BIO_new_mem_buf(key_pem.data(), static_cast<int>(key_pem.size())));
  KeyPtr key(PEM_read_bio_PrivateKey(bio.get(), nullptr, nullptr, nullptr));
  if (!key) throw_ssl("load private key");

  auto certs = certs_from_pem(read_file(identity_cert_path(dir)));
  Identity id;
  id.key = std::move(key);
  id.cert = std::move(certs.front());
  for (std::size_t i = 1; i < certs.size(); ++i) id.chain.push_back(std::move(certs[i]));
  id.name = cert_common_name(id.cert.get());
  return id;
}

// ---------------------------------------------------------------------------

SignatureDb::SignatureDb(std::filesystem::path file) : file_(std::move(file)) {
  std::ifstream in(file_);
  if (!in) return;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) continue;  // torn tail line
    SignatureRecord r;
    r.serial = j.at("serial").get<std::uint64_t>();
    r.subject_name = j.at("name").get<std::string>();
    r.subject_public_key_pem = j.at("pubkey").get<std::string>();
    r.issued_at = j.at("issued_at").get<std::int64_t>();
    r.revoked = j.at("revoked").get<bool>();
    records_.push_back(std::move(r));
  }
}

void SignatureDb::persist() const {
  const std::filesystem::path tmp = file_.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    for (const auto& r : records_) {
      nlohmann::json j = {{"serial", r.serial},
                          {"name", r.subject_name},
                          {"pubkey", r.subject_public_key_pem},
                          {"issued_at", r.issued_at},
                          {"revoked", r.revoked}};
      out << j.dump() << "\n";
    }
  }
  std::filesystem::rename(tmp, file_);
}

SignatureRecord SignatureDb::append(const std::string& subject_name,
                                    const std::string& subject_pubkey_pem) {
  std::uint64_t serial = 1;
  for (const auto& r : records_) serial = std::max(serial, r.serial + 1);
  SignatureRecord r;
  r.serial = serial;
  r.subject_name = subject_name;
  r.subject_public_key_pem = subject_pubkey_pem;
  r.issued_at = static_cast<std::int64_t>(::time(nullptr));
  records_.push_back(r);
  persist();
  return r;
}

void SignatureDb::revoke(std::uint64_t serial) {
  for (auto& r : records_) {
    if (r.serial == serial) {
      r.revoked = true;  // monotone: never cleared
      persist();
      return;
    }
  }
  throw IdentityError("no signature record with serial " + std::to_string(serial));
}

std::optional<SignatureRecord> SignatureDb::find(std::uint64_t serial) const {
  for (const auto& r : records_) {
    if (r.serial == serial) return r;
  }
  return std::nullopt;
}

std::optional<SignatureRecord> SignatureDb::find_live(const std::string& subject_name,
                                                      const std::string& subject_pubkey_pem) const {
  for (const auto& r : records_) {
    if (!r.revoked && r.subject_name == subject_name &&
        r.subject_public_key_pem == subject_pubkey_pem) {
      return r;
    }
  }
  return std::nullopt;
}

IssueResult sign_identity(const Identity& issuer, const std::string& subject_pubkey_pem,
                          const std::string& subject_name, SignatureDb& db, int validity_days,
                          const std::string& subject_alt_names) {
  if (db.find_live(subject_name, subject_pubkey_pem)) {
    throw IdentityError("a live certificate for this (name, key) already exists; revoke it first");
  }
  KeyPtr subject_key = public_key_from_pem(subject_pubkey_pem);
  SignatureRecord record = db.append(subject_name, subject_pubkey_pem);
  CertPtr cert = make_cert(subject_key.get(), subject_name, issuer.key.get(),
                           X509_get_subject_name(issuer.cert.get()), record.serial,
                           validity_days, /*is_ca=*/false, subject_alt_names);
  return {std::move(cert), std::move(record)};
}

// ---------------------------------------------------------------------------

std::string_view verify_cause_name(VerifyCause c) {
  switch (c) {
    case VerifyCause::ok:
      return "ok";
    case VerifyCause::malformed:
      return "malformed";
    case VerifyCause::untrusted_issuer:
      return "untrusted-issuer";
    case VerifyCause::not_yet_valid:
      return "not-yet-valid";
    case VerifyCause::expired:
      return "expired";
    case VerifyCause::revoked:
      return "revoked";
    case VerifyCause::key_mismatch:
      return "key-mismatch";
  }
  return "unknown";
}

VerifyResult verify_peer(const std::vector<X509*>& presented_chain, X509* trusted_issuer,
                         const SignatureDb* db,
                         std::optional<std::chrono::system_clock::time_point> now_override) {
  VerifyResult result;
  if (presented_chain.empty() || !trusted_issuer) {
    result.cause = VerifyCause::malformed;
    return result;
  }

  X509_STORE* store = X509_STORE_new();
  X509_STORE_add_cert(store, trusted_issuer);

  STACK_OF(X509)* untrusted = sk_X509_new_null();
  for (std::size_t i = 1; i < presented_chain.size(); ++i) {
    sk_X509_push(untrusted, presented_chain[i]);
  }

  X509_STORE_CTX* ctx = X509_STORE_CTX_new();
  X509_STORE_CTX_init(ctx, store, presented_chain[0], untrusted);
  if (now_override) {
    X509_STORE_CTX_set_time(ctx, 0,
                            std::chrono::system_clock::to_time_t(*now_override));
  }

  const int ok = X509_verify_cert(ctx);
  const int err = X509_STORE_CTX_get_error(ctx);
  X509_STORE_CTX_free(ctx);
  sk_X509_free(untrusted);
  X509_STORE_free(store);

  if (ok != 1) {
    switch (err) {
      case X509_V_ERR_CERT_HAS_EXPIRED:
        result.cause = VerifyCause::expired;
        break;
      case X509_V_ERR_CERT_NOT_YET_VALID:
        result.cause = VerifyCause::not_yet_valid;
        break;
      case X509_V_ERR_UNABLE_TO_GET_ISSUER_CERT:
      case X509_V_ERR_UNABLE_TO_GET_ISSUER_CERT_LOCALLY:
      case X509_V_ERR_SELF_SIGNED_CERT_IN_CHAIN:
      case X509_V_ERR_DEPTH_ZERO_SELF_SIGNED_CERT:
      case X509_V_ERR_CERT_UNTRUSTED:
      case X509_V_ERR_CERT_SIGNATURE_FAILURE:
        result.cause = VerifyCause::untrusted_issuer;
        break;
      default:
        result.cause = VerifyCause::malformed;
        break;
    }
    return result;
  }

  X509* leaf = presented_chain[0];
  const std::string name = cert_common_name(leaf);

  if (db) {
    const ASN1_INTEGER* serial_asn1 = X509_get0_serialNumber(leaf);
    std::uint64_t serial = 0;
    ASN1_INTEGER_get_uint64(&serial, serial_asn1);
    if (auto record = db->find(serial)) {
      if (record->revoked) {
        result.cause = VerifyCause::revoked;
        return result;
      }
      KeyPtr leaf_key(X509_get_pubkey(leaf));
      const std::string leaf_pem = public_key_to_pem(leaf_key.get());
      if (leaf_pem != record->subject_public_key_pem || name != record->subject_name) {
        result.cause = VerifyCause::key_mismatch;
        return result;
      }
    }
  }

  result.cause = VerifyCause::ok;
  result.peer_name = name;
  return result;
}

}  // namespace streamkit::identity
