#include "streamkit/identity/tls.hpp"

#include <openssl/err.h>
#include <openssl/ssl.h>

namespace streamkit::identity {

namespace {

[[noreturn]] void throw_ssl(const std::string& what) {
  char buf[256];
  ERR_error_string_n(ERR_peek_last_error(), buf, sizeof buf);
  ERR_clear_error();
  throw TlsError(what + ": " + buf);
}

SSL_CTX* make_ctx(bool server, const std::string& cert, const std::string& key,
                  const std::string& ca) {
  SSL_CTX* ctx = SSL_CTX_new(server ? TLS_server_method() : TLS_client_method());
  if (!ctx) throw_ssl("SSL_CTX_new");
  SSL_CTX_set_min_proto_version(ctx, TLS1_3_VERSION);

  if (SSL_CTX_use_certificate_chain_file(ctx, cert.c_str()) != 1) {
    SSL_CTX_free(ctx);
    throw_ssl("load certificate " + cert);
  }
  if (SSL_CTX_use_PrivateKey_file(ctx, key.c_str(), SSL_FILETYPE_PEM) != 1) {
    SSL_CTX_free(ctx);
    throw_ssl("load key " + key);
  }
  if (SSL_CTX_check_private_key(ctx) != 1) {
    SSL_CTX_free(ctx);
    throw_ssl("certificate/key mismatch");
  }
  if (SSL_CTX_load_verify_locations(ctx, ca.c_str(), nullptr) != 1) {
    SSL_CTX_free(ctx);
    throw_ssl("load issuer CA " + ca);
  }
  SSL_CTX_set_verify(ctx, SSL_VERIFY_PEER | SSL_VERIFY_FAIL_IF_NO_PEER_CERT, nullptr);
  SSL_CTX_set_verify_depth(ctx, 4);
  return ctx;
}

}  // namespace

std::shared_ptr<TlsContext> TlsContext::server(const std::string& cert_pem_path,
                                               const std::string& key_pem_path,
                                               const std::string& issuer_ca_pem_path) {
  return std::shared_ptr<TlsContext>(
      new TlsContext(make_ctx(true, cert_pem_path, key_pem_path, issuer_ca_pem_path)));
}

std::shared_ptr<TlsContext> TlsContext::client(const std::string& cert_pem_path,
                                               const std::string& key_pem_path,
                                               const std::string& issuer_ca_pem_path) {
  return std::shared_ptr<TlsContext>(
      new TlsContext(make_ctx(false, cert_pem_path, key_pem_path, issuer_ca_pem_path)));
}

TlsContext::~TlsContext() {
  if (ctx_) SSL_CTX_free(ctx_);
}

}  // namespace streamkit::identity
