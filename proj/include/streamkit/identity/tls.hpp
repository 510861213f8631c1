#pragma once

#include <memory>
#include <string>

#include "streamkit/error.hpp"

typedef struct ssl_ctx_st SSL_CTX;

namespace streamkit::identity {

class TlsError : public Error {
 public:
  using Error::Error;
};

// An SSL_CTX wired for mutual authentication: our certificate chain and key
// on one side, a pinned issuer for the peer on the other.
class TlsContext {
 public:
  // Server side: presents cert/key, requires a client certificate and
  // verifies it against issuer_ca_pem.
  static std::shared_ptr<TlsContext> server(const std::string& cert_pem_path,
                                            const std::string& key_pem_path,
                                            const std::string& issuer_ca_pem_path);

  // Client side: presents cert/key, accepts only servers issued by the
  // pinned CA.
  static std::shared_ptr<TlsContext> client(const std::string& cert_pem_path,
                                            const std::string& key_pem_path,
                                            const std::string& issuer_ca_pem_path);

  SSL_CTX* ctx() const noexcept { return ctx_; }

  ~TlsContext();
  TlsContext(const TlsContext&) = delete;
  TlsContext& operator=(const TlsContext&) = delete;

 private:
  explicit TlsContext(SSL_CTX* ctx) : ctx_(ctx) {}
  SSL_CTX* ctx_;
};

}  // namespace streamkit::identity
