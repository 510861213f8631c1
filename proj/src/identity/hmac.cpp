#include "streamkit/identity/hmac.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>

namespace streamkit::identity {

namespace {

std::string to_hex(const unsigned char* data, unsigned len) {
  static const char digits[] = "0123456789abcdef";
  std::string out(2 * len, '0');
  for (unsigned i = 0; i < len; ++i) {
    out[2 * i] = digits[data[i] >> 4];
    out[2 * i + 1] = digits[data[i] & 0xf];
  }
  return out;
}

}  // namespace

std::string sign_body(std::string_view secret, std::span<const std::uint8_t> body) {
  unsigned char mac[EVP_MAX_MD_SIZE];
  unsigned mac_len = 0;
  HMAC(EVP_sha256(), secret.data(), static_cast<int>(secret.size()), body.data(), body.size(),
       mac, &mac_len);
  return to_hex(mac, mac_len);
}

std::string sign_body(std::string_view secret, std::string_view body) {
  return sign_body(secret,
                   std::span(reinterpret_cast<const std::uint8_t*>(body.data()), body.size()));
}

bool verify_body(std::string_view secret, std::span<const std::uint8_t> body,
                 std::string_view signature_hex) {
  const std::string expected = sign_body(secret, body);
  if (expected.size() != signature_hex.size()) return false;
  return CRYPTO_memcmp(expected.data(), signature_hex.data(), expected.size()) == 0;
}

bool verify_body(std::string_view secret, std::string_view body, std::string_view signature_hex) {
  return verify_body(secret,
                     std::span(reinterpret_cast<const std::uint8_t*>(body.data()), body.size()),
                     signature_hex);
}

std::string sha256_hex(std::span<const std::uint8_t> data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
  return to_hex(digest, len);
}

}  // namespace streamkit::identity
