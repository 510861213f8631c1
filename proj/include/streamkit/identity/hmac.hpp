#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace streamkit::identity {

// HMAC-SHA-256 over the exact body bytes, hex-encoded.
std::string sign_body(std::string_view secret, std::span<const std::uint8_t> body);
std::string sign_body(std::string_view secret, std::string_view body);

// Constant-time comparison against the expected signature.
bool verify_body(std::string_view secret, std::span<const std::uint8_t> body,
                 std::string_view signature_hex);
bool verify_body(std::string_view secret, std::string_view body, std::string_view signature_hex);

std::string sha256_hex(std::span<const std::uint8_t> data);

}  // namespace streamkit::identity
