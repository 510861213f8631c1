#include "streamkit/identity/access_log.hpp"

#include <chrono>
#include <json.hpp>

namespace streamkit::identity {

void AccessLog::record(const std::string& peer, const std::string& method,
                       const std::string& path, int status) {
  const auto now = std::chrono::system_clock::now();
  const double t =
      std::chrono::duration<double>(now.time_since_epoch()).count();
  nlohmann::json j = {
      {"t", t}, {"peer", peer}, {"method", method}, {"path", path}, {"status", status}};
  std::lock_guard lock(mu_);
  *out_ << j.dump() << "\n";
  out_->flush();
}

}  // namespace streamkit::identity
