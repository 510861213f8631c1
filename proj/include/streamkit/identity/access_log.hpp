#pragma once

#include <cstdint>
#include <mutex>
#include <ostream>
#include <string>

namespace streamkit::identity {

// One JSON object per completed request: timestamp, peer, method, path,
// status. An empty peer means the client never authenticated.
class AccessLog {
 public:
  explicit AccessLog(std::ostream& out) : out_(&out) {}

  void record(const std::string& peer, const std::string& method, const std::string& path,
              int status);

 private:
  std::mutex mu_;
  std::ostream* out_;
};

}  // namespace streamkit::identity
