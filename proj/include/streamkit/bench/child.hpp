#pragma once

#include <string>
#include <vector>

#include "streamkit/error.hpp"

namespace streamkit::bench {

class ChildError : public Error {
 public:
  using Error::Error;
};

// A spawned child process with its stdout piped back.
class Child {
 public:
  static Child spawn(const std::vector<std::string>& argv);

  Child() = default;
  Child(Child&& o) noexcept;
  Child& operator=(Child&& o) noexcept;
  ~Child();

  // Blocking line read from the child's stdout (without the newline).
  // Throws if the stream ends first.
  std::string read_line();
  // Everything remaining until EOF.
  std::string read_rest();

  int wait();  // exit code, or 128+signal; reaps the child
  void signal(int sig);
  bool running() const { return pid_ > 0 && !reaped_; }
  int pid() const { return pid_; }

 private:
  int pid_ = -1;
  int out_fd_ = -1;
  bool reaped_ = false;
  int status_ = 0;
  std::string buffer_;
};

}  // namespace streamkit::bench
