#include "streamkit/relay/ring.hpp"

#include "streamkit/error.hpp"

namespace streamkit::relay {

OverflowPolicy policy_from_name(std::string_view name) {
  if (name == "block") return OverflowPolicy::block;
  if (name == "drop-oldest") return OverflowPolicy::drop_oldest;
  throw Error("unknown overflow policy \"" + std::string(name) + "\" (block, drop-oldest)");
}

std::string_view policy_name(OverflowPolicy p) {
  return p == OverflowPolicy::block ? "block" : "drop-oldest";
}

PushOutcome FrameRing::try_push(Frame&& frame, OverflowPolicy policy, std::size_t* evicted) {
  std::unique_lock lock(mu_);
  const PushOutcome outcome = core_.push(std::move(frame), policy, evicted);
  if (outcome != PushOutcome::would_block) not_empty_.notify_one();
  return outcome;
}

bool FrameRing::push(Frame&& frame, OverflowPolicy policy, std::size_t* evicted) {
  std::unique_lock lock(mu_);
  if (policy == OverflowPolicy::block) {
    not_full_.wait(lock, [&] { return closed_ || core_.fits(frame.size()); });
  }
  if (closed_) return false;
  core_.push(std::move(frame), policy, evicted);
  not_empty_.notify_one();
  return true;
}

std::optional<FrameRing::Frame> FrameRing::try_pop() {
  std::unique_lock lock(mu_);
  auto f = core_.pop();
  if (f) not_full_.notify_one();
  return f;
}

std::optional<FrameRing::Frame> FrameRing::pop() {
  std::unique_lock lock(mu_);
  not_empty_.wait(lock, [&] { return closed_ || !core_.queue.empty(); });
  auto f = core_.pop();
  if (f) not_full_.notify_one();
  return f;
}

void FrameRing::close() {
  std::unique_lock lock(mu_);
  closed_ = true;
  not_full_.notify_all();
  not_empty_.notify_all();
}

std::size_t FrameRing::depth() const {
  std::unique_lock lock(mu_);
  return core_.queue.size();
}

std::size_t FrameRing::bytes() const {
  std::unique_lock lock(mu_);
  return core_.bytes;
}

std::uint64_t FrameRing::dropped() const {
  std::unique_lock lock(mu_);
  return core_.dropped;
}

bool FrameRing::closed() const {
  std::unique_lock lock(mu_);
  return closed_;
}

}  // namespace streamkit::relay
