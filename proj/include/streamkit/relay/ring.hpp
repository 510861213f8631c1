#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <string_view>
#include <vector>

#include "streamkit/bytes.hpp"

namespace streamkit::relay {

enum class OverflowPolicy {
  block,       // full ring pushes back on producers
  drop_oldest  // full ring evicts from the head and counts the drop
};

OverflowPolicy policy_from_name(std::string_view name);  // "block" | "drop-oldest"
std::string_view policy_name(OverflowPolicy p);

enum class PushOutcome {
  stored,
  stored_with_drop,
  would_block,
};

// Unsynchronized bounded FIFO with the overflow policy semantics. FrameRing
// adds blocking around it; the relay drives it under its own dispatch lock.
struct RingCore {
  using Frame = FrameBuf;

  RingCore(std::size_t max_frames, std::size_t max_bytes)
      : max_frames(max_frames), max_bytes(max_bytes) {}

  bool fits(std::size_t frame_bytes) const {
    return queue.size() < max_frames && bytes + frame_bytes <= max_bytes;
  }

  // Under drop_oldest, evicts as many oldest frames as the new one needs;
  // a frame that cannot fit even in an empty ring becomes the drop itself.
  PushOutcome push(Frame&& frame, OverflowPolicy policy, std::size_t* evicted = nullptr) {
    if (evicted) *evicted = 0;
    if (!fits(frame.size())) {
      if (policy == OverflowPolicy::block) return PushOutcome::would_block;
      std::size_t n = 0;
      while (!queue.empty() && !fits(frame.size())) {
        bytes -= queue.front().size();
        queue.pop_front();
        ++n;
      }
      dropped += n;
      if (evicted) *evicted = n;
      if (!fits(frame.size())) {
        ++dropped;
        if (evicted) ++*evicted;
        return PushOutcome::stored_with_drop;
      }
      bytes += frame.size();
      queue.push_back(std::move(frame));
      return PushOutcome::stored_with_drop;
    }
    bytes += frame.size();
    queue.push_back(std::move(frame));
    return PushOutcome::stored;
  }

  std::optional<Frame> pop() {
    if (queue.empty()) return std::nullopt;
    Frame f = std::move(queue.front());
    queue.pop_front();
    bytes -= f.size();
    return f;
  }

  const std::size_t max_frames;
  const std::size_t max_bytes;
  std::deque<Frame> queue;
  std::size_t bytes = 0;
  std::uint64_t dropped = 0;
};

// Thread-safe bounded frame queue: RingCore plus blocking push/pop.
class FrameRing {
 public:
  using Frame = RingCore::Frame;

  FrameRing(std::size_t max_frames, std::size_t max_bytes) : core_(max_frames, max_bytes) {}

  PushOutcome try_push(Frame&& frame, OverflowPolicy policy, std::size_t* evicted = nullptr);

  // Blocking push; under block policy waits for space. Returns false when
  // the ring was closed before the frame could be stored.
  bool push(Frame&& frame, OverflowPolicy policy, std::size_t* evicted = nullptr);

  std::optional<Frame> try_pop();
  std::optional<Frame> pop();  // blocks; nullopt once closed and drained

  void close();  // wakes all waiters; pending frames remain poppable

  std::size_t depth() const;
  std::size_t bytes() const;
  std::uint64_t dropped() const;
  bool closed() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  RingCore core_;
  bool closed_ = false;
};

}  // namespace streamkit::relay
