#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace streamkit::relay {

// Cyclic dispatch order over the live consumer slots.
//
// Membership changes (connect, disconnect) reset the cursor to the front of
// the live order, so after a change the cycle restarts from the first
// remaining consumer. next() skips entries its predicate rejects
// (disconnected or unwritable) and hands each call to exactly one slot.
template <typename Id>
class RoundRobinCursor {
 public:
  void add(Id id) {
    order_.push_back(id);
    cursor_ = 0;
  }

  void remove(const Id& id) {
    for (std::size_t i = 0; i < order_.size(); ++i) {
      if (order_[i] == id) {
        order_.erase(order_.begin() + static_cast<std::ptrdiff_t>(i));
        break;
      }
    }
    cursor_ = 0;
  }

  template <typename Writable>
  std::optional<Id> next(Writable&& writable) {
    const std::size_t n = order_.size();
    for (std::size_t step = 0; step < n; ++step) {
      const std::size_t i = (cursor_ + step) % n;
      if (writable(order_[i])) {
        cursor_ = (i + 1) % n;
        return order_[i];
      }
    }
    return std::nullopt;
  }

  std::size_t size() const noexcept { return order_.size(); }
  bool empty() const noexcept { return order_.empty(); }

 private:
  std::vector<Id> order_;
  std::size_t cursor_ = 0;
};

}  // namespace streamkit::relay
