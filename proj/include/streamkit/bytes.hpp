#pragma once

#include <cstdint>
#include <memory>
#include <vector>

namespace streamkit {

// Allocator that skips value-initialization of scalar elements. Frame
// buffers are filled by recv() immediately after resize; zeroing them first
// costs a full memory pass per frame.
template <typename T>
class NoInitAllocator : public std::allocator<T> {
 public:
  template <typename U>
  struct rebind {
    using other = NoInitAllocator<U>;
  };

  using std::allocator<T>::allocator;

  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    if constexpr (sizeof...(Args) > 0) {
      ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
  }
};

// Byte buffer for the relay hot path.
using FrameBuf = std::vector<std::uint8_t, NoInitAllocator<std::uint8_t>>;

}  // namespace streamkit
