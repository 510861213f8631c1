#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "streamkit/error.hpp"

namespace streamkit::wire {

//
// Frame layout (stream framing for all relay traffic):
//
//   +----------------+--------------------+
//   | length u64, LE |  payload (opaque)  |
//   +----------------+--------------------+
//
// length counts payload bytes only. The payload is never inspected.
//

inline constexpr std::size_t kFrameHeaderSize = 8;
inline constexpr std::uint64_t kDefaultMaxFrameSize = 1ull << 30;  // 1 GiB

class FrameError : public Error {
 public:
  using Error::Error;
};

// Declared length exceeds the configured maximum. After this on a live
// connection resync is impossible; the connection must be dropped.
class FrameTooLarge final : public FrameError {
 public:
  using FrameError::FrameError;
};

// Stream ended in the middle of a header or payload.
class TruncatedFrame final : public FrameError {
 public:
  using FrameError::FrameError;
};

std::array<std::uint8_t, kFrameHeaderSize> encode_frame_header(std::uint64_t payload_len);
std::uint64_t decode_frame_header(std::span<const std::uint8_t, kFrameHeaderSize> header);

// Returns header + payload as one buffer.
std::vector<std::uint8_t> encode_frame(std::span<const std::uint8_t> payload,
                                       std::uint64_t max_frame_size = kDefaultMaxFrameSize);
void append_frame(std::vector<std::uint8_t>& out, std::span<const std::uint8_t> payload,
                  std::uint64_t max_frame_size = kDefaultMaxFrameSize);

// Ordered byte source. read() fills up to n bytes and returns the count;
// 0 means end of stream.
class ByteReader {
 public:
  virtual ~ByteReader() = default;
  virtual std::size_t read(std::uint8_t* dst, std::size_t n) = 0;
};

class SpanReader final : public ByteReader {
 public:
  explicit SpanReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::size_t read(std::uint8_t* dst, std::size_t n) override;
  std::size_t consumed() const noexcept { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

// Reads exactly one frame. Clean end of stream between frames -> nullopt.
// Throws TruncatedFrame if the stream ends mid-frame, FrameTooLarge if the
// declared length exceeds max_frame_size. Never consumes past the frame.
std::optional<std::vector<std::uint8_t>> read_frame(
    ByteReader& source, std::uint64_t max_frame_size = kDefaultMaxFrameSize);

// Splits a whole buffer of concatenated frames into payloads.
std::vector<std::vector<std::uint8_t>> decode_frames(
    std::span<const std::uint8_t> bytes, std::uint64_t max_frame_size = kDefaultMaxFrameSize);

// Incremental push-style parser for socket read loops. Bytes go in as they
// arrive; completed payloads come out of next(). Payload bytes are copied
// exactly once (straight into the frame's own buffer).
class FrameParser {
 public:
  explicit FrameParser(std::uint64_t max_frame_size = kDefaultMaxFrameSize)
      : max_frame_size_(max_frame_size) {}

  void push(std::span<const std::uint8_t> bytes);  // throws FrameTooLarge
  std::optional<std::vector<std::uint8_t>> next();

  // Call at end of stream; throws TruncatedFrame if a frame is half-read.
  void finish() const;

  bool mid_frame() const noexcept { return header_fill_ > 0 || in_payload_; }
  std::size_t frames_ready() const noexcept { return done_.size(); }

 private:
  std::uint64_t max_frame_size_;
  std::array<std::uint8_t, kFrameHeaderSize> header_{};
  std::size_t header_fill_ = 0;
  bool in_payload_ = false;
  std::uint64_t want_ = 0;
  std::vector<std::uint8_t> current_;
  std::deque<std::vector<std::uint8_t>> done_;
};

}  // namespace streamkit::wire
