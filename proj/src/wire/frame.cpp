#include "streamkit/wire/frame.hpp"

#include <cstring>

namespace streamkit::wire {

namespace {

std::string too_large_msg(std::uint64_t len, std::uint64_t max) {
  return "frame of " + std::to_string(len) + " bytes exceeds max frame size " +
         std::to_string(max);
}

}  // namespace

std::array<std::uint8_t, kFrameHeaderSize> encode_frame_header(std::uint64_t payload_len) {
  std::array<std::uint8_t, kFrameHeaderSize> h;
  for (std::size_t i = 0; i < kFrameHeaderSize; ++i) {
    h[i] = static_cast<std::uint8_t>(payload_len >> (8 * i));
  }
  return h;
}

std::uint64_t decode_frame_header(std::span<const std::uint8_t, kFrameHeaderSize> header) {
  std::uint64_t len = 0;
  for (std::size_t i = 0; i < kFrameHeaderSize; ++i) {
    len |= static_cast<std::uint64_t>(header[i]) << (8 * i);
  }
  return len;
}

std::vector<std::uint8_t> encode_frame(std::span<const std::uint8_t> payload,
                                       std::uint64_t max_frame_size) {
  std::vector<std::uint8_t> out;
  append_frame(out, payload, max_frame_size);
  return out;
}

void append_frame(std::vector<std::uint8_t>& out, std::span<const std::uint8_t> payload,
                  std::uint64_t max_frame_size) {
  if (payload.size() > max_frame_size) {
    throw FrameTooLarge(too_large_msg(payload.size(), max_frame_size));
  }
  const auto header = encode_frame_header(payload.size());
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), payload.begin(), payload.end());
}

std::size_t SpanReader::read(std::uint8_t* dst, std::size_t n) {
  const std::size_t take = std::min(n, bytes_.size() - pos_);
  std::memcpy(dst, bytes_.data() + pos_, take);
  pos_ += take;
  return take;
}

namespace {

// Fills dst completely or returns the shortfall point.
std::size_t read_full(ByteReader& source, std::uint8_t* dst, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const std::size_t r = source.read(dst + got, n - got);
    if (r == 0) break;
    got += r;
  }
  return got;
}

}  // namespace

std::optional<std::vector<std::uint8_t>> read_frame(ByteReader& source,
                                                    std::uint64_t max_frame_size) {
  std::array<std::uint8_t, kFrameHeaderSize> header;
  const std::size_t got = read_full(source, header.data(), header.size());
  if (got == 0) return std::nullopt;  // clean end of stream between frames
  if (got < header.size()) {
    throw TruncatedFrame("stream ended inside frame header (" + std::to_string(got) +
                         " of 8 bytes)");
  }
  const std::uint64_t len = decode_frame_header(header);
  if (len > max_frame_size) throw FrameTooLarge(too_large_msg(len, max_frame_size));

  std::vector<std::uint8_t> payload(static_cast<std::size_t>(len));
  const std::size_t body = read_full(source, payload.data(), payload.size());
  if (body < payload.size()) {
    throw TruncatedFrame("stream ended inside frame payload (" + std::to_string(body) +
                         " of " + std::to_string(len) + " bytes)");
  }
  return payload;
}

std::vector<std::vector<std::uint8_t>> decode_frames(std::span<const std::uint8_t> bytes,
                                                     std::uint64_t max_frame_size) {
  SpanReader reader(bytes);
  std::vector<std::vector<std::uint8_t>> out;
  while (auto payload = read_frame(reader, max_frame_size)) {
    out.push_back(std::move(*payload));
  }
  return out;
}

void FrameParser::push(std::span<const std::uint8_t> bytes) {
  while (!bytes.empty()) {
    if (!in_payload_) {
      const std::size_t take = std::min(bytes.size(), kFrameHeaderSize - header_fill_);
      std::memcpy(header_.data() + header_fill_, bytes.data(), take);
      header_fill_ += take;
      bytes = bytes.subspan(take);
      if (header_fill_ < kFrameHeaderSize) return;

      want_ = decode_frame_header(header_);
      if (want_ > max_frame_size_) throw FrameTooLarge(too_large_msg(want_, max_frame_size_));
      header_fill_ = 0;
      in_payload_ = true;
      current_.clear();
      current_.reserve(static_cast<std::size_t>(want_));
    }

    const std::size_t take =
        static_cast<std::size_t>(std::min<std::uint64_t>(bytes.size(), want_ - current_.size()));
    current_.insert(current_.end(), bytes.begin(), bytes.begin() + take);
    bytes = bytes.subspan(take);
    if (current_.size() == want_) {
      done_.push_back(std::move(current_));
      current_ = {};
      in_payload_ = false;
    }
  }
}

std::optional<std::vector<std::uint8_t>> FrameParser::next() {
  if (done_.empty()) return std::nullopt;
  std::vector<std::uint8_t> f = std::move(done_.front());
  done_.pop_front();
  return f;
}

void FrameParser::finish() const {
  if (mid_frame()) {
    throw TruncatedFrame("stream ended mid-frame");
  }
}

}  // namespace streamkit::wire
