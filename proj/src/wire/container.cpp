#include "streamkit/wire/container.hpp"

#include <zlib.h>

#include <cstring>
#include <limits>

namespace streamkit::wire {

namespace {

constexpr std::size_t kDtypeCount = 10;
constexpr std::size_t kSizes[kDtypeCount] = {1, 1, 2, 2, 4, 4, 8, 8, 4, 8};
constexpr std::string_view kNames[kDtypeCount] = {"u8",  "i8",  "u16", "i16", "u32",
                                                  "i32", "u64", "i64", "f32", "f64"};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void check_path(const std::string& path) {
  if (path.empty() || path[0] != '/') {
    throw BatchShapeError("field path must be non-empty and begin with '/': \"" + path + "\"");
  }
  if (path.find('\0') != std::string::npos) {
    throw BatchShapeError("field path contains NUL byte");
  }
  if (path.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw BatchShapeError("field path longer than 65535 bytes");
  }
}

std::vector<std::uint8_t> deflate_bytes(std::span<const std::uint8_t> in, int level) {
  uLongf bound = compressBound(static_cast<uLong>(in.size()));
  std::vector<std::uint8_t> out(bound);
  const int rc = compress2(out.data(), &bound, in.data(), static_cast<uLong>(in.size()), level);
  if (rc != Z_OK) throw ContainerError("deflate failed (zlib rc " + std::to_string(rc) + ")");
  out.resize(bound);
  return out;
}

void inflate_bytes(std::span<const std::uint8_t> in, std::span<std::uint8_t> out) {
  uLongf out_len = static_cast<uLongf>(out.size());
  const int rc = uncompress(out.data(), &out_len, in.data(), static_cast<uLong>(in.size()));
  if (rc != Z_OK || out_len != out.size()) {
    throw CorruptionError("inflate failed or produced wrong length");
  }
}

// Bounds-checked cursor over the blob.
class Cursor {
 public:
  explicit Cursor(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > bytes_.size() - pos_) {
      throw CorruptionError("container truncated: wanted " + std::to_string(n) +
                            " bytes, have " + std::to_string(bytes_.size() - pos_));
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint8_t u8() { return take(1)[0]; }

  std::uint16_t u16() {
    auto s = take(2);
    return static_cast<std::uint16_t>(s[0] | (s[1] << 8));
  }

  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(s[i]) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(s[i]) << (8 * i);
    return v;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t dtype_size(Dtype d) noexcept { return kSizes[static_cast<std::uint8_t>(d)]; }

std::string_view dtype_name(Dtype d) noexcept { return kNames[static_cast<std::uint8_t>(d)]; }

std::optional<Dtype> dtype_from_code(std::uint8_t code) noexcept {
  if (code >= kDtypeCount) return std::nullopt;
  return static_cast<Dtype>(code);
}

std::optional<Dtype> dtype_from_name(std::string_view name) noexcept {
  for (std::size_t i = 0; i < kDtypeCount; ++i) {
    if (kNames[i] == name) return static_cast<Dtype>(i);
  }
  return std::nullopt;
}

std::uint64_t Array::element_count() const {
  std::uint64_t n = 1;
  for (std::uint64_t d : shape) {
    if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) {
      throw ContainerError("shape product overflows u64");
    }
    n *= d;
  }
  return n;
}

std::uint64_t Array::byte_size() const {
  const std::uint64_t n = element_count();
  const std::uint64_t esize = dtype_size(dtype);
  if (n > std::numeric_limits<std::uint64_t>::max() / esize) {
    throw ContainerError("byte size overflows u64");
  }
  return n * esize;
}

std::vector<std::uint8_t> encode_container(const ArrayMap& batch, Compression compression,
                                           int level) {
  if (batch.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw BatchShapeError("too many fields");
  }

  std::optional<std::uint64_t> leading;
  for (const auto& [path, arr] : batch) {
    check_path(path);
    if (dtype_from_code(static_cast<std::uint8_t>(arr.dtype)) == std::nullopt) {
      throw ContainerError("unsupported dtype code " +
                           std::to_string(static_cast<int>(arr.dtype)));
    }
    if (arr.shape.empty()) {
      throw BatchShapeError("field \"" + path + "\" has no dimensions (batched arrays need a leading dim)");
    }
    if (arr.shape.size() > 255) throw BatchShapeError("field \"" + path + "\" has ndim > 255");
    if (leading && *leading != arr.shape[0]) {
      throw BatchShapeError("mismatched leading dimensions: " + std::to_string(*leading) +
                            " vs " + std::to_string(arr.shape[0]) + " at \"" + path + "\"");
    }
    leading = arr.shape[0];
    if (arr.byte_size() != arr.data.size()) {
      throw BatchShapeError("field \"" + path + "\" has " + std::to_string(arr.data.size()) +
                            " data bytes, shape wants " + std::to_string(arr.byte_size()));
    }
  }

  std::vector<std::uint8_t> out;
  out.insert(out.end(), kContainerMagic, kContainerMagic + 4);
  out.push_back(kContainerVersion);
  put_u32(out, static_cast<std::uint32_t>(batch.size()));

  for (const auto& [path, arr] : batch) {  // std::map: lexicographic by path
    put_u16(out, static_cast<std::uint16_t>(path.size()));
    out.insert(out.end(), path.begin(), path.end());
    out.push_back(static_cast<std::uint8_t>(arr.dtype));
    out.push_back(static_cast<std::uint8_t>(arr.shape.size()));
    for (std::uint64_t d : arr.shape) put_u64(out, d);

    if (compression == Compression::deflate) {
      auto packed = deflate_bytes(arr.data, level);
      out.push_back(static_cast<std::uint8_t>(Compression::deflate));
      put_u64(out, packed.size());
      out.insert(out.end(), packed.begin(), packed.end());
    } else {
      out.push_back(static_cast<std::uint8_t>(Compression::none));
      put_u64(out, arr.data.size());
      out.insert(out.end(), arr.data.begin(), arr.data.end());
    }
  }
  return out;
}

ArrayMap decode_container(std::span<const std::uint8_t> blob, std::uint64_t max_total_bytes) {
  Cursor cur(blob);

  auto magic = cur.take(4);
  if (std::memcmp(magic.data(), kContainerMagic, 4) != 0) {
    throw FormatError("bad container magic");
  }
  const std::uint8_t version = cur.u8();
  if (version != kContainerVersion) {
    throw FormatError("unsupported container version " + std::to_string(version));
  }
  const std::uint32_t field_count = cur.u32();

  ArrayMap out;
  std::uint64_t total_bytes = 0;
  for (std::uint32_t i = 0; i < field_count; ++i) {
    const std::uint16_t path_len = cur.u16();
    auto path_bytes = cur.take(path_len);
    std::string path(reinterpret_cast<const char*>(path_bytes.data()), path_bytes.size());
    if (path.empty() || path[0] != '/' || path.find('\0') != std::string::npos) {
      throw FormatError("malformed field path");
    }

    Array arr;
    const std::uint8_t dtype_code = cur.u8();
    auto dtype = dtype_from_code(dtype_code);
    if (!dtype) throw FormatError("unknown dtype code " + std::to_string(dtype_code));
    arr.dtype = *dtype;

    const std::uint8_t ndim = cur.u8();
    arr.shape.resize(ndim);
    for (std::uint8_t d = 0; d < ndim; ++d) arr.shape[d] = cur.u64();

    const std::uint64_t expect = arr.byte_size();  // throws on overflow
    if (expect > max_total_bytes || total_bytes + expect > max_total_bytes) {
      throw CorruptionError("declared field data exceeds decode limit");
    }
    total_bytes += expect;

    const std::uint8_t comp_code = cur.u8();
    const std::uint64_t payload_len = cur.u64();
    if (payload_len > cur.remaining()) {
      throw CorruptionError("declared payload length " + std::to_string(payload_len) +
                            " exceeds remaining blob bytes");
    }
    auto payload = cur.take(static_cast<std::size_t>(payload_len));

    if (comp_code == static_cast<std::uint8_t>(Compression::none)) {
      if (payload_len != expect) {
        throw CorruptionError("payload length " + std::to_string(payload_len) +
                              " does not match shape (" + std::to_string(expect) + " bytes)");
      }
      arr.data.assign(payload.begin(), payload.end());
    } else if (comp_code == static_cast<std::uint8_t>(Compression::deflate)) {
      arr.data.resize(static_cast<std::size_t>(expect));
      inflate_bytes(payload, arr.data);
    } else {
      throw FormatError("unknown compression code " + std::to_string(comp_code));
    }

    if (!out.emplace(std::move(path), std::move(arr)).second) {
      throw FormatError("duplicate field path");
    }
  }

  if (cur.remaining() != 0) {
    throw FormatError("trailing bytes after last field");
  }
  return out;
}

}  // namespace streamkit::wire
