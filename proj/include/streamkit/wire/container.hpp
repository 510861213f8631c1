#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "streamkit/error.hpp"

namespace streamkit::wire {

// Element bytes are stored little-endian; host must match.
static_assert(__BYTE_ORDER__ == __ORDER_LITTLE_ENDIAN__,
              "streamkit requires a little-endian platform");

//
// LSC1 container: a self-describing blob of named, typed, shaped arrays.
//
//   +------+---------+----------------+----------------------------+
//   | LSC1 | ver u8  | field_count u32|  field records, sorted     |
//   +------+---------+----------------+----------------------------+
//
// Field record:
//   path_len u16 | path | dtype u8 | ndim u8 | dims u64 x ndim |
//   compression u8 | payload_len u64 | payload
//
// All integers little-endian. Records are sorted lexicographically by path
// so that encoding the same batch twice yields identical bytes.
//

inline constexpr char kContainerMagic[4] = {'L', 'S', 'C', '1'};
inline constexpr std::uint8_t kContainerVersion = 1;

enum class Dtype : std::uint8_t {
  u8 = 0,
  i8 = 1,
  u16 = 2,
  i16 = 3,
  u32 = 4,
  i32 = 5,
  u64 = 6,
  i64 = 7,
  f32 = 8,
  f64 = 9,
};

std::size_t dtype_size(Dtype d) noexcept;
std::string_view dtype_name(Dtype d) noexcept;
std::optional<Dtype> dtype_from_code(std::uint8_t code) noexcept;
std::optional<Dtype> dtype_from_name(std::string_view name) noexcept;

enum class Compression : std::uint8_t {
  none = 0,
  deflate = 1,
};

class ContainerError : public Error {
 public:
  using Error::Error;
};

// Structurally invalid blob: bad magic, bad version, bad dtype code,
// duplicate or malformed path, trailing bytes.
class FormatError final : public ContainerError {
 public:
  using ContainerError::ContainerError;
};

// Blob shape is fine but the data does not add up: truncation, payload
// length mismatch, failed decompression.
class CorruptionError final : public ContainerError {
 public:
  using ContainerError::ContainerError;
};

// Batch being encoded violates the container invariants (mixed leading
// dims, bad path).
class BatchShapeError final : public ContainerError {
 public:
  using ContainerError::ContainerError;
};

// One named array: dtype, shape, and row-major little-endian element bytes.
struct Array {
  Dtype dtype{Dtype::u8};
  std::vector<std::uint64_t> shape;
  std::vector<std::uint8_t> data;

  std::uint64_t element_count() const;  // product of dims, overflow-checked
  std::uint64_t byte_size() const;      // element_count * sizeof(dtype), overflow-checked

  bool operator==(const Array&) const = default;
};

// Container content, keyed by field path ("/data/timestamp"). std::map keeps
// lexicographic order, which is the canonical record order.
using ArrayMap = std::map<std::string, Array>;

// Serializes a batch. All arrays must have ndim >= 1 and share the same
// leading dimension; paths must start with '/' and contain no NUL.
// level is the deflate level (1..9), ignored for Compression::none.
std::vector<std::uint8_t> encode_container(const ArrayMap& batch,
                                           Compression compression = Compression::none,
                                           int level = 6);

// Inverse of encode_container. Safe on arbitrary bytes: throws FormatError /
// CorruptionError, never crashes. max_total_bytes bounds the decoded element
// data so a hostile blob cannot demand unbounded allocation.
ArrayMap decode_container(std::span<const std::uint8_t> blob,
                          std::uint64_t max_total_bytes = 1ull << 30);

}  // namespace streamkit::wire
