#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <random>

#include "streamkit/wire/container.hpp"
#include "streamkit/wire/frame.hpp"

using namespace streamkit;
using namespace streamkit::wire;

namespace {

std::vector<std::uint8_t> bytes_of(std::string_view s) {
  return {s.begin(), s.end()};
}

std::vector<std::uint8_t> random_bytes(std::mt19937_64& rng, std::size_t n) {
  std::vector<std::uint8_t> out(n);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng());
  return out;
}

// Independent byte-level assembler for the container format, built straight
// from the format definition. Kept free of the encoder's code paths so the
// two can disagree.
void oracle_put_u16(std::vector<std::uint8_t>& o, std::uint16_t v) {
  o.push_back(v & 0xff);
  o.push_back((v >> 8) & 0xff);
}
void oracle_put_u32(std::vector<std::uint8_t>& o, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) o.push_back((v >> (8 * i)) & 0xff);
}
void oracle_put_u64(std::vector<std::uint8_t>& o, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) o.push_back((v >> (8 * i)) & 0xff);
}

}  // namespace

TEST_CASE("frame: encode matches the byte layout") {
  auto f = encode_frame(bytes_of("abc"));
  const std::uint8_t expect[] = {0x03, 0, 0, 0, 0, 0, 0, 0, 0x61, 0x62, 0x63};
  REQUIRE(f.size() == sizeof(expect));
  CHECK(std::memcmp(f.data(), expect, sizeof(expect)) == 0);
}

TEST_CASE("frame: empty payload is 8 zero bytes") {
  auto f = encode_frame({});
  REQUIRE(f.size() == 8);
  for (auto b : f) CHECK(b == 0);
}

TEST_CASE("frame: oversize payload rejected") {
  std::vector<std::uint8_t> payload(17);
  CHECK_THROWS_AS(encode_frame(payload, 16), FrameTooLarge);
  CHECK_NOTHROW(encode_frame(payload, 17));
}

TEST_CASE("frame: 1 MiB round trip") {
  std::mt19937_64 rng(7);
  auto payload = random_bytes(rng, 1 << 20);
  auto encoded = encode_frame(payload);
  CHECK(encoded.size() == (1u << 20) + 8);
  SpanReader r(encoded);
  auto back = read_frame(r);
  REQUIRE(back.has_value());
  CHECK(*back == payload);
  CHECK(read_frame(r) == std::nullopt);
}

TEST_CASE("frame: decode is inverse of encode") {
  auto encoded = encode_frame(bytes_of("abc"));
  SpanReader r(encoded);
  auto p = read_frame(r);
  REQUIRE(p.has_value());
  CHECK(*p == bytes_of("abc"));
}

TEST_CASE("frame: 7-byte input is a truncation error") {
  std::vector<std::uint8_t> short_header(7, 0);
  SpanReader r(short_header);
  CHECK_THROWS_AS(read_frame(r), TruncatedFrame);
}

TEST_CASE("frame: truncated payload is a truncation error") {
  auto encoded = encode_frame(bytes_of("abcdef"));
  encoded.resize(encoded.size() - 2);
  SpanReader r(encoded);
  CHECK_THROWS_AS(read_frame(r), TruncatedFrame);
}

TEST_CASE("frame: declared length above max drops the connection") {
  auto encoded = encode_frame(bytes_of("abc"));
  SpanReader r(encoded);
  CHECK_THROWS_AS(read_frame(r, 2), FrameTooLarge);
}

TEST_CASE("frame: concatenation of N frames decodes to the N payloads in order") {
  std::mt19937_64 rng(42);
  for (int round = 0; round < 20; ++round) {
    const std::size_t n = rng() % 100 + 1;
    std::vector<std::vector<std::uint8_t>> payloads;
    std::vector<std::uint8_t> stream;
    for (std::size_t i = 0; i < n; ++i) {
      payloads.push_back(random_bytes(rng, rng() % 300));
      append_frame(stream, payloads.back());
    }
    auto decoded = decode_frames(stream);
    CHECK(decoded == payloads);
  }
}

TEST_CASE("frame: incremental parser agrees with whole-buffer decode at every split") {
  std::mt19937_64 rng(3);
  std::vector<std::vector<std::uint8_t>> payloads;
  std::vector<std::uint8_t> stream;
  for (int i = 0; i < 5; ++i) {
    payloads.push_back(random_bytes(rng, rng() % 40));
    append_frame(stream, payloads.back());
  }

  for (std::size_t chunk = 1; chunk <= stream.size(); ++chunk) {
    FrameParser parser;
    std::vector<std::vector<std::uint8_t>> got;
    for (std::size_t off = 0; off < stream.size(); off += chunk) {
      const std::size_t take = std::min(chunk, stream.size() - off);
      parser.push(std::span(stream).subspan(off, take));
      while (auto f = parser.next()) got.push_back(std::move(*f));
    }
    parser.finish();
    CHECK(got == payloads);
  }
}

TEST_CASE("frame: parser flags truncation at end of stream") {
  auto encoded = encode_frame(bytes_of("abcdef"));
  FrameParser parser;
  parser.push(std::span(encoded).first(encoded.size() - 1));
  CHECK(parser.mid_frame());
  CHECK_THROWS_AS(parser.finish(), TruncatedFrame);
}

// ---------------------------------------------------------------------------
// LSC1 container
// ---------------------------------------------------------------------------

TEST_CASE("container: empty batch is exactly 9 bytes") {
  auto blob = encode_container({});
  std::vector<std::uint8_t> expect = {'L', 'S', 'C', '1', 1, 0, 0, 0, 0};
  CHECK(blob == expect);
  CHECK(decode_container(blob).empty());
}

TEST_CASE("container: single u64 field matches the hand-assembled layout") {
  Array arr;
  arr.dtype = Dtype::u64;
  arr.shape = {4};
  const std::uint64_t values[4] = {10, 20, 30, 0xdeadbeefcafe};
  arr.data.resize(32);
  std::memcpy(arr.data.data(), values, 32);

  ArrayMap batch;
  batch["/data/timestamp"] = arr;
  auto blob = encode_container(batch);

  // 9-byte header + (2+15+1+1+8+1+8+32) record bytes
  CHECK(blob.size() == 9 + 68);

  std::vector<std::uint8_t> expect;
  expect.insert(expect.end(), {'L', 'S', 'C', '1'});
  expect.push_back(1);
  oracle_put_u32(expect, 1);
  const std::string path = "/data/timestamp";
  oracle_put_u16(expect, static_cast<std::uint16_t>(path.size()));
  expect.insert(expect.end(), path.begin(), path.end());
  expect.push_back(6);  // dtype code for u64
  expect.push_back(1);  // ndim
  oracle_put_u64(expect, 4);
  expect.push_back(0);  // no compression
  oracle_put_u64(expect, 32);
  for (auto v : values) oracle_put_u64(expect, v);

  CHECK(blob == expect);
}

TEST_CASE("container: deflate round-trips 1024 zero f32") {
  Array arr;
  arr.dtype = Dtype::f32;
  arr.shape = {1024};
  arr.data.assign(4096, 0);

  ArrayMap batch;
  batch["/data/zeros"] = arr;
  auto blob = encode_container(batch, Compression::deflate, 3);
  CHECK(blob.size() < 9 + 2 + 11 + 1 + 1 + 8 + 1 + 8 + 4096);  // actually compressed

  auto back = decode_container(blob);
  REQUIRE(back.size() == 1);
  CHECK(back.at("/data/zeros") == arr);
}

TEST_CASE("container: bad magic is a format error") {
  auto blob = encode_container({});
  blob[0] = 'X';
  blob[1] = 'X';
  CHECK_THROWS_AS(decode_container(blob), FormatError);
}

TEST_CASE("container: mismatched leading dims rejected") {
  ArrayMap batch;
  batch["/a"] = Array{Dtype::u8, {2}, {1, 2}};
  batch["/b"] = Array{Dtype::u8, {3}, {1, 2, 3}};
  CHECK_THROWS_AS(encode_container(batch), BatchShapeError);
}

TEST_CASE("container: path rules enforced on encode") {
  ArrayMap no_slash;
  no_slash["nope"] = Array{Dtype::u8, {1}, {0}};
  CHECK_THROWS_AS(encode_container(no_slash), BatchShapeError);

  ArrayMap nul;
  nul[std::string("/a\0b", 4)] = Array{Dtype::u8, {1}, {0}};
  CHECK_THROWS_AS(encode_container(nul), BatchShapeError);
}

TEST_CASE("container: duplicate path in blob is a format error") {
  ArrayMap batch;
  batch["/a"] = Array{Dtype::u8, {1}, {7}};
  auto blob = encode_container(batch);
  // Append a second copy of the same record and bump field_count.
  std::vector<std::uint8_t> record(blob.begin() + 9, blob.end());
  blob.insert(blob.end(), record.begin(), record.end());
  blob[5] = 2;
  CHECK_THROWS_AS(decode_container(blob), FormatError);
}

namespace {

Array random_array(std::mt19937_64& rng, std::uint64_t leading) {
  Array arr;
  arr.dtype = static_cast<Dtype>(rng() % 10);
  arr.shape = {leading};
  const int extra_dims = static_cast<int>(rng() % 3);
  for (int i = 0; i < extra_dims; ++i) arr.shape.push_back(rng() % 5 + 1);
  arr.data = random_bytes(rng, static_cast<std::size_t>(arr.byte_size()));
  return arr;
}

ArrayMap random_batch(std::mt19937_64& rng) {
  ArrayMap batch;
  const std::uint64_t leading = rng() % 6;  // zero-row batches are legal
  const int fields = static_cast<int>(rng() % 5);
  for (int i = 0; i < fields; ++i) {
    batch["/field/" + std::to_string(rng() % 1000)] = random_array(rng, leading);
  }
  return batch;
}

}  // namespace

TEST_CASE("container: random batches round-trip with and without compression") {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 200; ++i) {
    auto batch = random_batch(rng);
    const Compression comp = (i % 2) ? Compression::deflate : Compression::none;
    auto blob = encode_container(batch, comp, 1 + static_cast<int>(rng() % 9));
    CHECK(decode_container(blob) == batch);
  }
}

TEST_CASE("container: encoding is deterministic") {
  std::mt19937_64 rng(123);
  auto batch = random_batch(rng);
  CHECK(encode_container(batch, Compression::deflate, 3) ==
        encode_container(batch, Compression::deflate, 3));
}

TEST_CASE("container: truncation at every offset errors, never crashes") {
  std::mt19937_64 rng(5);
  ArrayMap batch;
  batch["/data/a"] = random_array(rng, 3);
  batch["/data/b"] = random_array(rng, 3);
  auto blob = encode_container(batch, Compression::deflate, 6);

  for (std::size_t cut = 0; cut < blob.size(); ++cut) {
    std::span<const std::uint8_t> prefix(blob.data(), cut);
    CHECK_THROWS_AS(decode_container(prefix), ContainerError);
  }
}

TEST_CASE("container: fuzzed mutations error cleanly") {
  std::mt19937_64 rng(2024);
  ArrayMap batch;
  batch["/x"] = random_array(rng, 2);
  batch["/y"] = random_array(rng, 2);
  const auto good = encode_container(batch, Compression::deflate, 6);

  int decoded_ok = 0;
  for (int i = 0; i < 5000; ++i) {
    auto blob = good;
    const int flips = 1 + static_cast<int>(rng() % 8);
    for (int f = 0; f < flips; ++f) {
      blob[rng() % blob.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
    }
    try {
      (void)decode_container(blob);
      ++decoded_ok;  // mutation missed anything load-bearing
    } catch (const ContainerError&) {
    }
  }
  CHECK(decoded_ok >= 0);  // reaching here without UB is the property
}

TEST_CASE("container: declared giant shape is bounded by the decode limit") {
  // Hand-build a header that promises a 2^40-element field.
  std::vector<std::uint8_t> blob = {'L', 'S', 'C', '1', 1};
  oracle_put_u32(blob, 1);
  oracle_put_u16(blob, 2);
  blob.push_back('/');
  blob.push_back('g');
  blob.push_back(6);  // u64
  blob.push_back(1);  // ndim
  oracle_put_u64(blob, 1ull << 40);
  blob.push_back(0);
  oracle_put_u64(blob, 8);
  oracle_put_u64(blob, 1);
  CHECK_THROWS_AS(decode_container(blob), CorruptionError);
}
