#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <zlib.h>

#include "touchbench/common.hpp"

// Chunked hierarchical keyed-array container.
//
// File layout (all integers little-endian):
//   bytes 0..7    magic "TBCONT01"
//   bytes 8..11   u32 format version (currently 1)
//   bytes 12..19  u64 directory offset
//   ...           chunk payloads, in write order
//   directory     u32 entry count, then per entry:
//                   u16 key length + key bytes
//                   u8 dtype, u8 compressed, u8 chunked-along-axis-0
//                   u32 ndim + i64 dims
//                   u32 chunk count, then per chunk u64 offset / u64
//                   stored size / u64 raw size
//
// Chunks are optionally deflate-compressed at level 4. Writing the same
// arrays in the same order produces byte-identical files.

namespace tb::container {

inline constexpr char kMagic[8] = {'T', 'B', 'C', 'O', 'N', 'T', '0', '1'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr int kDeflateLevel = 4;

enum class DType : std::uint8_t { U8 = 0, I32 = 1, F32 = 2, F64 = 3, Bytes = 4 };

inline std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::U8: return 1;
    case DType::I32: return 4;
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::Bytes: return 1;
  }
  throw Error("bad dtype");
}

struct ChunkRef {
  std::uint64_t offset = 0, stored_size = 0, raw_size = 0;
};

struct Entry {
  DType dtype = DType::U8;
  bool compressed = false;
  bool chunked = false;  // one chunk per index along axis 0
  std::vector<std::int64_t> shape;
  std::vector<ChunkRef> chunks;

  std::int64_t element_count() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
  std::size_t byte_size() const { return element_count() * dtype_size(dtype); }
};

namespace detail {

inline std::vector<std::uint8_t> deflate_bytes(const std::uint8_t* data,
                                               std::size_t n) {
  uLongf bound = compressBound(static_cast<uLong>(n));
  std::vector<std::uint8_t> out(bound);
  if (compress2(out.data(), &bound, data, static_cast<uLong>(n), kDeflateLevel) !=
      Z_OK)
    throw Error("deflate failed");
  out.resize(bound);
  return out;
}

inline void inflate_bytes(const std::uint8_t* src, std::size_t src_n,
                          std::uint8_t* dst, std::size_t dst_n) {
  uLongf got = static_cast<uLongf>(dst_n);
  if (uncompress(dst, &got, src, static_cast<uLong>(src_n)) != Z_OK ||
      got != dst_n)
    throw ParseError("inflate failed or size mismatch");
}

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace detail

class Writer {
 public:
  explicit Writer(const std::filesystem::path& file, bool compress = true)
      : path_(file), compress_(compress), out_(file, std::ios::binary) {
    if (!out_) throw IoError("cannot open container for write: " + file.string());
    out_.write(kMagic, sizeof(kMagic));
    detail::put<std::uint32_t>(out_, kVersion);
    detail::put<std::uint64_t>(out_, 0);  // directory offset backpatched later
  }

  /// Adds one array. With per_frame_chunks the array is split along axis 0
  /// so readers can fetch single frames.
  void add(const std::string& key, DType dtype, std::vector<std::int64_t> shape,
           const void* data, bool per_frame_chunks = false) {
    if (finished_) throw Error("Writer::add after finish");
    if (entries_.count(key)) throw Error("duplicate container key: " + key);
    for (auto d : shape)
      if (d < 0) throw Error("negative dimension for key " + key);
    Entry e;
    e.dtype = dtype;
    e.compressed = compress_;
    e.shape = std::move(shape);
    e.chunked = per_frame_chunks && !e.shape.empty() && e.shape[0] > 0;
    const auto* bytes = static_cast<const std::uint8_t*>(data);
    const std::size_t total = e.byte_size();
    if (e.chunked) {
      const std::size_t per = total / e.shape[0];
      for (std::int64_t k = 0; k < e.shape[0]; ++k)
        e.chunks.push_back(write_chunk(bytes + k * per, per));
    } else {
      e.chunks.push_back(write_chunk(bytes, total));
    }
    order_.push_back(key);
    entries_[key] = std::move(e);
  }

  void add_bytes(const std::string& key, const std::string& payload) {
    add(key, DType::Bytes, {static_cast<std::int64_t>(payload.size())},
        payload.data());
  }

  template <class T>
  void add_vec(const std::string& key, DType dtype, std::vector<std::int64_t> shape,
               const std::vector<T>& v, bool per_frame_chunks = false) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    if (n != static_cast<std::int64_t>(v.size()))
      throw ShapeError("container add " + key + ": data size mismatch");
    add(key, dtype, std::move(shape), v.data(), per_frame_chunks);
  }

  void finish() {
    if (finished_) return;
    finished_ = true;
    const std::uint64_t dir_offset = static_cast<std::uint64_t>(out_.tellp());
    detail::put<std::uint32_t>(out_, static_cast<std::uint32_t>(order_.size()));
    for (const auto& key : order_) {
      const Entry& e = entries_.at(key);
      detail::put<std::uint16_t>(out_, static_cast<std::uint16_t>(key.size()));
      out_.write(key.data(), key.size());
      detail::put<std::uint8_t>(out_, static_cast<std::uint8_t>(e.dtype));
      detail::put<std::uint8_t>(out_, e.compressed ? 1 : 0);
      detail::put<std::uint8_t>(out_, e.chunked ? 1 : 0);
      detail::put<std::uint32_t>(out_, static_cast<std::uint32_t>(e.shape.size()));
      for (auto d : e.shape) detail::put<std::int64_t>(out_, d);
      detail::put<std::uint32_t>(out_, static_cast<std::uint32_t>(e.chunks.size()));
      for (const auto& c : e.chunks) {
        detail::put<std::uint64_t>(out_, c.offset);
        detail::put<std::uint64_t>(out_, c.stored_size);
        detail::put<std::uint64_t>(out_, c.raw_size);
      }
    }
    out_.seekp(12);
    detail::put<std::uint64_t>(out_, dir_offset);
    out_.flush();
    if (!out_) throw IoError("container write failed: " + path_.string());
  }

  ~Writer() {
    try {
      finish();
    } catch (...) {
    }
  }

 private:
  ChunkRef write_chunk(const std::uint8_t* data, std::size_t n) {
    ChunkRef c;
    c.offset = static_cast<std::uint64_t>(out_.tellp());
    c.raw_size = n;
    if (compress_) {
      auto z = detail::deflate_bytes(data, n);
      c.stored_size = z.size();
      out_.write(reinterpret_cast<const char*>(z.data()), z.size());
    } else {
      c.stored_size = n;
      out_.write(reinterpret_cast<const char*>(data), n);
    }
    return c;
  }

  std::filesystem::path path_;
  bool compress_;
  bool finished_ = false;
  std::ofstream out_;
  std::vector<std::string> order_;
  std::map<std::string, Entry> entries_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& file) : path_(file), in_(file, std::ios::binary) {
    if (!in_) throw IoError("cannot open container: " + file.string());
    char magic[8];
    in_.read(magic, 8);
    if (!in_ || std::memcmp(magic, kMagic, 8) != 0)
      throw ParseError("not a container file: " + file.string());
    const auto version = detail::get<std::uint32_t>(in_);
    if (version != kVersion)
      throw ParseError("unsupported container version " + std::to_string(version));
    const auto dir_offset = detail::get<std::uint64_t>(in_);
    if (dir_offset == 0) throw ParseError("container never finished: " + file.string());
    in_.seekg(static_cast<std::streamoff>(dir_offset));
    const auto n = detail::get<std::uint32_t>(in_);
    for (std::uint32_t i = 0; i < n; ++i) {
      const auto klen = detail::get<std::uint16_t>(in_);
      std::string key(klen, '\0');
      in_.read(key.data(), klen);
      Entry e;
      e.dtype = static_cast<DType>(detail::get<std::uint8_t>(in_));
      e.compressed = detail::get<std::uint8_t>(in_) != 0;
      e.chunked = detail::get<std::uint8_t>(in_) != 0;
      const auto ndim = detail::get<std::uint32_t>(in_);
      for (std::uint32_t d = 0; d < ndim; ++d)
        e.shape.push_back(detail::get<std::int64_t>(in_));
      const auto nchunks = detail::get<std::uint32_t>(in_);
      for (std::uint32_t c = 0; c < nchunks; ++c) {
        ChunkRef cr;
        cr.offset = detail::get<std::uint64_t>(in_);
        cr.stored_size = detail::get<std::uint64_t>(in_);
        cr.raw_size = detail::get<std::uint64_t>(in_);
        e.chunks.push_back(cr);
      }
      order_.push_back(key);
      entries_[key] = std::move(e);
    }
    if (!in_) throw ParseError("truncated container directory: " + file.string());
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const std::vector<std::string>& keys() const { return order_; }

  const Entry& info(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end())
      throw ParseError("container " + path_.string() + ": missing group " + key);
    return it->second;
  }

  /// Payload bytes actually read from disk so far (chunk payloads only,
  /// not the directory); lets tests verify random access stays chunk-local.
  std::uint64_t bytes_read() const { return bytes_read_; }

  std::vector<std::uint8_t> read_raw(const std::string& key) {
    const Entry& e = info(key);
    std::vector<std::uint8_t> out(e.byte_size());
    std::size_t at = 0;
    for (const auto& c : e.chunks) {
      read_chunk(e, c, out.data() + at);
      at += c.raw_size;
    }
    return out;
  }

  /// Reads only the chunk holding index k along axis 0.
  std::vector<std::uint8_t> read_frame_raw(const std::string& key, std::int64_t k) {
    const Entry& e = info(key);
    if (!e.chunked)
      throw Error("container key " + key + " is not chunked per frame");
    if (k < 0 || k >= static_cast<std::int64_t>(e.chunks.size()))
      throw Error("frame index out of range for key " + key);
    std::vector<std::uint8_t> out(e.chunks[k].raw_size);
    read_chunk(e, e.chunks[k], out.data());
    return out;
  }

  template <class T>
  std::vector<T> read_as(const std::string& key) {
    auto raw = read_raw(key);
    std::vector<T> out(raw.size() / sizeof(T));
    std::memcpy(out.data(), raw.data(), out.size() * sizeof(T));
    return out;
  }

  template <class T>
  std::vector<T> read_frame_as(const std::string& key, std::int64_t k) {
    auto raw = read_frame_raw(key, k);
    std::vector<T> out(raw.size() / sizeof(T));
    std::memcpy(out.data(), raw.data(), out.size() * sizeof(T));
    return out;
  }

  std::string read_string(const std::string& key) {
    auto raw = read_raw(key);
    return std::string(raw.begin(), raw.end());
  }

 private:
  void read_chunk(const Entry& e, const ChunkRef& c, std::uint8_t* dst) {
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(c.offset));
    if (e.compressed) {
      std::vector<std::uint8_t> z(c.stored_size);
      in_.read(reinterpret_cast<char*>(z.data()), z.size());
      if (!in_) throw ParseError("truncated chunk in " + path_.string());
      detail::inflate_bytes(z.data(), z.size(), dst, c.raw_size);
    } else {
      in_.read(reinterpret_cast<char*>(dst), c.raw_size);
      if (!in_) throw ParseError("truncated chunk in " + path_.string());
    }
    bytes_read_ += c.stored_size;
  }

  std::filesystem::path path_;
  std::ifstream in_;
  std::vector<std::string> order_;
  std::map<std::string, Entry> entries_;
  std::uint64_t bytes_read_ = 0;
};

}  // namespace tb::container
