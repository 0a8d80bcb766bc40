#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cplvad/errors.hpp"
#include "cplvad/tensor.hpp"

namespace cplvad {

// One named trainable tensor with its gradient accumulator. rank records the
// logical checkpoint rank (1 for vectors/scalars, 2 for matrices); rank-1
// tensors are stored in memory as 1 x len.
template <typename T>
struct ParamTensor {
  std::string name;
  std::uint8_t rank = 2;
  Tensor<T> value;
  Tensor<T> grad;
};

template <typename T>
struct ParamSet {
  std::vector<ParamTensor<T>> items;

  ParamTensor<T>& add(const std::string& name, std::uint8_t rank,
                      std::size_t rows, std::size_t cols) {
    items.push_back(
        ParamTensor<T>{name, rank, Tensor<T>(rows, cols), Tensor<T>(rows, cols)});
    return items.back();
  }

  ParamTensor<T>* find(const std::string& name) {
    for (auto& p : items)
      if (p.name == name) return &p;
    return nullptr;
  }

  const ParamTensor<T>* find(const std::string& name) const {
    for (const auto& p : items)
      if (p.name == name) return &p;
    return nullptr;
  }

  void zero_grads() {
    for (auto& p : items)
      std::fill(p.grad.v.begin(), p.grad.v.end(), T(0));
  }

  std::size_t coord_count() const {
    std::size_t n = 0;
    for (const auto& p : items) n += p.value.size();
    return n;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& p : items) {
      auto& q = out.add(p.name, p.rank, p.value.rows, p.value.cols);
      q.value = p.value.template cast<U>();
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Checkpoint file: magic "CPLP", u32 version, u32 count, then per parameter
// u16 name length + UTF-8 name, u8 rank, rank x u32 dims, float32 payload.
// Little-endian throughout.
// ---------------------------------------------------------------------------

namespace detail {

template <typename V>
inline void write_raw(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
inline void read_raw(std::istream& is, V& v, const char* what) {
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is)
    fail(ErrorCode::truncated_payload,
         std::string("checkpoint: truncated while reading ") + what);
}

}  // namespace detail

constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path,
                            const ParamSet<float>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorCode::io, "cannot open for write: " + path);
  os.write("CPLP", 4);
  detail::write_raw(os, kCheckpointVersion);
  detail::write_raw(os, static_cast<std::uint32_t>(params.items.size()));
  for (const auto& p : params.items) {
    detail::write_raw(os, static_cast<std::uint16_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::write_raw(os, p.rank);
    if (p.rank == 1) {
      detail::write_raw(os, static_cast<std::uint32_t>(p.value.size()));
    } else {
      detail::write_raw(os, static_cast<std::uint32_t>(p.value.rows));
      detail::write_raw(os, static_cast<std::uint32_t>(p.value.cols));
    }
    os.write(reinterpret_cast<const char*>(p.value.v.data()),
             static_cast<std::streamsize>(p.value.size() * sizeof(float)));
  }
  if (!os) fail(ErrorCode::io, "write failed: " + path);
}

inline ParamSet<float> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::io, "cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CPLP", 4) != 0)
    fail(ErrorCode::bad_magic, "checkpoint: bad magic in " + path);
  std::uint32_t version = 0, count = 0;
  detail::read_raw(is, version, "version");
  if (version != kCheckpointVersion)
    fail(ErrorCode::version_mismatch,
         "checkpoint: version " + std::to_string(version));
  detail::read_raw(is, count, "count");
  ParamSet<float> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t name_len = 0;
    detail::read_raw(is, name_len, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) fail(ErrorCode::truncated_payload, "checkpoint: truncated name");
    std::uint8_t rank = 0;
    detail::read_raw(is, rank, "rank");
    if (rank < 1 || rank > 2)
      fail(ErrorCode::dimension_overflow,
           "checkpoint: unsupported rank " + std::to_string(rank));
    std::size_t rows = 1, cols = 1;
    if (rank == 1) {
      std::uint32_t len = 0;
      detail::read_raw(is, len, "dims");
      cols = len;
    } else {
      std::uint32_t r = 0, c = 0;
      detail::read_raw(is, r, "dims");
      detail::read_raw(is, c, "dims");
      rows = r;
      cols = c;
    }
    if (rows * cols > (std::size_t{1} << 30))
      fail(ErrorCode::dimension_overflow, "checkpoint: oversized tensor");
    auto& p = params.add(name, rank, rows, cols);
    is.read(reinterpret_cast<char*>(p.value.v.data()),
            static_cast<std::streamsize>(rows * cols * sizeof(float)));
    if (!is)
      fail(ErrorCode::truncated_payload,
           "checkpoint: truncated payload for " + name);
  }
  return params;
}

}  // namespace cplvad
