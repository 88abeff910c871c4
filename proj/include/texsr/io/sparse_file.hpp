#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "texsr/error.hpp"
#include "texsr/io/binary.hpp"
#include "texsr/sparse.hpp"

namespace texsr::io {

/// "TSR1" | u32 rows | u32 cols | u64 nnz | u64 offsets[rows+1] | u32 columns[nnz] | f32 values[nnz]
inline std::vector<unsigned char> encode_sparse_map(const SparseLinearMap& a) {
  if (a.rows() > std::numeric_limits<std::uint32_t>::max() ||
      a.cols() > std::numeric_limits<std::uint32_t>::max()) {
    throw ParameterError("TSR1: map dimensions exceed the u32 range");
  }
  ByteWriter out;
  out.put_text("TSR1");
  out.put(static_cast<std::uint32_t>(a.rows()));
  out.put(static_cast<std::uint32_t>(a.cols()));
  out.put(static_cast<std::uint64_t>(a.nnz()));
  for (auto o : a.row_offsets()) out.put(static_cast<std::uint64_t>(o));
  for (auto c : a.columns()) out.put(static_cast<std::uint32_t>(c));
  for (double v : a.values()) out.put(static_cast<float>(v));
  return out.bytes();
}

inline SparseLinearMap decode_sparse_map(const std::vector<unsigned char>& bytes,
                                         const std::string& what) {
  ByteReader in(bytes, what);
  in.require(4);
  if (std::string(bytes.begin(), bytes.begin() + 4) != "TSR1") {
    throw ParseError(what + ": bad magic (expected \"TSR1\") at byte offset 0");
  }
  (void)in.get<std::uint32_t>();
  const auto rows = in.get<std::uint32_t>();
  const auto cols = in.get<std::uint32_t>();
  const auto nnz = in.get<std::uint64_t>();
  // Sizes are checked against the file length before anything is allocated.
  const std::uint64_t need = (static_cast<std::uint64_t>(rows) + 1) * 8;
  if (in.remaining() < need || (in.remaining() - need) / 8 < nnz) {
    throw ParseError(what + ": nnz mismatch, header claims " + std::to_string(nnz) +
                     " entries but the file holds " + std::to_string(in.remaining()) +
                     " payload bytes");
  }
  if (in.remaining() != need + nnz * 8) {
    throw ParseError(what + ": nnz mismatch, payload is " + std::to_string(in.remaining()) +
                     " bytes, expected " + std::to_string(need + nnz * 8));
  }
  std::vector<std::uint64_t> off(static_cast<std::size_t>(rows) + 1);
  for (std::size_t r = 0; r <= rows; ++r) {
    off[r] = in.get<std::uint64_t>();
    if (r == 0 && off[r] != 0) throw ParseError(what + ": row offset 0 must be zero");
    if (r > 0 && off[r] < off[r - 1]) {
      throw ParseError(what + ": row offsets decrease at row " + std::to_string(r - 1));
    }
  }
  if (off.back() != nnz) {
    throw ParseError(what + ": nnz mismatch, last row offset " + std::to_string(off.back()) +
                     " != nnz " + std::to_string(nnz));
  }
  std::vector<std::uint32_t> col(nnz);
  for (auto& c : col) c = in.get<std::uint32_t>();
  std::vector<double> val(nnz);
  for (auto& v : val) v = in.get<float>();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::uint64_t k = off[r]; k < off[r + 1]; ++k) {
      if (col[k] >= cols) {
        throw ParseError(what + ": column index " + std::to_string(col[k]) + " out of range [0, " +
                         std::to_string(cols) + ") at row " + std::to_string(r) + ", entry " +
                         std::to_string(k));
      }
      if (k > off[r] && col[k] <= col[k - 1]) {
        throw ParseError(what + ": columns not strictly increasing at row " + std::to_string(r) +
                         ", entry " + std::to_string(k));
      }
      if (!std::isfinite(val[k])) {
        throw ParseError(what + ": non-finite value at row " + std::to_string(r) + ", entry " +
                         std::to_string(k));
      }
    }
  }
  return {rows, cols, std::move(off), std::move(col), std::move(val)};
}

inline SparseLinearMap read_sparse_map(const std::filesystem::path& path) {
  return decode_sparse_map(read_file(path), path.string());
}

inline void write_sparse_map(const std::filesystem::path& path, const SparseLinearMap& a) {
  write_file(path, encode_sparse_map(a));
}

}  // namespace texsr::io
