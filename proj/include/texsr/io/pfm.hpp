#pragma once

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "texsr/error.hpp"
#include "texsr/io/binary.hpp"
#include "texsr/operators.hpp"
#include "texsr/raster.hpp"

namespace texsr::io {

/// Portable float map: "Pf" (1 channel) or "PF" (3 channels), rows stored
/// bottom to top, negative scale = little-endian.
struct PfmImage {
  Dims dims;
  std::size_t channels = 1;
  std::vector<float> samples;  ///< top-down, interleaved
};

inline constexpr std::uint64_t kMaxPfmSamples = std::uint64_t{1} << 31;

inline PfmImage decode_pfm(const std::vector<unsigned char>& bytes, const std::string& what) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& msg) -> ParseError {
    return ParseError(what + ": " + msg + " at byte offset " + std::to_string(pos));
  };
  auto skip_space = [&] {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
  };
  auto token = [&] {
    skip_space();
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) ++pos;
    if (start == pos) throw fail("unexpected end of header");
    return std::string(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                       bytes.begin() + static_cast<std::ptrdiff_t>(pos));
  };

  const std::string magic = token();
  PfmImage img;
  if (magic == "Pf") {
    img.channels = 1;
  } else if (magic == "PF") {
    img.channels = 3;
  } else {
    pos = 0;
    throw fail("bad magic '" + magic.substr(0, 8) + "'");
  }
  auto parse_dim = [&](const std::string& t) -> std::uint64_t {
    if (t.empty() || t.size() > 12 ||
        !std::all_of(t.begin(), t.end(), [](unsigned char c) { return std::isdigit(c); })) {
      throw fail("invalid dimension '" + t + "'");
    }
    return std::stoull(t);
  };
  const std::uint64_t w = parse_dim(token());
  const std::uint64_t h = parse_dim(token());
  const std::string scale_tok = token();
  double scale = 0.0;
  try {
    scale = std::stod(scale_tok);
  } catch (const std::exception&) {
    throw fail("invalid scale '" + scale_tok + "'");
  }
  if (scale == 0.0 || !std::isfinite(scale)) throw fail("invalid scale '" + scale_tok + "'");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw fail("missing header terminator");
  ++pos;
  if (w == 0 || h == 0) throw ParameterError(what + ": zero dimension");
  if (w > kMaxPfmSamples || h > kMaxPfmSamples || w * h > kMaxPfmSamples / img.channels) {
    throw ParameterError(what + ": dimensions " + std::to_string(w) + "x" + std::to_string(h) +
                         " overflow the sample limit");
  }
  img.dims = {static_cast<std::size_t>(w), static_cast<std::size_t>(h)};
  const std::size_t count = img.dims.size() * img.channels;
  if (bytes.size() - pos < count * 4) {
    throw fail("truncated pixel data (need " + std::to_string(count * 4) + " bytes, have " +
               std::to_string(bytes.size() - pos) + ")");
  }
  const bool little = scale < 0.0;
  img.samples.resize(count);
  const std::size_t row = img.dims.width * img.channels;
  for (std::size_t y = 0; y < img.dims.height; ++y) {
    const std::size_t src_row = img.dims.height - 1 - y;
    for (std::size_t i = 0; i < row; ++i) {
      unsigned char b[4];
      std::memcpy(b, bytes.data() + pos + (src_row * row + i) * 4, 4);
      if (little != (std::endian::native == std::endian::little)) std::reverse(b, b + 4);
      float f;
      std::memcpy(&f, b, 4);
      img.samples[y * row + i] = f;
    }
  }
  return img;
}

inline std::vector<unsigned char> encode_pfm(const PfmImage& img) {
  ByteWriter out;
  out.put_text(std::string(img.channels == 1 ? "Pf" : "PF") + "\n" +
               std::to_string(img.dims.width) + " " + std::to_string(img.dims.height) +
               "\n-1.0\n");
  const std::size_t row = img.dims.width * img.channels;
  for (std::size_t y = img.dims.height; y-- > 0;) {
    for (std::size_t i = 0; i < row; ++i) out.put(img.samples[y * row + i]);
  }
  return out.bytes();
}

inline Raster read_pfm(const std::filesystem::path& path) {
  const PfmImage img = decode_pfm(read_file(path), path.string());
  if (img.channels != 1) throw ParseError(path.string() + ": expected a 1-channel Pf file");
  Raster r(img.dims);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = img.samples[i];
  return r;
}

inline void write_pfm(const std::filesystem::path& path, const Raster& r) {
  PfmImage img;
  img.dims = r.dims();
  img.samples.resize(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) img.samples[i] = static_cast<float>(r[i]);
  write_file(path, encode_pfm(img));
}

/// Flows travel as 3-channel PF with a zero third channel.
inline VecField read_pfm_flow(const std::filesystem::path& path) {
  const PfmImage img = decode_pfm(read_file(path), path.string());
  if (img.channels != 3) throw ParseError(path.string() + ": expected a 3-channel PF flow file");
  VecField f(img.dims);
  for (std::size_t i = 0; i < img.dims.size(); ++i) {
    f.x[i] = img.samples[3 * i];
    f.y[i] = img.samples[3 * i + 1];
  }
  return f;
}

inline void write_pfm_flow(const std::filesystem::path& path, const VecField& f) {
  PfmImage img;
  img.dims = f.dims();
  img.channels = 3;
  img.samples.assign(f.dims().size() * 3, 0.0f);
  for (std::size_t i = 0; i < f.dims().size(); ++i) {
    img.samples[3 * i] = static_cast<float>(f.x[i]);
    img.samples[3 * i + 1] = static_cast<float>(f.y[i]);
  }
  write_file(path, encode_pfm(img));
}

}  // namespace texsr::io
