#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "texsr/error.hpp"
#include "texsr/io/binary.hpp"
#include "texsr/learn.hpp"

namespace texsr::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  LearnableParams params;
  AdamMoments moments;
  std::uint64_t epoch = 0;
};

/// "TSRC" | u32 version | u64 step | u64 epoch | u64 lambda w | u64 lambda h | u64 views |
/// u64 prior params | f64 payload: lambda_raw, sigma_raw, sigma0, prior, adam m, adam v
inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& c) {
  const auto flat = c.params.pack();
  if (c.moments.first.size() != flat.size() || c.moments.second.size() != flat.size()) {
    throw StructuralError("checkpoint: Adam moments do not match the parameter count");
  }
  ByteWriter out;
  out.put_text("TSRC");
  out.put(kCheckpointVersion);
  out.put(c.moments.step);
  out.put(c.epoch);
  out.put(static_cast<std::uint64_t>(c.params.lambda_raw.width()));
  out.put(static_cast<std::uint64_t>(c.params.lambda_raw.height()));
  out.put(static_cast<std::uint64_t>(c.params.sigma_raw.size()));
  out.put(static_cast<std::uint64_t>(c.params.prior.param_count()));
  for (double v : c.params.lambda_raw) out.put(v);
  for (double v : c.params.sigma_raw) out.put(v);
  for (double v : c.params.sigma0) out.put(v);
  for (double v : c.params.prior.pack()) out.put(v);
  for (double v : c.moments.first) out.put(v);
  for (double v : c.moments.second) out.put(v);
  return out.bytes();
}

inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes,
                                    const std::string& what) {
  ByteReader in(bytes, what);
  in.require(4);
  if (std::string(bytes.begin(), bytes.begin() + 4) != "TSRC") {
    throw ParseError(what + ": bad magic (expected \"TSRC\") at byte offset 0");
  }
  (void)in.get<std::uint32_t>();
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ParseError(what + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  const auto step = in.get<std::uint64_t>();
  c.epoch = in.get<std::uint64_t>();
  const auto w = in.get<std::uint64_t>();
  const auto h = in.get<std::uint64_t>();
  const auto views = in.get<std::uint64_t>();
  const auto prior_count = in.get<std::uint64_t>();
  const PriorNet reference;
  if (prior_count != reference.param_count()) {
    throw ParseError(what + ": prior has " + std::to_string(prior_count) +
                     " parameters, expected " + std::to_string(reference.param_count()));
  }
  const std::uint64_t limit = in.remaining() / 8;
  if (w > limit || h > limit || (w != 0 && h > limit / w) || views > limit) {
    throw ParseError(what + ": header sizes exceed the file length");
  }
  const std::uint64_t n = w * h + views + prior_count;
  const std::uint64_t payload = n + views + 2 * n;
  if (in.remaining() != payload * 8) {
    throw ParseError(what + ": payload is " + std::to_string(in.remaining()) + " bytes, expected " +
                     std::to_string(payload * 8));
  }
  auto read_vec = [&](std::uint64_t count) {
    std::vector<double> v(count);
    for (auto& x : v) {
      x = in.get<double>();
      if (!std::isfinite(x)) throw ParseError(what + ": non-finite value in payload");
    }
    return v;
  };
  c.params.lambda_raw = Raster(Dims{static_cast<std::size_t>(w), static_cast<std::size_t>(h)});
  for (auto& x : c.params.lambda_raw) x = read_vec(1)[0];
  c.params.sigma_raw = read_vec(views);
  c.params.sigma0 = read_vec(views);
  c.params.prior.unpack(read_vec(prior_count));
  c.moments = AdamMoments(n);
  c.moments.first = read_vec(n);
  c.moments.second = read_vec(n);
  c.moments.step = step;
  return c;
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_file(path, encode_checkpoint(c));
}

}  // namespace texsr::io
