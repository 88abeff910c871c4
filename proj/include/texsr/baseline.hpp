#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>

#include "texsr/atlas.hpp"
#include "texsr/error.hpp"
#include "texsr/operators.hpp"
#include "texsr/raster.hpp"

namespace texsr {

namespace detail {

/// Keys cubic convolution kernel, a = -0.5.
inline double keys_cubic(double t) {
  t = std::abs(t);
  if (t < 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
  if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
  return 0.0;
}

}  // namespace detail

/// Bicubic interpolation of a raster at (x, y), replicating edge samples.
inline double sample_bicubic(const Raster& r, double x, double y) {
  const auto ix = static_cast<std::ptrdiff_t>(std::floor(x));
  const auto iy = static_cast<std::ptrdiff_t>(std::floor(y));
  const auto w = static_cast<std::ptrdiff_t>(r.width());
  const auto h = static_cast<std::ptrdiff_t>(r.height());
  double acc = 0.0;
  for (std::ptrdiff_t j = -1; j <= 2; ++j) {
    const double wy = detail::keys_cubic(y - static_cast<double>(iy + j));
    const auto yy = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(iy + j, 0, h - 1));
    for (std::ptrdiff_t i = -1; i <= 2; ++i) {
      const double wx = detail::keys_cubic(x - static_cast<double>(ix + i));
      const auto xx = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(ix + i, 0, w - 1));
      acc += wx * wy * r(xx, yy);
    }
  }
  return acc;
}

/// Single-view baseline: each texel maps through `h` onto the pre-downsample
/// grid and reads the LR image bicubically. Texels whose 4x4 neighbourhood
/// leaves the image or touches an invisible pixel are masked out. Flow is not
/// modelled.
inline TextureAtlas bicubic_view_atlas(const ViewObservation& obs, const Homography& h,
                                       std::size_t factor, Dims tex) {
  if (factor < 1) throw ParameterError("bicubic_view_atlas: factor must be >= 1");
  const Dims lr = obs.image.dims();
  const double s = static_cast<double>(factor);
  const double centre = (s - 1.0) / 2.0;
  Raster out(tex, 0.0);
  Mask mask(tex, 0);
  for (std::size_t y = 0; y < tex.height; ++y) {
    for (std::size_t x = 0; x < tex.width; ++x) {
      const auto u = h.map(static_cast<double>(x), static_cast<double>(y));
      if (!u) continue;
      const double lx = ((*u)[0] - centre) / s;
      const double ly = ((*u)[1] - centre) / s;
      if (!(lx >= 1.0 && ly >= 1.0 && lx < static_cast<double>(lr.width) - 2.0 &&
            ly < static_cast<double>(lr.height) - 2.0)) {
        continue;
      }
      const auto ix = static_cast<std::size_t>(std::floor(lx));
      const auto iy = static_cast<std::size_t>(std::floor(ly));
      bool seen = true;
      for (std::size_t j = iy - 1; j <= iy + 2 && seen; ++j) {
        for (std::size_t i = ix - 1; i <= ix + 2; ++i) seen = seen && obs.visibility(i, j) != 0;
      }
      if (!seen) continue;
      out(x, y) = sample_bicubic(obs.image, lx, ly);
      mask(x, y) = 1;
    }
  }
  return {std::move(out), std::move(mask)};
}

}  // namespace texsr
