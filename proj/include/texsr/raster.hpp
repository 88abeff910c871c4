#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "texsr/error.hpp"

namespace texsr {

/// Width/height of a 2-D grid in samples.
struct Dims {
  std::size_t width = 0;
  std::size_t height = 0;

  [[nodiscard]] constexpr std::size_t size() const { return width * height; }
  [[nodiscard]] constexpr std::size_t index(std::size_t x, std::size_t y) const {
    return y * width + x;
  }
  friend constexpr bool operator==(const Dims&, const Dims&) = default;
};

inline std::string to_string(const Dims& d) {
  return std::to_string(d.width) + "x" + std::to_string(d.height);
}

/// Dense row-major 2-D grid.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  explicit Grid(Dims dims, T fill = T{}) : dims_(dims), data_(dims.size(), fill) {}
  Grid(Dims dims, std::vector<T> values) : dims_(dims), data_(std::move(values)) {
    if (data_.size() != dims_.size()) {
      throw StructuralError("grid: " + std::to_string(data_.size()) +
                            " values do not fill " + to_string(dims_));
    }
  }

  [[nodiscard]] Dims dims() const { return dims_; }
  [[nodiscard]] std::size_t width() const { return dims_.width; }
  [[nodiscard]] std::size_t height() const { return dims_.height; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  T& operator()(std::size_t x, std::size_t y) { return data_[dims_.index(x, y)]; }
  const T& operator()(std::size_t x, std::size_t y) const { return data_[dims_.index(x, y)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  [[nodiscard]] std::span<T> span() { return data_; }
  [[nodiscard]] std::span<const T> span() const { return data_; }
  [[nodiscard]] std::vector<T>& values() { return data_; }
  [[nodiscard]] const std::vector<T>& values() const { return data_; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  Dims dims_{};
  std::vector<T> data_;
};

using Raster = Grid<double>;
/// Per-sample validity flag; nonzero means valid.
using Mask = Grid<std::uint8_t>;

/// Two-component field on a grid (TV duals, gradients, flows).
struct VecField {
  Raster x;
  Raster y;

  VecField() = default;
  explicit VecField(Dims d) : x(d), y(d) {}
  [[nodiscard]] Dims dims() const { return x.dims(); }
};

inline void require_same_dims(Dims a, Dims b, const char* what) {
  if (a != b) {
    throw StructuralError(std::string(what) + ": dimension mismatch " + to_string(a) +
                          " vs " + to_string(b));
  }
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double d) { return std::isfinite(d); });
}

inline Mask full_mask(Dims d) { return Mask(d, 1); }

inline std::size_t count_valid(const Mask& m) {
  return static_cast<std::size_t>(std::count_if(m.begin(), m.end(), [](auto v) { return v != 0; }));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw StructuralError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw StructuralError("max_abs_diff: length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Copies `src` with every mask-invalid sample set to zero.
inline Raster apply_mask(const Raster& src, const Mask& mask) {
  require_same_dims(src.dims(), mask.dims(), "apply_mask");
  Raster out = src;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!mask[i]) out[i] = 0.0;
  }
  return out;
}

/// Sub-window [x0, x0+d.width) x [y0, y0+d.height); samples outside `src` read as `pad`.
template <typename T>
Grid<T> crop(const Grid<T>& src, std::ptrdiff_t x0, std::ptrdiff_t y0, Dims d, T pad = T{}) {
  Grid<T> out(d, pad);
  const auto w = static_cast<std::ptrdiff_t>(src.width());
  const auto h = static_cast<std::ptrdiff_t>(src.height());
  for (std::size_t y = 0; y < d.height; ++y) {
    const std::ptrdiff_t sy = y0 + static_cast<std::ptrdiff_t>(y);
    if (sy < 0 || sy >= h) continue;
    for (std::size_t x = 0; x < d.width; ++x) {
      const std::ptrdiff_t sx = x0 + static_cast<std::ptrdiff_t>(x);
      if (sx < 0 || sx >= w) continue;
      out(x, y) = src(static_cast<std::size_t>(sx), static_cast<std::size_t>(sy));
    }
  }
  return out;
}

}  // namespace texsr
