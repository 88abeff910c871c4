#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "texsr/raster.hpp"
#include "texsr/sparse.hpp"

namespace texsr::oracle {

inline Raster random_raster(Dims d, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Raster r(d);
  for (double& v : r) v = u(rng);
  return r;
}

inline Raster random_raster(Dims d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_raster(d, rng);
}

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

/// Random map with sorted unique columns, `density` fraction of entries set.
inline SparseLinearMap random_map(std::size_t rows, std::size_t cols, double density,
                                  std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::bernoulli_distribution keep(density);
  SparseBuilder b(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (keep(rng)) b.add(c, u(rng));
    }
    b.end_row();
  }
  return std::move(b).build();
}

/// Row-major dense product y = M x.
inline std::vector<double> dense_apply(const std::vector<double>& m, std::size_t rows,
                                       std::size_t cols, const std::vector<double>& x) {
  std::vector<double> y(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    long double s = 0.0L;
    for (std::size_t c = 0; c < cols; ++c) s += static_cast<long double>(m[r * cols + c]) * x[c];
    y[r] = static_cast<double>(s);
  }
  return y;
}

inline double inner(const std::vector<double>& a, const std::vector<double>& b) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return static_cast<double>(s);
}

inline double l2(const std::vector<double>& a) { return std::sqrt(inner(a, a)); }

}  // namespace texsr::oracle
