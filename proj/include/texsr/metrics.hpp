#pragma once

#include <cmath>
#include <cstddef>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "texsr/error.hpp"
#include "texsr/raster.hpp"

namespace texsr {

struct MetricReport {
  std::string name;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double sre_db = 0.0;
  std::size_t n_valid = 0;
};

namespace detail {

struct SquaredError {
  long double sum = 0.0L;
  long double signal = 0.0L;
  std::size_t n = 0;
};

inline SquaredError masked_error(const Raster& estimate, const Raster& truth, const Mask& mask) {
  require_same_dims(estimate.dims(), truth.dims(), "metric inputs");
  require_same_dims(estimate.dims(), mask.dims(), "metric mask");
  SquaredError e;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!mask[i]) continue;
    const long double d = static_cast<long double>(estimate[i]) - truth[i];
    e.sum += d * d;
    e.signal += truth[i];
    ++e.n;
  }
  if (e.n == 0) throw UsageError("metric: mask has no valid texels");
  return e;
}

}  // namespace detail

/// 10 log10(1 / MSE) over valid texels; +inf for identical inputs.
inline double psnr(const Raster& estimate, const Raster& truth, const Mask& mask) {
  const auto e = detail::masked_error(estimate, truth, mask);
  if (e.sum == 0.0L) return std::numeric_limits<double>::infinity();
  const auto mse = static_cast<double>(e.sum / static_cast<long double>(e.n));
  return 10.0 * std::log10(1.0 / mse);
}

/// Signal to reconstruction error: 10 log10(mean(truth)^2 / MSE).
inline double sre(const Raster& estimate, const Raster& truth, const Mask& mask) {
  const auto e = detail::masked_error(estimate, truth, mask);
  const auto mu = static_cast<double>(e.signal / static_cast<long double>(e.n));
  if (mu == 0.0) throw UsageError("sre: ground-truth mean is zero, SRE undefined");
  if (e.sum == 0.0L) return std::numeric_limits<double>::infinity();
  const auto mse = static_cast<double>(e.sum / static_cast<long double>(e.n));
  return 10.0 * std::log10(mu * mu / mse);
}

struct SsimConfig {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
  double min_valid_fraction = 0.5;
};

/// Mean local SSIM over every window that fits inside the raster and has at
/// least half of its texels valid. Window statistics use Gaussian weights
/// renormalized over the valid texels.
inline double ssim(const Raster& estimate, const Raster& truth, const Mask& mask,
                   const SsimConfig& cfg = {}) {
  require_same_dims(estimate.dims(), truth.dims(), "ssim inputs");
  require_same_dims(estimate.dims(), mask.dims(), "ssim mask");
  const Dims d = truth.dims();
  const std::size_t win = cfg.window;
  if (d.width < win || d.height < win) {
    throw UsageError("ssim: raster " + to_string(d) + " smaller than the " + std::to_string(win) +
                     "x" + std::to_string(win) + " window");
  }
  const double c1 = (cfg.k1 * cfg.dynamic_range) * (cfg.k1 * cfg.dynamic_range);
  const double c2 = (cfg.k2 * cfg.dynamic_range) * (cfg.k2 * cfg.dynamic_range);
  const double half = static_cast<double>(win - 1) / 2.0;
  std::vector<double> g(win * win);
  for (std::size_t j = 0; j < win; ++j) {
    for (std::size_t i = 0; i < win; ++i) {
      const double dx = static_cast<double>(i) - half;
      const double dy = static_cast<double>(j) - half;
      g[j * win + i] = std::exp(-(dx * dx + dy * dy) / (2.0 * cfg.sigma * cfg.sigma));
    }
  }
  const auto min_valid = static_cast<double>(win * win) * cfg.min_valid_fraction;

  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t y0 = 0; y0 + win <= d.height; ++y0) {
    for (std::size_t x0 = 0; x0 + win <= d.width; ++x0) {
      double wsum = 0.0, mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
      std::size_t valid = 0;
      for (std::size_t j = 0; j < win; ++j) {
        for (std::size_t i = 0; i < win; ++i) {
          if (!mask(x0 + i, y0 + j)) continue;
          const double w = g[j * win + i];
          const double a = estimate(x0 + i, y0 + j);
          const double b = truth(x0 + i, y0 + j);
          wsum += w;
          mx += w * a;
          my += w * b;
          sxx += w * a * a;
          syy += w * b * b;
          sxy += w * a * b;
          ++valid;
        }
      }
      if (static_cast<double>(valid) < min_valid) continue;
      mx /= wsum;
      my /= wsum;
      const double vx = sxx / wsum - mx * mx;
      const double vy = syy / wsum - my * my;
      const double cxy = sxy / wsum - mx * my;
      total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++windows;
    }
  }
  if (windows == 0) throw UsageError("ssim: no window has enough valid texels");
  return total / static_cast<double>(windows);
}

inline MetricReport evaluate(const std::string& name, const Raster& estimate, const Raster& truth,
                             const Mask& mask) {
  MetricReport r;
  r.name = name;
  r.psnr_db = psnr(estimate, truth, mask);
  r.sre_db = sre(estimate, truth, mask);
  r.ssim = ssim(estimate, truth, mask);
  r.n_valid = count_valid(mask);
  return r;
}

namespace detail {

inline std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

/// `name psnr ssim sre n_valid`
inline std::string to_line(const MetricReport& r) {
  return r.name + " " + detail::format_metric(r.psnr_db) + " " + detail::format_metric(r.ssim) +
         " " + detail::format_metric(r.sre_db) + " " + std::to_string(r.n_valid);
}

inline nlohmann::json to_json(const MetricReport& r) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isinf(v)) return detail::format_metric(v);
    return v;
  };
  return {{"name", r.name},   {"psnr_db", num(r.psnr_db)}, {"ssim", num(r.ssim)},
          {"sre_db", num(r.sre_db)}, {"n_valid", r.n_valid}, {"masked", true},
          {"channel", "Y"}};
}

}  // namespace texsr
