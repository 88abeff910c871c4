#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "test_util.hpp"
#include "texsr/metrics.hpp"

using namespace texsr;

namespace {

Mask full(Dims d) { return Mask(d, 1); }

long double direct_mse(const Raster& a, const Raster& b, const Mask& m) {
  long double s = 0.0L;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!m[i]) continue;
    const long double d = static_cast<long double>(a[i]) - b[i];
    s += d * d;
    ++n;
  }
  return s / n;
}

// Two-pass weighted statistics per window, accumulated in long double.
double ssim_oracle(const Raster& x, const Raster& y, const Mask& m) {
  const int win = 11;
  const long double c1 = 0.0001L, c2 = 0.0009L;
  long double total = 0.0L;
  int count = 0;
  for (std::size_t y0 = 0; y0 + win <= x.height(); ++y0) {
    for (std::size_t x0 = 0; x0 + win <= x.width(); ++x0) {
      std::vector<long double> w, a, b;
      for (int j = 0; j < win; ++j) {
        for (int i = 0; i < win; ++i) {
          if (!m(x0 + i, y0 + j)) continue;
          const long double dx = i - 5, dy = j - 5;
          w.push_back(std::exp(-(dx * dx + dy * dy) / 4.5L));
          a.push_back(x(x0 + i, y0 + j));
          b.push_back(y(x0 + i, y0 + j));
        }
      }
      if (2 * w.size() < static_cast<std::size_t>(win * win)) continue;
      long double ws = 0, ma = 0, mb = 0;
      for (std::size_t k = 0; k < w.size(); ++k) {
        ws += w[k];
        ma += w[k] * a[k];
        mb += w[k] * b[k];
      }
      ma /= ws;
      mb /= ws;
      long double va = 0, vb = 0, cab = 0;
      for (std::size_t k = 0; k < w.size(); ++k) {
        va += w[k] * (a[k] - ma) * (a[k] - ma);
        vb += w[k] * (b[k] - mb) * (b[k] - mb);
        cab += w[k] * (a[k] - ma) * (b[k] - mb);
      }
      va /= ws;
      vb /= ws;
      cab /= ws;
      total += ((2 * ma * mb + c1) * (2 * cab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return static_cast<double>(total / count);
}

Mask random_mask(Dims d, double keep, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(keep);
  Mask m(d, 0);
  for (auto& v : m) v = b(rng) ? 1 : 0;
  return m;
}

}  // namespace

TEST(Psnr, IdenticalIsInfinite) {
  const auto x = oracle::random_raster({16, 16}, 1);
  EXPECT_EQ(psnr(x, x, full(x.dims())), std::numeric_limits<double>::infinity());
  EXPECT_EQ(sre(x, x, full(x.dims())), std::numeric_limits<double>::infinity());
}

TEST(Psnr, UniformErrorTenthIsTwentyDb) {
  Raster x({12, 12}, 0.3), y({12, 12}, 0.4);
  EXPECT_NEAR(psnr(y, x, full(x.dims())), 20.0, 1e-12);
}

TEST(Psnr, MatchesDirectFormula) {
  for (unsigned s = 0; s < 5; ++s) {
    const auto a = oracle::random_raster({20, 17}, s), b = oracle::random_raster({20, 17}, s + 50);
    const auto m = random_mask(a.dims(), 0.7, s);
    const double ref = static_cast<double>(-10.0L * std::log10(direct_mse(a, b, m)));
    EXPECT_NEAR(psnr(a, b, m), ref, 1e-10);
    EXPECT_EQ(psnr(a, b, m), psnr(b, a, m));
  }
}

TEST(Sre, ConstantSignalWorkedExample) {
  const Raster x({10, 10}, 0.5);
  EXPECT_EQ(sre(Raster({10, 10}, 0.5 - 0.05), x, full(x.dims())), 20.0);
  EXPECT_NEAR(sre(Raster({10, 10}, 0.5 + 0.05), x, full(x.dims())), 20.0, 1e-13);
}

TEST(Sre, MatchesDirectFormula) {
  for (unsigned s = 0; s < 5; ++s) {
    const auto a = oracle::random_raster({15, 22}, s), b = oracle::random_raster({15, 22}, s + 9);
    const auto m = random_mask(a.dims(), 0.6, s + 3);
    long double mu = 0.0L;
    std::size_t n = 0;
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (m[i]) {
        mu += b[i];
        ++n;
      }
    }
    mu /= n;
    const double ref = static_cast<double>(10.0L * std::log10(mu * mu / direct_mse(a, b, m)));
    EXPECT_NEAR(sre(a, b, m), ref, 1e-10);
  }
}

TEST(Sre, SymmetricForEqualMeans) {
  auto a = oracle::random_raster({14, 14}, 4);
  Raster b = a;
  // Swapping two texels keeps the mean and the error pattern symmetric.
  std::swap(b[3], b[70]);
  std::swap(b[10], b[100]);
  const auto m = full(a.dims());
  EXPECT_NEAR(sre(a, b, m), sre(b, a, m), 1e-12);
}

TEST(Sre, ZeroMeanIsUsageError) {
  const Raster x({8, 8}, 0.0), y({8, 8}, 0.1);
  EXPECT_THROW((void)sre(y, x, full(x.dims())), UsageError);
}

TEST(Metrics, EmptyMaskIsUsageError) {
  const Raster x({12, 12}, 0.5);
  const Mask none(x.dims(), 0);
  EXPECT_THROW((void)psnr(x, x, none), UsageError);
  EXPECT_THROW((void)sre(x, x, none), UsageError);
  EXPECT_THROW((void)ssim(x, x, none), UsageError);
}

TEST(Ssim, IdenticalIsOne) {
  const auto x = oracle::random_raster({24, 20}, 2);
  EXPECT_NEAR(ssim(x, x, full(x.dims())), 1.0, 1e-12);
}

TEST(Ssim, AntiCorrelatedIsNegative) {
  Raster x({24, 24});
  for (std::size_t y = 0; y < 24; ++y) {
    for (std::size_t c = 0; c < 24; ++c) x(c, y) = 0.5 + 0.4 * std::sin(0.9 * c) * std::cos(0.7 * y);
  }
  Raster inv = x;
  for (double& v : inv) v = 1.0 - v;
  const double s = ssim(inv, x, full(x.dims()));
  EXPECT_LT(s, 0.0);
  EXPECT_GE(s, -1.0);
}

TEST(Ssim, MatchesPerWindowOracle) {
  for (unsigned s = 0; s < 4; ++s) {
    const auto a = oracle::random_raster({26, 21}, s + 1), b = oracle::random_raster({26, 21}, s + 30);
    Raster c = b;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = 0.7 * b[i] + 0.3 * a[i];
    for (const Mask& m : {full(a.dims()), random_mask(a.dims(), 0.65, s)}) {
      EXPECT_NEAR(ssim(c, b, m), ssim_oracle(c, b, m), 1e-8);
    }
  }
}

TEST(Ssim, TooSmallIsUsageError) {
  const Raster x({10, 30}, 0.5);
  EXPECT_THROW((void)ssim(x, x, full(x.dims())), UsageError);
}

TEST(Metrics, InvariantToInvalidTexels) {
  const auto a = oracle::random_raster({22, 22}, 5), b = oracle::random_raster({22, 22}, 6);
  const auto m = random_mask(a.dims(), 0.75, 9);
  Raster a2 = a, b2 = b;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!m[i]) {
      a2[i] = 1e3;
      b2[i] = -7.0;
    }
  }
  EXPECT_EQ(psnr(a, b, m), psnr(a2, b2, m));
  EXPECT_EQ(sre(a, b, m), sre(a2, b2, m));
  EXPECT_EQ(ssim(a, b, m), ssim(a2, b2, m));
}

TEST(Report, LineAndJson) {
  const auto x = oracle::random_raster({16, 16}, 7);
  const auto r = evaluate("mva", x, x, full(x.dims()));
  EXPECT_EQ(r.n_valid, 256u);
  EXPECT_EQ(to_line(r).substr(0, 8), "mva inf ");
  EXPECT_EQ(to_line(r).substr(to_line(r).size() - 8), " inf 256");
  const auto j = to_json(r);
  EXPECT_EQ(j["psnr_db"], "inf");
  EXPECT_EQ(j["n_valid"], 256);
  EXPECT_EQ(j["masked"], true);

  Raster y = x;
  y[0] += 0.25;
  const auto r2 = evaluate("init", y, x, full(x.dims()));
  const auto back = nlohmann::json::parse(to_json(r2).dump());
  EXPECT_EQ(back["psnr_db"].get<double>(), r2.psnr_db);
  EXPECT_EQ(back["ssim"].get<double>(), r2.ssim);
}
