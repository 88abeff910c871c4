#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "texsr/baseline.hpp"
#include "texsr/problem.hpp"
#include "texsr/synth.hpp"

using namespace texsr;

TEST(GenTexture, DeterministicPerSeed) {
  for (auto kind : {TextureKind::Checker, TextureKind::TextGlyphs, TextureKind::SmoothedNoise,
                    TextureKind::Mixed}) {
    EXPECT_EQ(gen_texture(kind, {40, 32}, 7), gen_texture(kind, {40, 32}, 7));
    for (double v : gen_texture(kind, {40, 32}, 7).data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_NE(gen_texture(TextureKind::Mixed, {32, 32}, 1), gen_texture(TextureKind::Mixed, {32, 32}, 2));
}

TEST(GenTexture, UnitCheckerAlternates) {
  TextureParams p;
  p.checker_cell = 1;
  const auto t = gen_texture(TextureKind::Checker, {16, 16}, 1, p);
  for (std::size_t y = 0; y < 16; ++y) {
    for (std::size_t x = 0; x < 16; ++x) EXPECT_EQ(t.data()(x, y), (x + y) % 2 ? 1.0 : 0.0);
  }
}

TEST(GenTexture, SmoothedNoiseSpansRange) {
  const auto t = gen_texture(TextureKind::SmoothedNoise, {256, 256}, 3);
  const auto [lo, hi] = std::minmax_element(t.data().begin(), t.data().end());
  EXPECT_LE(*lo, 0.1);
  EXPECT_GE(*hi, 0.9);
}

TEST(GenTexture, TooSmallIsParameterError) {
  EXPECT_THROW((void)gen_texture(TextureKind::Checker, {15, 32}, 1), ParameterError);
  EXPECT_THROW((void)parse_texture_kind("marble"), ParameterError);
  EXPECT_EQ(parse_texture_kind(to_string(TextureKind::TextGlyphs)), TextureKind::TextGlyphs);
}

TEST(RenderViews, IdentityGeometryReproducesTexture) {
  SceneSpec spec;
  spec.texture = {24, 24};
  spec.num_views = 1;
  spec.factor = 1;
  spec.noise_std = 0.0;
  spec.max_translation = 0.0;
  spec.max_rotation_deg = 0.0;
  spec.max_skew = 0.0;
  spec.sigma_true = {0.05};
  const auto truth = gen_texture(TextureKind::Mixed, spec.texture, 4);
  const auto gt = render_views(truth, spec);
  for (std::size_t i = 0; i < truth.data().size(); ++i) {
    EXPECT_NEAR(gt.views[0].image[i], truth.data()[i], 1e-15);
  }
}

TEST(RenderViews, CleanImagesEqualChainForwardBitExact) {
  SceneSpec spec;
  spec.texture = {32, 32};
  spec.num_views = 4;
  spec.noise_std = 0.0;
  spec.flow_amplitude = 1.0;
  const auto truth = gen_texture(TextureKind::Mixed, spec.texture, 5);
  const auto gt = render_views(truth, spec);
  for (std::size_t v = 0; v < 4; ++v) {
    const auto f = gt.chains[v].forward(truth.data().span());
    EXPECT_EQ(gt.clean[v].values(), f);
    ASSERT_TRUE(gt.views[v].flow.has_value());
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (gt.views[v].visibility[i]) {
        EXPECT_EQ(gt.views[v].image[i], f[i]);
      }
    }
  }
  // Solver data term vanishes at the truth.
  const auto terms = make_view_terms(gt.views, gt.chains);
  EXPECT_EQ(energy(truth.data(), terms, WeightMap(spec.texture, 0.0)), 0.0);
}

TEST(RenderViews, DeterministicPerSeed) {
  SceneSpec spec;
  spec.texture = {32, 32};
  spec.num_views = 5;
  const auto truth = gen_texture(TextureKind::Checker, spec.texture, 6);
  const auto a = render_views(truth, spec);
  const auto b = render_views(truth, spec);
  for (std::size_t v = 0; v < 5; ++v) {
    EXPECT_EQ(a.views[v].image.values(), b.views[v].image.values());
    EXPECT_EQ(a.homographies[v].m, b.homographies[v].m);
    EXPECT_EQ(a.chains[v].projection(), b.chains[v].projection());
  }
}

TEST(RenderViews, SubPixelOffsetsAreDiverse) {
  for (std::size_t n : {4u, 8u, 16u}) {
    SceneSpec spec;
    spec.texture = {32, 32};
    spec.num_views = n;
    const auto gt = render_views(gen_texture(TextureKind::Checker, spec.texture, 7), spec);
    const double c = 15.5;
    std::vector<std::array<double, 2>> frac;
    for (const auto& h : gt.homographies) {
      const auto p = h.map(c, c);
      ASSERT_TRUE(p);
      const double fx = ((*p)[0] - c) / 2.0, fy = ((*p)[1] - c) / 2.0;
      frac.push_back({fx - std::floor(fx), fy - std::floor(fy)});
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        auto gap = [](double a, double b) {
          const double d = std::abs(a - b);
          return std::min(d, 1.0 - d);
        };
        EXPECT_GE(std::hypot(gap(frac[i][0], frac[j][0]), gap(frac[i][1], frac[j][1])),
                  1.0 / (4.0 * n) - 1e-12);
      }
    }
  }
}

TEST(RenderViews, InvalidSpecIsParameterError) {
  SceneSpec spec;
  spec.texture = {33, 32};
  EXPECT_THROW((void)render_views(gen_texture(TextureKind::Checker, {33, 32}, 1), spec),
               ParameterError);
  spec.texture = {32, 32};
  spec.num_views = 0;
  EXPECT_THROW(spec.validate(), ParameterError);
}

TEST(PseudoGt, BeatsInitialAtlasAndIsDeterministic) {
  SceneSpec spec;
  spec.texture = {32, 32};
  spec.num_views = 8;
  const auto truth = gen_texture(TextureKind::Mixed, spec.texture, 8);
  const auto gt = render_views(truth, spec);
  const auto p = assemble_problem(gt.views, gt.chains);
  const auto pgt = make_pseudo_gt(gt.views, gt.chains, kDefaultLambda, 600);
  auto mse = [&](const Raster& r) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (!p.initial.mask()[i]) continue;
      s += (r[i] - truth.data()[i]) * (r[i] - truth.data()[i]);
      ++n;
    }
    return s / static_cast<double>(n);
  };
  EXPECT_LT(mse(pgt.data()), mse(p.initial.data()));
  EXPECT_EQ(pgt, make_pseudo_gt(gt.views, gt.chains, kDefaultLambda, 600));
}

TEST(PseudoGt, ConstantSceneStaysConstant) {
  SceneSpec spec;
  spec.texture = {48, 48};
  spec.num_views = 3;
  spec.noise_std = 0.0;
  const TextureAtlas flat(Raster(spec.texture, 0.6));
  const auto gt = render_views(flat, spec);
  const auto pgt = make_pseudo_gt(gt.views, gt.chains, kDefaultLambda, 300);
  // Unobserved texels start at zero, so only texels away from the mask edge are checked.
  Mask hole(spec.texture, 0);
  for (std::size_t i = 0; i < hole.size(); ++i) hole[i] = pgt.mask()[i] ? 0 : 1;
  const Mask near_edge = dilate_mask(hole, 3);
  std::vector<double> dev;
  for (std::size_t i = 0; i < pgt.data().size(); ++i) {
    if (!near_edge[i]) dev.push_back(std::abs(pgt.data()[i] - 0.6));
  }
  ASSERT_GT(dev.size(), 1500u);
  std::sort(dev.begin(), dev.end());
  EXPECT_LT(dev[dev.size() / 2], 1e-6);
  double mean = 0.0;
  for (double d : dev) mean += d / static_cast<double>(dev.size());
  EXPECT_LT(mean, 5e-3);
}

TEST(Bicubic, InterpolatesSamplesAndQuadratics) {
  Raster r({9, 8});
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 0; x < 9; ++x) r(x, y) = 0.3 + 0.05 * x - 0.02 * y + 0.01 * x * x;
  }
  EXPECT_NEAR(sample_bicubic(r, 4.0, 3.0), r(4, 3), 1e-14);
  const double x = 3.37, y = 4.81;
  EXPECT_NEAR(sample_bicubic(r, x, y), 0.3 + 0.05 * x - 0.02 * y + 0.01 * x * x, 1e-12);
}

TEST(Bicubic, IdentityViewReproducesTexture) {
  SceneSpec spec;
  spec.texture = {24, 24};
  spec.num_views = 1;
  spec.factor = 1;
  spec.noise_std = 0.0;
  spec.max_translation = 0.0;
  spec.max_rotation_deg = 0.0;
  spec.max_skew = 0.0;
  spec.sigma_true = {0.05};
  const auto truth = gen_texture(TextureKind::SmoothedNoise, spec.texture, 3);
  const auto gt = render_views(truth, spec);
  const auto b = bicubic_view_atlas(gt.views[0], gt.homographies[0], 1, spec.texture);
  ASSERT_GT(count_valid(b.mask()), 300u);
  for (std::size_t i = 0; i < b.data().size(); ++i) {
    if (b.mask()[i]) {
      EXPECT_NEAR(b.data()[i], truth.data()[i], 1e-12);
    }
  }
}
