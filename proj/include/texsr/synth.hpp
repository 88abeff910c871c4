#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "texsr/atlas.hpp"
#include "texsr/error.hpp"
#include "texsr/operators.hpp"
#include "texsr/problem.hpp"
#include "texsr/raster.hpp"
#include "texsr/solver.hpp"

namespace texsr {

enum class TextureKind { Checker, TextGlyphs, SmoothedNoise, Mixed };

inline TextureKind parse_texture_kind(const std::string& s) {
  if (s == "checker") return TextureKind::Checker;
  if (s == "text-glyphs") return TextureKind::TextGlyphs;
  if (s == "smoothed-noise") return TextureKind::SmoothedNoise;
  if (s == "mixed") return TextureKind::Mixed;
  throw ParameterError("unknown texture kind '" + s + "'");
}

inline std::string to_string(TextureKind k) {
  switch (k) {
    case TextureKind::Checker: return "checker";
    case TextureKind::TextGlyphs: return "text-glyphs";
    case TextureKind::SmoothedNoise: return "smoothed-noise";
    case TextureKind::Mixed: return "mixed";
  }
  return "unknown";
}

struct TextureParams {
  std::size_t checker_cell = 8;
  double noise_smoothing = 3.0;  ///< Gaussian sigma of the noise low-pass, texels
  std::size_t glyph_cell = 12;   ///< character box side, texels
};

namespace detail {

inline std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

inline Raster smoothed_noise(Dims d, double smoothing, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Raster r(d);
  for (double& v : r) v = u(rng);
  r = blur_apply(build_blur(smoothing), r);
  const auto [lo, hi] = std::minmax_element(r.begin(), r.end());
  const double a = *lo, span = *hi - *lo;
  for (double& v : r) v = span > 0.0 ? (v - a) / span : 0.5;
  return r;
}

/// Ink mask of random 5x7 bitmaps, 2x2 texels per bit, one per character box.
inline Mask glyph_ink(Dims d, std::size_t cell, std::mt19937_64& rng) {
  std::bernoulli_distribution bit(0.45);
  Mask ink(d, 0);
  for (std::size_t cy = 0; cy + cell <= d.height; cy += cell) {
    for (std::size_t cx = 0; cx + cell <= d.width; cx += cell) {
      for (std::size_t by = 0; by < 7; ++by) {
        for (std::size_t bx = 0; bx < 5; ++bx) {
          if (!bit(rng)) continue;
          for (std::size_t yy = 0; yy < 2; ++yy) {
            for (std::size_t xx = 0; xx < 2; ++xx) {
              const std::size_t x = cx + 1 + 2 * bx + xx;
              const std::size_t y = cy + 1 + 2 * by + yy;
              if (x < cx + cell && y < cy + cell && x < d.width && y < d.height) ink(x, y) = 1;
            }
          }
        }
      }
    }
  }
  return ink;
}

}  // namespace detail

inline TextureAtlas gen_texture(TextureKind kind, Dims d, std::uint64_t seed,
                                const TextureParams& params = {}) {
  if (d.width < 16 || d.height < 16) {
    throw ParameterError("gen_texture: dims must be >= 16, got " + to_string(d));
  }
  auto rng = detail::derived_rng(seed, 0x7e57);
  Raster r(d);
  switch (kind) {
    case TextureKind::Checker: {
      const std::size_t c = std::max<std::size_t>(1, params.checker_cell);
      for (std::size_t y = 0; y < d.height; ++y) {
        for (std::size_t x = 0; x < d.width; ++x) r(x, y) = ((x / c + y / c) % 2) ? 1.0 : 0.0;
      }
      break;
    }
    case TextureKind::SmoothedNoise:
      r = detail::smoothed_noise(d, params.noise_smoothing, rng);
      break;
    case TextureKind::TextGlyphs: {
      const Mask ink = detail::glyph_ink(d, params.glyph_cell, rng);
      for (std::size_t i = 0; i < r.size(); ++i) r[i] = ink[i] ? 0.1 : 0.85;
      break;
    }
    case TextureKind::Mixed: {
      const Raster bg = detail::smoothed_noise(d, params.noise_smoothing * 3.0, rng);
      const Mask ink = detail::glyph_ink(d, params.glyph_cell, rng);
      for (std::size_t y = 0; y < d.height; ++y) {
        for (std::size_t x = 0; x < d.width; ++x) {
          const double base = 0.25 + 0.5 * bg(x, y);
          const bool dark = ((x / params.glyph_cell + y / params.glyph_cell) % 2) == 0;
          r(x, y) = ink(x, y) ? (dark ? 0.05 : 0.95) : base;
        }
      }
      break;
    }
  }
  return TextureAtlas(std::move(r));
}

// ---------------------------------------------------------------------------
// Scene rendering
// ---------------------------------------------------------------------------

struct SceneSpec {
  Dims texture{64, 64};
  Dims image{0, 0};  ///< pre-downsample grid; zero means same as texture
  std::size_t num_views = 8;
  std::size_t factor = 2;
  std::vector<double> sigma_true{0.8};  ///< one entry, or one per view
  double noise_std = 0.005;
  double max_translation = 2.0;  ///< px on the image grid
  double max_rotation_deg = 2.0;
  double max_skew = 0.02;        ///< projective terms, relative to texture size
  double flow_amplitude = 0.0;   ///< px, per component
  std::uint64_t seed = 1;

  [[nodiscard]] Dims image_dims() const { return image.size() == 0 ? texture : image; }
  [[nodiscard]] double sigma(std::size_t view) const {
    return sigma_true.size() == 1 ? sigma_true.front() : sigma_true.at(view);
  }

  void validate() const {
    const Dims img = image_dims();
    if (num_views < 1) throw ParameterError("scene: need at least one view");
    if (!(noise_std >= 0.0)) throw ParameterError("scene: noise_std must be >= 0");
    if (factor < 1 || img.width % factor != 0 || img.height % factor != 0) {
      throw ParameterError("scene: image grid " + to_string(img) + " not divisible by factor " +
                           std::to_string(factor));
    }
    if (texture.size() == 0) throw ParameterError("scene: empty texture dims");
    if (sigma_true.empty() || (sigma_true.size() != 1 && sigma_true.size() != num_views)) {
      throw ParameterError("scene: sigma_true needs 1 or num_views entries");
    }
    for (double s : sigma_true) {
      if (!(s > 0.0)) throw ParameterError("scene: sigma must be > 0");
    }
    if (flow_amplitude * std::numbers::sqrt2 > FlowField::kDefaultMaxMagnitude) {
      throw ParameterError("scene: flow amplitude exceeds the flow magnitude bound");
    }
  }
};

struct GroundTruth {
  SceneSpec spec;
  TextureAtlas texture;
  std::vector<Homography> homographies;
  std::vector<ViewChain> chains;
  std::vector<ViewObservation> views;  ///< noisy images
  std::vector<Raster> clean;           ///< noise-free images
};

namespace detail {

inline double circular_gap(double a, double b) {
  const double d = std::abs(a - b);
  return std::min(d, 1.0 - d);
}

inline double frac(double v) { return v - std::floor(v); }

/// Band-limited displacement with per-component peak `amplitude`.
inline FlowField random_flow(Dims d, double amplitude, std::mt19937_64& rng) {
  VecField f(d);
  if (amplitude > 0.0) {
    for (Raster* comp : {&f.x, &f.y}) {
      Raster r = smoothed_noise(d, 6.0, rng);
      for (std::size_t i = 0; i < r.size(); ++i) (*comp)[i] = amplitude * (2.0 * r[i] - 1.0);
    }
  }
  return FlowField(std::move(f));
}

}  // namespace detail

/// Draws sub-pixel-diverse homographies, builds every chain and renders clean
/// and noisy LR views. The renderer is compose_chain's forward pass.
inline GroundTruth render_views(const TextureAtlas& truth, const SceneSpec& spec) {
  spec.validate();
  require_same_dims(truth.dims(), spec.texture, "render_views texture");
  const Dims tex = spec.texture;
  const Dims img = spec.image_dims();
  const Dims lr{img.width / spec.factor, img.height / spec.factor};
  const auto n = spec.num_views;

  GroundTruth gt;
  gt.spec = spec;
  gt.texture = truth;

  // Geometry: rejection keeps LR-grid fractional offsets apart.
  auto geo_rng = detail::derived_rng(spec.seed, 0x6e0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double min_gap = 1.0 / (4.0 * static_cast<double>(n));
  const double s = static_cast<double>(spec.factor);
  std::vector<std::array<double, 2>> offsets;
  const double ctx = (static_cast<double>(tex.width) - 1.0) / 2.0;
  const double cty = (static_cast<double>(tex.height) - 1.0) / 2.0;
  const double cix = (static_cast<double>(img.width) - 1.0) / 2.0;
  const double ciy = (static_cast<double>(img.height) - 1.0) / 2.0;
  for (std::size_t v = 0; v < n; ++v) {
    std::array<double, 2> t{};
    bool ok = false;
    for (int attempt = 0; attempt < 100000 && !ok; ++attempt) {
      t = {spec.max_translation * unit(geo_rng), spec.max_translation * unit(geo_rng)};
      ok = true;
      for (const auto& o : offsets) {
        const double gx = detail::circular_gap(detail::frac(t[0] / s), detail::frac(o[0] / s));
        const double gy = detail::circular_gap(detail::frac(t[1] / s), detail::frac(o[1] / s));
        if (std::hypot(gx, gy) < min_gap) {
          ok = false;
          break;
        }
      }
    }
    if (!ok) {
      throw ParameterError("render_views: cannot place " + std::to_string(n) +
                           " sub-pixel-distinct views with max translation " +
                           std::to_string(spec.max_translation));
    }
    offsets.push_back(t);
    const double theta = spec.max_rotation_deg * unit(geo_rng) * std::numbers::pi / 180.0;
    const double gx = spec.max_skew * unit(geo_rng) / static_cast<double>(tex.width);
    const double gy = spec.max_skew * unit(geo_rng) / static_cast<double>(tex.height);
    const Homography to_center{{1, 0, -ctx, 0, 1, -cty, 0, 0, 1}};
    const Homography persp{{1, 0, 0, 0, 1, 0, gx, gy, 1}};
    const Homography rot{{std::cos(theta), -std::sin(theta), 0, std::sin(theta), std::cos(theta),
                          0, 0, 0, 1}};
    const Homography back{{1, 0, cix + t[0], 0, 1, ciy + t[1], 0, 0, 1}};
    gt.homographies.push_back(back * rot * persp * to_center);
  }

  const auto down = std::make_shared<const SparseLinearMap>(build_downsample(spec.factor, img));
  gt.chains.resize(n);
  gt.views.resize(n);
  gt.clean.resize(n);
  for (std::size_t v = 0; v < n; ++v) {
    auto proj = std::make_shared<const SparseLinearMap>(
        build_projection(gt.homographies[v], tex, img, &truth.mask()));
    std::optional<FlowField> flow;
    std::shared_ptr<const SparseLinearMap> warp;
    if (spec.flow_amplitude > 0.0) {
      auto flow_rng = detail::derived_rng(spec.seed + v, 0xf10);
      flow = detail::random_flow(img, spec.flow_amplitude, flow_rng);
      warp = std::make_shared<const SparseLinearMap>(build_warp(*flow));
    }
    gt.chains[v] = ViewChain(proj, warp, build_blur(spec.sigma(v)), down, {tex, img, lr});
    gt.clean[v] = Raster(lr, gt.chains[v].forward(truth.data().span()));

    ViewObservation& obs = gt.views[v];
    obs.view_id = v;
    obs.chain = v;
    obs.flow = flow;
    obs.visibility = chain_visibility(gt.chains[v], truth.mask());
    obs.image = gt.clean[v];
    if (spec.noise_std > 0.0) {
      auto noise_rng = detail::derived_rng(spec.seed + v, 0x401e);
      std::normal_distribution<double> noise(0.0, spec.noise_std);
      for (double& px : obs.image) px = std::clamp(px + noise(noise_rng), 0.0, 1.0);
    }
    for (std::size_t i = 0; i < obs.image.size(); ++i) {
      if (!obs.visibility[i]) obs.image[i] = 0.0;
    }
  }
  return gt;
}

/// Long-run multi-view solve used as a training target when no exact truth
/// exists.
inline TextureAtlas make_pseudo_gt(std::span<const ViewObservation> views,
                                   std::span<const ViewChain> chains,
                                   double lambda = kDefaultLambda,
                                   std::size_t iterations = kReferenceDepth) {
  const MultiViewProblem p = assemble_problem(views, chains);
  SolverConfig cfg;
  cfg.num_pd_iters = iterations;
  const WeightMap lam(p.texture, lambda);
  const auto out = run_unrolled(p.initial.data(), p.terms, lam, {}, cfg);
  Raster clipped = out.output;
  for (double& v : clipped) v = std::clamp(v, 0.0, 1.0);
  return TextureAtlas(std::move(clipped), p.initial.mask());
}

}  // namespace texsr
