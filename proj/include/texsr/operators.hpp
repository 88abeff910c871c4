#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "texsr/error.hpp"
#include "texsr/raster.hpp"
#include "texsr/sparse.hpp"

namespace texsr {

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

/// Row-major 3x3 matrix mapping homogeneous texture-plane coordinates to
/// homogeneous image coordinates. Pixel centers sit on integer coordinates.
struct Homography {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Homography identity() { return {}; }
  static Homography translation(double tx, double ty) { return {{1, 0, tx, 0, 1, ty, 0, 0, 1}}; }

  [[nodiscard]] double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }

  [[nodiscard]] Homography inverse() const {
    const double d = det();
    if (!(std::abs(d) > 1e-12) || !std::isfinite(d)) {
      throw ParameterError("homography is not invertible (|det| = " + std::to_string(std::abs(d)) +
                           ")");
    }
    const double id = 1.0 / d;
    return {{(m[4] * m[8] - m[5] * m[7]) * id, (m[2] * m[7] - m[1] * m[8]) * id,
             (m[1] * m[5] - m[2] * m[4]) * id, (m[5] * m[6] - m[3] * m[8]) * id,
             (m[0] * m[8] - m[2] * m[6]) * id, (m[2] * m[3] - m[0] * m[5]) * id,
             (m[3] * m[7] - m[4] * m[6]) * id, (m[1] * m[6] - m[0] * m[7]) * id,
             (m[0] * m[4] - m[1] * m[3]) * id}};
  }

  /// Maps (x, y); returns nullopt when the point lands at or behind infinity.
  [[nodiscard]] std::optional<std::array<double, 2>> map(double x, double y) const {
    const double w = m[6] * x + m[7] * y + m[8];
    if (!(w > 1e-12)) return std::nullopt;
    return std::array<double, 2>{(m[0] * x + m[1] * y + m[2]) / w,
                                 (m[3] * x + m[4] * y + m[5]) / w};
  }

  friend Homography operator*(const Homography& a, const Homography& b) {
    Homography c;
    for (int r = 0; r < 3; ++r) {
      for (int k = 0; k < 3; ++k) {
        double s = 0.0;
        for (int j = 0; j < 3; ++j) s += a.m[3 * r + j] * b.m[3 * j + k];
        c.m[3 * r + k] = s;
      }
    }
    return c;
  }
};

/// Either a synthetic plane-to-image homography or an imported projection map.
using ProjectionSpec = std::variant<Homography, SparseLinearMap>;

/// Per-pixel displacement on the pre-downsample image grid, in pixels.
class FlowField {
 public:
  static constexpr double kDefaultMaxMagnitude = 3.0;

  FlowField() = default;
  explicit FlowField(VecField field, double max_magnitude = kDefaultMaxMagnitude)
      : field_(std::move(field)) {
    require_same_dims(field_.x.dims(), field_.y.dims(), "flow field");
    for (std::size_t i = 0; i < field_.x.size(); ++i) {
      const double fx = field_.x[i];
      const double fy = field_.y[i];
      if (!std::isfinite(fx) || !std::isfinite(fy)) {
        throw ParameterError("flow field: non-finite displacement at sample " + std::to_string(i));
      }
      if (std::hypot(fx, fy) > max_magnitude) {
        throw ParameterError("flow field: displacement at sample " + std::to_string(i) +
                             " exceeds " + std::to_string(max_magnitude) + " px");
      }
    }
  }

  static FlowField uniform(Dims d, double fx, double fy) {
    VecField f(d);
    f.x.fill(fx);
    f.y.fill(fy);
    return FlowField(std::move(f));
  }

  [[nodiscard]] Dims dims() const { return field_.dims(); }
  [[nodiscard]] const VecField& field() const { return field_; }

 private:
  VecField field_;
};

namespace detail {

constexpr double kSnap = 1e-12;

struct BilinearTap {
  std::size_t index;
  double weight;
};

/// Bilinear footprint of (x, y) on a grid. Returns false when any tap with
/// nonzero weight falls outside the grid or on a mask-invalid sample.
inline bool bilinear_taps(double x, double y, Dims d, const Mask* mask,
                          std::vector<BilinearTap>& taps) {
  taps.clear();
  const double xmax = static_cast<double>(d.width) - 1.0;
  const double ymax = static_cast<double>(d.height) - 1.0;
  if (x < -kSnap || y < -kSnap || x > xmax + kSnap || y > ymax + kSnap) return false;
  x = std::clamp(x, 0.0, xmax);
  y = std::clamp(y, 0.0, ymax);
  double x0 = std::floor(x);
  double y0 = std::floor(y);
  double fx = x - x0;
  double fy = y - y0;
  if (fx < kSnap) fx = 0.0;
  if (fy < kSnap) fy = 0.0;
  if (fx > 1.0 - kSnap) { fx = 0.0; x0 += 1.0; }
  if (fy > 1.0 - kSnap) { fy = 0.0; y0 += 1.0; }
  const auto ix = static_cast<std::size_t>(x0);
  const auto iy = static_cast<std::size_t>(y0);
  const double wx[2] = {1.0 - fx, fx};
  const double wy[2] = {1.0 - fy, fy};
  for (int j = 0; j < 2; ++j) {
    for (int i = 0; i < 2; ++i) {
      const double w = wx[i] * wy[j];
      if (w == 0.0) continue;
      const std::size_t sx = ix + static_cast<std::size_t>(i);
      const std::size_t sy = iy + static_cast<std::size_t>(j);
      if (sx >= d.width || sy >= d.height) return false;
      const std::size_t idx = d.index(sx, sy);
      if (mask != nullptr && !(*mask)[idx]) return false;
      taps.push_back({idx, w});
    }
  }
  return true;
}

}  // namespace detail

/// Image-grid x texture-grid bilinear sampling matrix. Rows whose footprint
/// leaves the texture or touches an invalid texel are empty.
inline SparseLinearMap build_projection(const ProjectionSpec& spec, Dims tex, Dims img,
                                        const Mask* tex_mask = nullptr) {
  if (tex.size() == 0 || img.size() == 0) throw ParameterError("build_projection: empty dims");
  if (tex_mask != nullptr) require_same_dims(tex_mask->dims(), tex, "build_projection mask");
  if (const auto* imported = std::get_if<SparseLinearMap>(&spec)) {
    if (imported->rows() != img.size() || imported->cols() != tex.size()) {
      throw StructuralError("build_projection: imported map is " +
                            std::to_string(imported->rows()) + "x" +
                            std::to_string(imported->cols()) + ", expected " +
                            std::to_string(img.size()) + "x" + std::to_string(tex.size()));
    }
    return *imported;
  }
  const Homography inv = std::get<Homography>(spec).inverse();
  SparseBuilder b(img.size(), tex.size());
  std::vector<detail::BilinearTap> taps;
  for (std::size_t v = 0; v < img.height; ++v) {
    for (std::size_t u = 0; u < img.width; ++u) {
      const auto t = inv.map(static_cast<double>(u), static_cast<double>(v));
      if (t && detail::bilinear_taps((*t)[0], (*t)[1], tex, tex_mask, taps)) {
        for (const auto& tap : taps) b.add(tap.index, tap.weight);
        b.end_row();
      } else {
        b.empty_row();
      }
    }
  }
  return std::move(b).build();
}

/// Resampling at x + flow(x) on the flow's own grid.
inline SparseLinearMap build_warp(const FlowField& flow) {
  const Dims d = flow.dims();
  SparseBuilder b(d.size(), d.size());
  std::vector<detail::BilinearTap> taps;
  for (std::size_t y = 0; y < d.height; ++y) {
    for (std::size_t x = 0; x < d.width; ++x) {
      const std::size_t i = d.index(x, y);
      const double sx = static_cast<double>(x) + flow.field().x[i];
      const double sy = static_cast<double>(y) + flow.field().y[i];
      if (detail::bilinear_taps(sx, sy, d, nullptr, taps)) {
        for (const auto& tap : taps) b.add(tap.index, tap.weight);
        b.end_row();
      } else {
        b.empty_row();
      }
    }
  }
  return std::move(b).build();
}

/// Box average over non-overlapping factor x factor blocks.
inline SparseLinearMap build_downsample(std::size_t factor, Dims hr) {
  if (factor < 1) throw ParameterError("build_downsample: factor must be >= 1");
  if (hr.size() == 0 || hr.width % factor != 0 || hr.height % factor != 0) {
    throw ParameterError("build_downsample: " + to_string(hr) + " not divisible by " +
                         std::to_string(factor));
  }
  const Dims lr{hr.width / factor, hr.height / factor};
  const double w = 1.0 / static_cast<double>(factor * factor);
  SparseBuilder b(lr.size(), hr.size());
  for (std::size_t y = 0; y < lr.height; ++y) {
    for (std::size_t x = 0; x < lr.width; ++x) {
      for (std::size_t dy = 0; dy < factor; ++dy) {
        for (std::size_t dx = 0; dx < factor; ++dx) {
          b.add(hr.index(x * factor + dx, y * factor + dy), w);
        }
      }
      b.end_row();
    }
  }
  return std::move(b).build();
}

// ---------------------------------------------------------------------------
// Gaussian blur
// ---------------------------------------------------------------------------

/// Separable Gaussian; taps[k + radius] is the weight at offset k.
struct BlurKernel {
  double sigma = 1.0;
  std::size_t radius = 1;
  std::vector<double> taps;
};

inline BlurKernel build_blur(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ParameterError("build_blur: sigma must be > 0, got " + std::to_string(sigma));
  }
  BlurKernel k;
  k.sigma = sigma;
  k.radius = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(3.0 * sigma)));
  k.taps.resize(2 * k.radius + 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < k.taps.size(); ++i) {
    const double off = static_cast<double>(i) - static_cast<double>(k.radius);
    k.taps[i] = std::exp(-off * off / (2.0 * sigma * sigma));
    sum += k.taps[i];
  }
  for (double& t : k.taps) t /= sum;
  return k;
}

namespace detail {

enum class BlurMode { Forward, Adjoint, SigmaDerivative };

/// One 1-D pass along `axis` (0 = x, 1 = y) with per-output renormalization
/// over the taps that land inside the line.
inline void blur_pass(const BlurKernel& k, Dims d, int axis, BlurMode mode,
                      std::span<const double> in, std::span<double> out) {
  const std::size_t len = axis == 0 ? d.width : d.height;
  const std::size_t lines = axis == 0 ? d.height : d.width;
  const std::size_t step = axis == 0 ? 1 : d.width;
  const auto r = static_cast<std::ptrdiff_t>(k.radius);
  const auto n = static_cast<std::ptrdiff_t>(len);
  const double inv_s3 = 1.0 / (k.sigma * k.sigma * k.sigma);

  // Normalizers per position; identical for every line.
  std::vector<double> norm(len), dnorm(len);
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double s = 0.0, ds = 0.0;
    for (std::ptrdiff_t o = std::max(-r, -i); o <= std::min(r, n - 1 - i); ++o) {
      const double g = k.taps[static_cast<std::size_t>(o + r)];
      s += g;
      ds += g * static_cast<double>(o * o) * inv_s3;
    }
    norm[static_cast<std::size_t>(i)] = s;
    dnorm[static_cast<std::size_t>(i)] = ds;
  }

  if (mode == BlurMode::Adjoint) std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t line = 0; line < lines; ++line) {
    const std::size_t base = axis == 0 ? line * d.width : line;
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const std::size_t oi = base + static_cast<std::size_t>(i) * step;
      const std::ptrdiff_t lo = std::max(-r, -i);
      const std::ptrdiff_t hi = std::min(r, n - 1 - i);
      const double inv_norm = 1.0 / norm[static_cast<std::size_t>(i)];
      switch (mode) {
        case BlurMode::Forward: {
          double s = 0.0;
          for (std::ptrdiff_t o = lo; o <= hi; ++o) {
            s += k.taps[static_cast<std::size_t>(o + r)] *
                 in[base + static_cast<std::size_t>(i + o) * step];
          }
          out[oi] = s * inv_norm;
          break;
        }
        case BlurMode::Adjoint: {
          const double yi = in[oi] * inv_norm;
          if (yi == 0.0) break;
          for (std::ptrdiff_t o = lo; o <= hi; ++o) {
            out[base + static_cast<std::size_t>(i + o) * step] +=
                k.taps[static_cast<std::size_t>(o + r)] * yi;
          }
          break;
        }
        case BlurMode::SigmaDerivative: {
          // d/dsigma of sum(g x) / sum(g) with dg/dsigma = g o^2 / sigma^3.
          double s = 0.0, ds = 0.0;
          for (std::ptrdiff_t o = lo; o <= hi; ++o) {
            const double g = k.taps[static_cast<std::size_t>(o + r)];
            const double x = in[base + static_cast<std::size_t>(i + o) * step];
            s += g * x;
            ds += g * static_cast<double>(o * o) * inv_s3 * x;
          }
          const double value = s * inv_norm;
          out[oi] = (ds - value * dnorm[static_cast<std::size_t>(i)]) * inv_norm;
          break;
        }
      }
    }
  }
}

}  // namespace detail

/// Horizontal then vertical pass, boundary taps renormalized.
inline void blur_apply(const BlurKernel& k, Dims d, std::span<const double> in,
                       std::span<double> out) {
  if (in.size() != d.size() || out.size() != d.size()) {
    throw StructuralError("blur_apply: raster size does not match " + to_string(d));
  }
  std::vector<double> tmp(d.size());
  detail::blur_pass(k, d, 0, detail::BlurMode::Forward, in, tmp);
  detail::blur_pass(k, d, 1, detail::BlurMode::Forward, tmp, out);
}

inline Raster blur_apply(const BlurKernel& k, const Raster& r) {
  Raster out(r.dims());
  blur_apply(k, r.dims(), r.span(), out.span());
  return out;
}

/// Exact transpose of blur_apply.
inline void blur_adjoint(const BlurKernel& k, Dims d, std::span<const double> in,
                         std::span<double> out) {
  if (in.size() != d.size() || out.size() != d.size()) {
    throw StructuralError("blur_adjoint: raster size does not match " + to_string(d));
  }
  std::vector<double> tmp(d.size());
  detail::blur_pass(k, d, 1, detail::BlurMode::Adjoint, in, tmp);
  detail::blur_pass(k, d, 0, detail::BlurMode::Adjoint, tmp, out);
}

/// d/dsigma of blur_apply(k, x) at fixed truncation radius.
inline void blur_sigma_gradient(const BlurKernel& k, Dims d, std::span<const double> in,
                                std::span<double> out) {
  if (in.size() != d.size() || out.size() != d.size()) {
    throw StructuralError("blur_sigma_gradient: raster size does not match " + to_string(d));
  }
  // K = V H, so dK = dV H + V dH.
  std::vector<double> h(d.size()), dh(d.size()), a(d.size());
  detail::blur_pass(k, d, 0, detail::BlurMode::Forward, in, h);
  detail::blur_pass(k, d, 0, detail::BlurMode::SigmaDerivative, in, dh);
  detail::blur_pass(k, d, 1, detail::BlurMode::SigmaDerivative, h, a);
  detail::blur_pass(k, d, 1, detail::BlurMode::Forward, dh, out);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += a[i];
}

inline Raster blur_sigma_gradient(const BlurKernel& k, const Raster& r) {
  Raster out(r.dims());
  blur_sigma_gradient(k, r.dims(), r.span(), out.span());
  return out;
}

/// Explicit matrix of blur_apply; for small test instances.
inline SparseLinearMap blur_matrix(const BlurKernel& k, Dims d) {
  std::vector<double> e(d.size(), 0.0), col(d.size());
  // Built column by column, then transposed into row form.
  SparseBuilder bt(d.size(), d.size());
  for (std::size_t j = 0; j < d.size(); ++j) {
    e[j] = 1.0;
    blur_apply(k, d, e, col);
    e[j] = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (col[i] != 0.0) bt.add(i, col[i]);
    }
    bt.end_row();
  }
  return std::move(bt).build().transpose();
}

// ---------------------------------------------------------------------------
// Per-view operator chain A = D K W P
// ---------------------------------------------------------------------------

struct ChainDims {
  Dims texture;
  Dims image;  ///< pre-downsample image grid
  Dims lowres;
};

/// Lazily evaluated D * K(sigma) * W * P. Maps are shared and immutable, so
/// copies are cheap and a chain can be re-targeted to a new sigma.
class ViewChain {
 public:
  ViewChain() = default;
  ViewChain(std::shared_ptr<const SparseLinearMap> projection,
            std::shared_ptr<const SparseLinearMap> warp, BlurKernel blur,
            std::shared_ptr<const SparseLinearMap> downsample, ChainDims dims)
      : projection_(std::move(projection)),
        warp_(std::move(warp)),
        blur_(std::move(blur)),
        downsample_(std::move(downsample)),
        dims_(dims) {
    if (!projection_ || !downsample_) throw StructuralError("view chain: missing operator");
    if (projection_->cols() != dims_.texture.size() || projection_->rows() != dims_.image.size()) {
      throw StructuralError("view chain: projection is " + std::to_string(projection_->rows()) +
                            "x" + std::to_string(projection_->cols()) + ", expected image " +
                            to_string(dims_.image) + " x texture " + to_string(dims_.texture));
    }
    if (warp_ && (warp_->rows() != dims_.image.size() || warp_->cols() != dims_.image.size())) {
      throw StructuralError("view chain: warp does not act on the image grid " +
                            to_string(dims_.image));
    }
    if (downsample_->cols() != dims_.image.size() || downsample_->rows() != dims_.lowres.size()) {
      throw StructuralError("view chain: downsample does not map " + to_string(dims_.image) +
                            " to " + to_string(dims_.lowres));
    }
  }

  [[nodiscard]] const ChainDims& dims() const { return dims_; }
  [[nodiscard]] double sigma() const { return blur_.sigma; }
  [[nodiscard]] const BlurKernel& blur() const { return blur_; }
  [[nodiscard]] const SparseLinearMap& projection() const { return *projection_; }
  [[nodiscard]] const SparseLinearMap* warp() const { return warp_.get(); }
  [[nodiscard]] const SparseLinearMap& downsample() const { return *downsample_; }
  [[nodiscard]] std::shared_ptr<const SparseLinearMap> projection_ptr() const { return projection_; }
  [[nodiscard]] std::shared_ptr<const SparseLinearMap> warp_ptr() const { return warp_; }
  [[nodiscard]] std::shared_ptr<const SparseLinearMap> downsample_ptr() const { return downsample_; }

  [[nodiscard]] ViewChain with_sigma(double sigma) const {
    ViewChain c = *this;
    c.blur_ = build_blur(sigma);
    return c;
  }

  /// W P x on the image grid.
  void image_stage(std::span<const double> tex, std::span<double> img) const {
    if (warp_) {
      std::vector<double> tmp(dims_.image.size());
      projection_->apply(tex, tmp);
      warp_->apply(tmp, img);
    } else {
      projection_->apply(tex, img);
    }
  }

  void forward(std::span<const double> tex, std::span<double> lr) const {
    require_len(tex.size(), dims_.texture.size(), "forward input");
    require_len(lr.size(), dims_.lowres.size(), "forward output");
    std::vector<double> a(dims_.image.size()), b(dims_.image.size());
    image_stage(tex, a);
    blur_apply(blur_, dims_.image, a, b);
    downsample_->apply(b, lr);
  }

  [[nodiscard]] std::vector<double> forward(std::span<const double> tex) const {
    std::vector<double> lr(dims_.lowres.size());
    forward(tex, lr);
    return lr;
  }

  void adjoint(std::span<const double> lr, std::span<double> tex) const {
    require_len(lr.size(), dims_.lowres.size(), "adjoint input");
    require_len(tex.size(), dims_.texture.size(), "adjoint output");
    std::vector<double> a(dims_.image.size()), b(dims_.image.size());
    downsample_->apply_adjoint(lr, a);
    blur_adjoint(blur_, dims_.image, a, b);
    if (warp_) {
      warp_->apply_adjoint(b, a);
      projection_->apply_adjoint(a, tex);
    } else {
      projection_->apply_adjoint(b, tex);
    }
  }

  [[nodiscard]] std::vector<double> adjoint(std::span<const double> lr) const {
    std::vector<double> tex(dims_.texture.size());
    adjoint(lr, tex);
    return tex;
  }

  /// (dA/dsigma) x = D (dK/dsigma) W P x.
  void sigma_derivative(std::span<const double> tex, std::span<double> lr) const {
    require_len(tex.size(), dims_.texture.size(), "sigma_derivative input");
    require_len(lr.size(), dims_.lowres.size(), "sigma_derivative output");
    std::vector<double> a(dims_.image.size()), b(dims_.image.size());
    image_stage(tex, a);
    blur_sigma_gradient(blur_, dims_.image, a, b);
    downsample_->apply(b, lr);
  }

  [[nodiscard]] std::vector<double> sigma_derivative(std::span<const double> tex) const {
    std::vector<double> lr(dims_.lowres.size());
    sigma_derivative(tex, lr);
    return lr;
  }

 private:
  static void require_len(std::size_t got, std::size_t want, const char* what) {
    if (got != want) {
      throw StructuralError(std::string("view chain ") + what + ": length " + std::to_string(got) +
                            ", expected " + std::to_string(want));
    }
  }

  std::shared_ptr<const SparseLinearMap> projection_;
  std::shared_ptr<const SparseLinearMap> warp_;
  BlurKernel blur_;
  std::shared_ptr<const SparseLinearMap> downsample_;
  ChainDims dims_{};
};

/// Builds the chain for one view; `warp` may be null (no flow correction).
inline ViewChain compose_chain(SparseLinearMap projection, std::optional<SparseLinearMap> warp,
                               BlurKernel blur, SparseLinearMap downsample, ChainDims dims) {
  return ViewChain(std::make_shared<const SparseLinearMap>(std::move(projection)),
                   warp ? std::make_shared<const SparseLinearMap>(std::move(*warp)) : nullptr,
                   std::move(blur), std::make_shared<const SparseLinearMap>(std::move(downsample)),
                   dims);
}

/// LR pixels whose full footprint lands on valid texels: the chain applied to
/// the indicator of `tex_mask` reaches 1 there. The slack absorbs f32-stored maps.
inline Mask chain_visibility(const ViewChain& chain, const Mask& tex_mask,
                             double slack = 1e-6) {
  require_same_dims(tex_mask.dims(), chain.dims().texture, "chain_visibility");
  std::vector<double> ones(tex_mask.size());
  for (std::size_t i = 0; i < ones.size(); ++i) ones[i] = tex_mask[i] ? 1.0 : 0.0;
  const auto cover = chain.forward(ones);
  Mask vis(chain.dims().lowres, 0);
  for (std::size_t i = 0; i < cover.size(); ++i) vis[i] = cover[i] >= 1.0 - slack ? 1 : 0;
  return vis;
}

/// Largest singular value estimate of a linear map by power iteration on A^T A.
template <typename Forward, typename Adjoint>
double estimate_operator_norm(Forward&& fwd, Adjoint&& adj, std::size_t n, std::size_t iters = 100,
                              std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> x(n);
  for (double& v : x) v = u(rng);
  double nrm = norm2(x);
  double est = 0.0;
  for (std::size_t it = 0; it < iters && nrm > 0.0; ++it) {
    for (double& v : x) v /= nrm;
    const std::vector<double> y = fwd(x);
    x = adj(y);
    nrm = norm2(x);
    est = std::sqrt(nrm);
  }
  return est;
}

}  // namespace texsr
