#pragma once

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "texsr/error.hpp"
#include "texsr/operators.hpp"
#include "texsr/raster.hpp"
#include "texsr/sparse.hpp"

namespace texsr {

/// Single-channel HR texture with its chart mask. Invalid texels hold 0.
class TextureAtlas {
 public:
  TextureAtlas() = default;
  TextureAtlas(Raster data, Mask mask) : data_(std::move(data)), mask_(std::move(mask)) {
    require_same_dims(data_.dims(), mask_.dims(), "texture atlas");
    if (data_.width() < 1 || data_.height() < 1) throw ParameterError("texture atlas: empty dims");
    if (!all_finite(data_.span())) throw NumericalError("texture atlas: non-finite texel");
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!mask_[i]) data_[i] = 0.0;
    }
  }
  explicit TextureAtlas(Raster data) : TextureAtlas(data, full_mask(data.dims())) {}

  [[nodiscard]] Dims dims() const { return data_.dims(); }
  [[nodiscard]] const Raster& data() const { return data_; }
  [[nodiscard]] const Mask& mask() const { return mask_; }

  friend bool operator==(const TextureAtlas&, const TextureAtlas&) = default;

 private:
  Raster data_;
  Mask mask_;
};

/// One LR observation. `chain` indexes the view's operator chain in whatever
/// container the caller keeps them; `view_id` fixes the reduction order.
struct ViewObservation {
  std::size_t view_id = 0;
  Raster image;
  Mask visibility;
  std::optional<FlowField> flow;
  std::size_t chain = 0;
};

/// Row-normalized transpose of D W P, restricted to visible LR pixels: maps an
/// LR image onto the texture grid. Empty rows mark texels the view never sees.
inline SparseLinearMap build_pullback(const ViewChain& chain, const Mask& visibility) {
  require_same_dims(visibility.dims(), chain.dims().lowres, "build_pullback");
  SparseLinearMap sampling = chain.projection();
  if (chain.warp() != nullptr) sampling = multiply(*chain.warp(), sampling);
  const SparseLinearMap back = multiply(chain.downsample(), sampling).transpose();
  SparseBuilder b(back.rows(), back.cols());
  for (std::size_t r = 0; r < back.rows(); ++r) {
    const auto cols = back.row_columns(r);
    const auto vals = back.row_values(r);
    double s = 0.0;
    for (std::size_t k = 0; k < cols.size(); ++k) {
      if (visibility[cols[k]]) s += vals[k];
    }
    if (s > 0.0) {
      for (std::size_t k = 0; k < cols.size(); ++k) {
        if (visibility[cols[k]]) b.add(cols[k], vals[k] / s);
      }
      b.end_row();
    } else {
      b.empty_row();
    }
  }
  return std::move(b).build();
}

/// Texel-wise mean over the views that see each texel; unseen texels are 0 and
/// masked out. Views are accumulated in ascending view_id order.
inline TextureAtlas init_atlas_average(std::span<const ViewObservation> views,
                                       std::span<const SparseLinearMap> pullbacks, Dims tex) {
  if (views.empty()) throw UsageError("init_atlas_average: no views");
  if (views.size() != pullbacks.size()) {
    throw StructuralError("init_atlas_average: " + std::to_string(views.size()) + " views but " +
                          std::to_string(pullbacks.size()) + " pullback maps");
  }
  std::vector<std::size_t> order(views.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return views[a].view_id < views[b].view_id;
  });

  Raster sum(tex, 0.0);
  std::vector<std::size_t> count(tex.size(), 0);
  std::vector<double> sampled(tex.size());
  for (std::size_t i : order) {
    const auto& map = pullbacks[i];
    if (map.rows() != tex.size() || map.cols() != views[i].image.size()) {
      throw StructuralError("init_atlas_average: pullback " + std::to_string(i) + " is " +
                            std::to_string(map.rows()) + "x" + std::to_string(map.cols()) +
                            ", expected " + std::to_string(tex.size()) + "x" +
                            std::to_string(views[i].image.size()));
    }
    map.apply(views[i].image.span(), sampled);
    for (std::size_t t = 0; t < tex.size(); ++t) {
      if (map.row_offsets()[t + 1] > map.row_offsets()[t]) {
        sum[t] += sampled[t];
        ++count[t];
      }
    }
  }
  Mask mask(tex, 0);
  for (std::size_t t = 0; t < tex.size(); ++t) {
    if (count[t] > 0) {
      sum[t] /= static_cast<double>(count[t]);
      mask[t] = 1;
    }
  }
  return {std::move(sum), std::move(mask)};
}

/// Square structuring element of side 2*radius+1.
inline Mask dilate_mask(const Mask& mask, std::size_t radius) {
  if (radius == 0) return mask;
  const Dims d = mask.dims();
  Mask tmp(d, 0), out(d, 0);
  const auto r = static_cast<std::ptrdiff_t>(radius);
  for (std::size_t y = 0; y < d.height; ++y) {
    for (std::size_t x = 0; x < d.width; ++x) {
      if (!mask(x, y)) continue;
      const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(x) - r);
      const auto hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(d.width) - 1,
                                               static_cast<std::ptrdiff_t>(x) + r);
      for (auto xx = lo; xx <= hi; ++xx) tmp(static_cast<std::size_t>(xx), y) = 1;
    }
  }
  for (std::size_t y = 0; y < d.height; ++y) {
    for (std::size_t x = 0; x < d.width; ++x) {
      if (!tmp(x, y)) continue;
      const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(y) - r);
      const auto hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(d.height) - 1,
                                               static_cast<std::ptrdiff_t>(y) + r);
      for (auto yy = lo; yy <= hi; ++yy) out(x, static_cast<std::size_t>(yy)) = 1;
    }
  }
  return out;
}

inline constexpr std::size_t kDefaultDilationRadius = 8;

// ---------------------------------------------------------------------------
// Patches
// ---------------------------------------------------------------------------

struct PatchGeometry {
  std::size_t patch = 64;        ///< texture patch side
  std::size_t image_crop = 200;  ///< pre-downsample image crop side
  std::size_t factor = 2;
  std::size_t stride = 32;

  [[nodiscard]] std::size_t lowres_crop() const { return image_crop / factor; }
};

/// One view restricted to a patch: LR crop plus a chain mapping the texture
/// patch to it. Crop origins are on the image grid and multiples of `factor`.
struct PatchView {
  std::size_t view_id = 0;
  std::ptrdiff_t crop_x = 0;
  std::ptrdiff_t crop_y = 0;
  Raster lowres;
  Mask visibility;
  ViewChain chain;
  /// Bounding box of image pixels that sample the patch, crop-relative, inclusive.
  std::array<std::ptrdiff_t, 4> footprint{};
};

struct Patch {
  std::size_t tex_x = 0;
  std::size_t tex_y = 0;
  TextureAtlas initial;
  std::optional<Raster> target;
  std::vector<PatchView> views;
};

struct PatchSet {
  PatchGeometry geometry;
  std::vector<Patch> patches;
  /// Empty on success; explains why nothing was extracted otherwise.
  std::string warning;
};

namespace detail {

inline std::ptrdiff_t floor_div(std::ptrdiff_t a, std::ptrdiff_t b) {
  std::ptrdiff_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

inline std::vector<std::size_t> patch_offsets(std::size_t extent, std::size_t patch,
                                              std::size_t stride) {
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o + patch <= extent; o += stride) out.push_back(o);
  if (!out.empty() && out.back() + patch < extent) out.push_back(extent - patch);
  return out;
}

/// Rows of `map` restricted to a sub-window of its row grid and its column
/// grid. Rows outside the source grid, or that reference a column outside the
/// column window, become empty.
inline SparseLinearMap restrict_map(const SparseLinearMap& map, Dims row_grid, std::ptrdiff_t rx0,
                                    std::ptrdiff_t ry0, Dims row_win, Dims col_grid,
                                    std::ptrdiff_t cx0, std::ptrdiff_t cy0, Dims col_win) {
  SparseBuilder b(row_win.size(), col_win.size());
  for (std::size_t y = 0; y < row_win.height; ++y) {
    for (std::size_t x = 0; x < row_win.width; ++x) {
      const std::ptrdiff_t sx = rx0 + static_cast<std::ptrdiff_t>(x);
      const std::ptrdiff_t sy = ry0 + static_cast<std::ptrdiff_t>(y);
      if (sx < 0 || sy < 0 || sx >= static_cast<std::ptrdiff_t>(row_grid.width) ||
          sy >= static_cast<std::ptrdiff_t>(row_grid.height)) {
        b.empty_row();
        continue;
      }
      const std::size_t r = row_grid.index(static_cast<std::size_t>(sx), static_cast<std::size_t>(sy));
      const auto cols = map.row_columns(r);
      const auto vals = map.row_values(r);
      bool inside = !cols.empty();
      for (auto c : cols) {
        const auto cx = static_cast<std::ptrdiff_t>(c % col_grid.width) - cx0;
        const auto cy = static_cast<std::ptrdiff_t>(c / col_grid.width) - cy0;
        if (cx < 0 || cy < 0 || cx >= static_cast<std::ptrdiff_t>(col_win.width) ||
            cy >= static_cast<std::ptrdiff_t>(col_win.height)) {
          inside = false;
          break;
        }
      }
      if (!inside) {
        b.empty_row();
        continue;
      }
      for (std::size_t k = 0; k < cols.size(); ++k) {
        const auto cx = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(cols[k] % col_grid.width) - cx0);
        const auto cy = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(cols[k] / col_grid.width) - cy0);
        b.add(col_win.index(cx, cy), vals[k]);
      }
      b.end_row();
    }
  }
  return std::move(b).build();
}

}  // namespace detail

/// Cuts the atlas into patch x patch windows (row-major by offset) and builds,
/// for each view that sees a window, the cropped LR data and a patch-local
/// chain. Windows without valid texels are skipped.
inline PatchSet extract_patches(const TextureAtlas& atlas, std::span<const ViewObservation> views,
                                std::span<const ViewChain> chains, const PatchGeometry& geom,
                                const Raster* target = nullptr) {
  if (geom.stride < 1) throw ParameterError("extract_patches: stride must be >= 1");
  if (geom.factor < 1 || geom.image_crop % geom.factor != 0) {
    throw ParameterError("extract_patches: image crop " + std::to_string(geom.image_crop) +
                         " not divisible by factor " + std::to_string(geom.factor));
  }
  if (target != nullptr) require_same_dims(target->dims(), atlas.dims(), "extract_patches target");
  PatchSet set;
  set.geometry = geom;
  const Dims tex = atlas.dims();
  if (tex.width < geom.patch || tex.height < geom.patch) {
    set.warning = "atlas " + to_string(tex) + " is smaller than the " +
                  std::to_string(geom.patch) + "x" + std::to_string(geom.patch) + " patch";
    return set;
  }

  const Dims pdims{geom.patch, geom.patch};
  const Dims crop_dims{geom.image_crop, geom.image_crop};
  const auto s = static_cast<std::ptrdiff_t>(geom.factor);

  // Per view: transposed projection (texel -> image pixels) and warp reach.
  std::vector<SparseLinearMap> proj_t(views.size());
  std::vector<std::ptrdiff_t> reach(views.size(), 0);
  for (std::size_t v = 0; v < views.size(); ++v) {
    const ViewChain& ch = chains[views[v].chain];
    require_same_dims(ch.dims().texture, tex, "extract_patches chain");
    proj_t[v] = ch.projection().transpose();
    if (views[v].flow) {
      double m = 0.0;
      const auto& f = views[v].flow->field();
      for (std::size_t i = 0; i < f.x.size(); ++i) m = std::max(m, std::hypot(f.x[i], f.y[i]));
      reach[v] = static_cast<std::ptrdiff_t>(std::ceil(m)) + 1;
    }
  }

  for (std::size_t oy : detail::patch_offsets(tex.height, geom.patch, geom.stride)) {
    for (std::size_t ox : detail::patch_offsets(tex.width, geom.patch, geom.stride)) {
      const Mask pmask = crop(atlas.mask(), static_cast<std::ptrdiff_t>(ox),
                              static_cast<std::ptrdiff_t>(oy), pdims, std::uint8_t{0});
      if (count_valid(pmask) == 0) continue;
      Patch patch;
      patch.tex_x = ox;
      patch.tex_y = oy;
      patch.initial = TextureAtlas(crop(atlas.data(), static_cast<std::ptrdiff_t>(ox),
                                        static_cast<std::ptrdiff_t>(oy), pdims),
                                   pmask);
      if (target != nullptr) {
        patch.target = crop(*target, static_cast<std::ptrdiff_t>(ox),
                            static_cast<std::ptrdiff_t>(oy), pdims);
      }

      for (std::size_t v = 0; v < views.size(); ++v) {
        const ViewChain& ch = chains[views[v].chain];
        const Dims img = ch.dims().image;
        std::ptrdiff_t x0 = std::numeric_limits<std::ptrdiff_t>::max(), y0 = x0;
        std::ptrdiff_t x1 = std::numeric_limits<std::ptrdiff_t>::min(), y1 = x1;
        for (std::size_t ty = oy; ty < oy + geom.patch; ++ty) {
          for (std::size_t tx = ox; tx < ox + geom.patch; ++tx) {
            for (auto pix : proj_t[v].row_columns(tex.index(tx, ty))) {
              const auto px = static_cast<std::ptrdiff_t>(pix % img.width);
              const auto py = static_cast<std::ptrdiff_t>(pix / img.width);
              x0 = std::min(x0, px);
              x1 = std::max(x1, px);
              y0 = std::min(y0, py);
              y1 = std::max(y1, py);
            }
          }
        }
        if (x1 < x0) continue;  // view does not see this patch
        x0 -= reach[v];
        y0 -= reach[v];
        x1 += reach[v];
        y1 += reach[v];
        const auto half = static_cast<std::ptrdiff_t>(geom.image_crop) / 2;
        const std::ptrdiff_t cx = detail::floor_div((x0 + x1) / 2 - half, s) * s;
        const std::ptrdiff_t cy = detail::floor_div((y0 + y1) / 2 - half, s) * s;

        PatchView pv;
        pv.view_id = views[v].view_id;
        pv.crop_x = cx;
        pv.crop_y = cy;
        pv.footprint = {x0 - cx, y0 - cy, x1 - cx, y1 - cy};

        SparseLinearMap p = detail::restrict_map(ch.projection(), img, cx, cy, crop_dims, tex,
                                                 static_cast<std::ptrdiff_t>(ox),
                                                 static_cast<std::ptrdiff_t>(oy), pdims);
        std::optional<SparseLinearMap> w;
        if (ch.warp() != nullptr) {
          w = detail::restrict_map(*ch.warp(), img, cx, cy, crop_dims, img, cx, cy, crop_dims);
        }
        const Dims lr{crop_dims.width / geom.factor, crop_dims.height / geom.factor};
        pv.chain = compose_chain(std::move(p), std::move(w), ch.blur(),
                                 build_downsample(geom.factor, crop_dims), {pdims, crop_dims, lr});
        pv.lowres = texsr::crop(views[v].image, cx / s, cy / s, lr);
        const Mask full_vis = texsr::crop(views[v].visibility, cx / s, cy / s, lr, std::uint8_t{0});
        pv.visibility = chain_visibility(pv.chain, pmask);
        // The crop's renormalized blur differs from the full view within one
        // blur radius of the crop edge.
        const std::size_t margin = ch.blur().radius;
        for (std::size_t ly = 0; ly < lr.height; ++ly) {
          for (std::size_t lx = 0; lx < lr.width; ++lx) {
            const std::size_t i = lr.index(lx, ly);
            const bool interior = lx * geom.factor >= margin && ly * geom.factor >= margin &&
                                  (lx + 1) * geom.factor + margin <= crop_dims.width &&
                                  (ly + 1) * geom.factor + margin <= crop_dims.height;
            pv.visibility[i] = (interior && pv.visibility[i] && full_vis[i]) ? 1 : 0;
            if (!pv.visibility[i]) pv.lowres[i] = 0.0;
          }
        }
        if (count_valid(pv.visibility) == 0) continue;
        patch.views.push_back(std::move(pv));
      }
      set.patches.push_back(std::move(patch));
    }
  }
  return set;
}

}  // namespace texsr
