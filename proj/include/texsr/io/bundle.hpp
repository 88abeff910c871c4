#pragma once

#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "texsr/atlas.hpp"
#include "texsr/error.hpp"
#include "texsr/io/binary.hpp"
#include "texsr/io/config.hpp"
#include "texsr/io/pfm.hpp"
#include "texsr/io/sparse_file.hpp"
#include "texsr/operators.hpp"
#include "texsr/synth.hpp"

namespace texsr::io {

/// A scene as stored on disk: truth, per-view projections, optional flows and
/// LR observations. Visibility is recomputed from the loaded chains.
struct SceneBundle {
  SceneSpec spec;
  std::string texture_kind;
  TextureAtlas truth;
  std::vector<ViewChain> chains;
  std::vector<ViewObservation> views;
};

namespace detail {

inline std::string view_file(std::size_t v, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "view_%03zu.%s", v, ext);
  return buf;
}

inline void ensure_dir(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory '" + p.string() + "': " + ec.message());
}

}  // namespace detail

inline std::string scene_cfg_text(const SceneSpec& spec, const std::string& kind, bool has_flow) {
  std::ostringstream os;
  os << "[scene]\n"
     << "texture = " << kind << "\n"
     << "texture_width = " << spec.texture.width << "\n"
     << "texture_height = " << spec.texture.height << "\n"
     << "image_width = " << spec.image_dims().width << "\n"
     << "image_height = " << spec.image_dims().height << "\n"
     << "num_views = " << spec.num_views << "\n"
     << "factor = " << spec.factor << "\n"
     << "noise_std = " << format_exact(spec.noise_std) << "\n"
     << "max_translation = " << format_exact(spec.max_translation) << "\n"
     << "max_rotation_deg = " << format_exact(spec.max_rotation_deg) << "\n"
     << "max_skew = " << format_exact(spec.max_skew) << "\n"
     << "flow_amplitude = " << format_exact(spec.flow_amplitude) << "\n"
     << "seed = " << spec.seed << "\n"
     << "has_flow = " << (has_flow ? 1 : 0) << "\n"
     << "sigma = ";
  for (std::size_t v = 0; v < spec.num_views; ++v) {
    os << (v ? "," : "") << format_exact(spec.sigma(v));
  }
  os << "\n";
  return os.str();
}

inline void write_bundle(const std::filesystem::path& dir, const GroundTruth& gt,
                         const std::string& kind) {
  detail::ensure_dir(dir / "views");
  detail::ensure_dir(dir / "chains");
  const bool has_flow = !gt.views.empty() && gt.views.front().flow.has_value();
  if (has_flow) detail::ensure_dir(dir / "flows");
  write_pfm(dir / "gt.pfm", gt.texture.data());
  for (std::size_t v = 0; v < gt.views.size(); ++v) {
    const auto& obs = gt.views[v];
    write_pfm(dir / "views" / detail::view_file(obs.view_id, "pfm"), obs.image);
    write_sparse_map(dir / "chains" / detail::view_file(obs.view_id, "tsr1"),
                     gt.chains[obs.chain].projection());
    if (obs.flow) {
      write_pfm_flow(dir / "flows" / detail::view_file(obs.view_id, "pfm"), obs.flow->field());
    }
  }
  const std::string text = scene_cfg_text(gt.spec, kind, has_flow);
  write_file(dir / "scene.cfg", std::vector<unsigned char>(text.begin(), text.end()));
}

/// Loads the first `max_views` views (0 = all).
inline SceneBundle read_bundle(const std::filesystem::path& dir, std::size_t max_views = 0) {
  if (!std::filesystem::is_directory(dir)) {
    throw UsageError("scene directory '" + dir.string() + "' does not exist");
  }
  const Config cfg = Config::load(dir / "scene.cfg");
  SceneBundle b;
  SceneSpec& s = b.spec;
  b.texture_kind = cfg.get<std::string>("scene.texture", "unknown");
  s.texture = {cfg.require<std::size_t>("scene.texture_width"),
               cfg.require<std::size_t>("scene.texture_height")};
  s.image = {cfg.require<std::size_t>("scene.image_width"),
             cfg.require<std::size_t>("scene.image_height")};
  s.num_views = cfg.require<std::size_t>("scene.num_views");
  s.factor = cfg.require<std::size_t>("scene.factor");
  s.noise_std = cfg.get<double>("scene.noise_std", s.noise_std);
  s.max_translation = cfg.get<double>("scene.max_translation", s.max_translation);
  s.max_rotation_deg = cfg.get<double>("scene.max_rotation_deg", s.max_rotation_deg);
  s.max_skew = cfg.get<double>("scene.max_skew", s.max_skew);
  s.flow_amplitude = cfg.get<double>("scene.flow_amplitude", s.flow_amplitude);
  s.seed = cfg.get<std::uint64_t>("scene.seed", s.seed);
  s.sigma_true = cfg.get_list("scene.sigma", s.sigma_true);
  const bool has_flow = cfg.get<bool>("scene.has_flow", false);
  try {
    s.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(cfg.name() + ": " + e.what());
  }

  const Raster truth = read_pfm(dir / "gt.pfm");
  require_same_dims(truth.dims(), s.texture, "bundle gt.pfm");
  b.truth = TextureAtlas(truth);

  const Dims img = s.image_dims();
  const Dims lr{img.width / s.factor, img.height / s.factor};
  const std::size_t n = max_views == 0 ? s.num_views : std::min(max_views, s.num_views);
  const auto down = std::make_shared<const SparseLinearMap>(build_downsample(s.factor, img));
  b.chains.resize(n);
  b.views.resize(n);
  for (std::size_t v = 0; v < n; ++v) {
    auto proj = std::make_shared<const SparseLinearMap>(
        read_sparse_map(dir / "chains" / detail::view_file(v, "tsr1")));
    std::optional<FlowField> flow;
    std::shared_ptr<const SparseLinearMap> warp;
    if (has_flow) {
      const auto field = read_pfm_flow(dir / "flows" / detail::view_file(v, "pfm"));
      require_same_dims(field.dims(), img, "bundle flow");
      flow = FlowField(field, FlowField::kDefaultMaxMagnitude + 1e-6);
      warp = std::make_shared<const SparseLinearMap>(build_warp(*flow));
    }
    b.chains[v] = ViewChain(proj, warp, build_blur(s.sigma(v)), down, {s.texture, img, lr});
    ViewObservation& obs = b.views[v];
    obs.view_id = v;
    obs.chain = v;
    obs.flow = flow;
    obs.image = read_pfm(dir / "views" / detail::view_file(v, "pfm"));
    require_same_dims(obs.image.dims(), lr, "bundle view");
    obs.visibility = chain_visibility(b.chains[v], b.truth.mask());
    for (std::size_t i = 0; i < obs.image.size(); ++i) {
      if (!obs.visibility[i]) obs.image[i] = 0.0;
    }
  }
  s.num_views = n;
  if (s.sigma_true.size() > 1) s.sigma_true.resize(n);
  return b;
}

}  // namespace texsr::io
