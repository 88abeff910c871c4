// texsr_cli: synth | solve | train | eval, each driven by one config file.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <functional>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "texsr/io/binary.hpp"
#include "texsr/io/bundle.hpp"
#include "texsr/io/checkpoint.hpp"
#include "texsr/io/config.hpp"
#include "texsr/io/pfm.hpp"
#include "texsr/io/png.hpp"
#include "texsr/texsr.hpp"

namespace fs = std::filesystem;
using namespace texsr;
using io::Config;

namespace {

enum Exit { kOk = 0, kNumerical = 1, kUsage = 2, kIo = 3 };

void warn_unused(const Config& cfg) {
  for (const auto& key : cfg.unused_keys()) {
    std::cerr << "warning: " << cfg.name() << ": unknown key '" << key << "' ignored\n";
  }
}

void write_text(const fs::path& path, const std::string& text) {
  io::write_file(path, std::vector<unsigned char>(text.begin(), text.end()));
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory '" + p.string() + "': " + ec.message());
}

/// Fails with exit code 1 on the first non-finite sample.
void require_finite(const Raster& r, const std::string& what) {
  if (!all_finite(r.span())) throw NumericalError(what + " contains non-finite values");
}

// -- synth ------------------------------------------------------------------

int cmd_synth(const fs::path& cfg_path) {
  const Config cfg = Config::load(cfg_path);
  SceneSpec spec;
  const std::string kind_name = cfg.get<std::string>("scene.texture", "mixed");
  const TextureKind kind = parse_texture_kind(kind_name);
  spec.texture = {cfg.get<std::size_t>("scene.texture_width", spec.texture.width),
                  cfg.get<std::size_t>("scene.texture_height", spec.texture.height)};
  spec.image = {cfg.get<std::size_t>("scene.image_width", 0),
                cfg.get<std::size_t>("scene.image_height", 0)};
  spec.num_views = cfg.get<std::size_t>("scene.num_views", spec.num_views);
  spec.factor = cfg.get<std::size_t>("scene.factor", spec.factor);
  spec.sigma_true = cfg.get_list("scene.sigma", spec.sigma_true);
  spec.noise_std = cfg.get<double>("scene.noise_std", spec.noise_std);
  spec.max_translation = cfg.get<double>("scene.max_translation", spec.max_translation);
  spec.max_rotation_deg = cfg.get<double>("scene.max_rotation_deg", spec.max_rotation_deg);
  spec.max_skew = cfg.get<double>("scene.max_skew", spec.max_skew);
  spec.flow_amplitude = cfg.get<double>("scene.flow_amplitude", spec.flow_amplitude);
  spec.seed = cfg.get<std::uint64_t>("scene.seed", spec.seed);
  const std::uint64_t texture_seed = cfg.get<std::uint64_t>("scene.texture_seed", spec.seed);
  const fs::path out = cfg.require<std::string>("output.dir");
  warn_unused(cfg);
  if (spec.factor != 2 && spec.factor != 4) {
    throw ConfigError(cfg.name() + ": factor must be 2 or 4, got " + std::to_string(spec.factor));
  }

  const TextureAtlas truth = gen_texture(kind, spec.texture, texture_seed);
  const GroundTruth gt = render_views(truth, spec);
  for (const auto& v : gt.views) require_finite(v.image, "rendered view");
  io::write_bundle(out, gt, to_string(kind));
  std::cout << "synth: wrote " << gt.views.size() << " views to " << out.string() << "\n";
  return kOk;
}

// -- shared run configuration -----------------------------------------------

struct RunConfig {
  fs::path scene;
  fs::path output;
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> estimate;
  std::size_t num_views = 0;
  double lambda = kDefaultLambda;
  SolverConfig solver;
  TrainConfig train;
  PatchGeometry patches;
  std::string target = "truth";
  bool metric_ssim = true;
  bool write_png = true;
};

RunConfig load_run_config(const Config& cfg) {
  RunConfig r;
  r.scene = cfg.require<std::string>("paths.scene");
  r.output = cfg.require<std::string>("paths.output");
  if (cfg.has("paths.checkpoint")) r.checkpoint = cfg.require<std::string>("paths.checkpoint");
  if (cfg.has("paths.estimate")) r.estimate = cfg.require<std::string>("paths.estimate");

  r.num_views = cfg.get<std::size_t>("solver.num_views", 0);
  r.lambda = cfg.get<double>("solver.lambda", r.lambda);
  r.solver.num_pd_iters = cfg.get<std::size_t>("solver.num_pd_iters", kInferenceDepth);
  r.solver.eta = cfg.get<double>("solver.eta", r.solver.eta);
  r.solver.tau = cfg.get<double>("solver.tau", r.solver.tau);
  r.solver.exact_adjoint_tv = cfg.get<bool>("solver.exact_adjoint_tv", r.solver.exact_adjoint_tv);

  r.train.epochs = cfg.get<std::size_t>("train.epochs", 1);
  r.train.batch_size = cfg.get<std::size_t>("train.batch_size", r.train.batch_size);
  r.train.alpha = cfg.get<double>("train.alpha", r.train.alpha);
  r.train.adam.learning_rate = cfg.get<double>("train.learning_rate", r.train.adam.learning_rate);
  r.train.seed = cfg.get<std::uint64_t>("train.seed", r.train.seed);
  r.train.solver = r.solver;
  r.train.solver.num_pd_iters = cfg.get<std::size_t>("train.num_pd_iters", kTrainingDepth);
  r.patches.patch = cfg.get<std::size_t>("train.patch", r.patches.patch);
  r.patches.stride = cfg.get<std::size_t>("train.stride", r.patches.stride);
  r.patches.image_crop = cfg.get<std::size_t>("train.image_crop", r.patches.image_crop);
  r.target = cfg.get<std::string>("train.target", r.target);

  r.metric_ssim = cfg.get<bool>("metrics.ssim", r.metric_ssim);
  r.write_png = cfg.get<bool>("output.png", r.write_png);

  if (r.lambda < 0.0 || !std::isfinite(r.lambda)) {
    throw ConfigError(cfg.name() + ": solver.lambda must be a finite value >= 0");
  }
  if (r.target != "truth" && r.target != "pseudo") {
    throw ConfigError(cfg.name() + ": train.target must be 'truth' or 'pseudo'");
  }
  try {
    r.solver.validate();
    r.train.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(cfg.name() + ": " + e.what());
  }
  return r;
}

io::SceneBundle load_scene(const RunConfig& r) {
  io::SceneBundle b = io::read_bundle(r.scene, r.num_views);
  if (b.spec.factor != 2 && b.spec.factor != 4) {
    throw ConfigError("scene factor must be 2 or 4, got " + std::to_string(b.spec.factor));
  }
  return b;
}

MetricReport report_for(const std::string& name, const Raster& est, const io::SceneBundle& b,
                        const Mask& mask, bool with_ssim) {
  MetricReport m;
  m.name = name;
  m.psnr_db = psnr(est, b.truth.data(), mask);
  m.sre_db = sre(est, b.truth.data(), mask);
  m.ssim = with_ssim ? ssim(est, b.truth.data(), mask) : std::nan("");
  m.n_valid = count_valid(mask);
  return m;
}

void write_reports(const fs::path& dir, const std::string& stem,
                   const std::vector<MetricReport>& reports, nlohmann::json extra) {
  std::string text;
  for (const auto& r : reports) text += to_line(r) + "\n";
  write_text(dir / (stem + ".txt"), text);
  nlohmann::json j = std::move(extra);
  j["metrics"] = nlohmann::json::array();
  for (const auto& r : reports) {
    j["metrics"].push_back(to_json(r));
  }
  write_text(dir / (stem + ".json"), j.dump(2) + "\n");
}

/// Checkpoint parameters fitted to the scene's view count.
LearnableParams params_from_checkpoint(const fs::path& path, Dims atlas, std::size_t views) {
  const io::Checkpoint c = io::read_checkpoint(path);
  if (c.params.lambda_raw.dims() != atlas) {
    throw StructuralError("checkpoint lambda map is " + to_string(c.params.lambda_raw.dims()) +
                          ", scene atlas is " + to_string(atlas));
  }
  if (c.params.sigma_raw.size() < views) {
    throw StructuralError("checkpoint holds " + std::to_string(c.params.sigma_raw.size()) +
                          " view sigmas, scene uses " + std::to_string(views));
  }
  LearnableParams p = c.params;
  p.sigma_raw.resize(views);
  p.sigma0.resize(views);
  return p;
}

// -- solve ------------------------------------------------------------------

int cmd_solve(const fs::path& cfg_path) {
  const Config cfg = Config::load(cfg_path);
  const RunConfig r = load_run_config(cfg);
  warn_unused(cfg);
  const io::SceneBundle b = load_scene(r);
  const MultiViewProblem p = assemble_problem(b.views, b.chains);

  WeightMap lambda(p.texture, r.lambda);
  std::vector<double> sigmas;
  PriorNet prior;
  bool use_prior = false;
  if (r.checkpoint) {
    const LearnableParams lp = params_from_checkpoint(*r.checkpoint, p.texture, b.views.size());
    lambda = lp.lambda();
    sigmas = lp.sigmas();
    prior = lp.prior;
    use_prior = true;
  }
  if (const auto w = step_size_warning(p.terms, lambda, r.solver)) std::cerr << "warning: " << *w << "\n";

  const Raster mva = run_unrolled(p.initial.data(), p.terms, lambda, sigmas, r.solver).output;
  const Raster out = use_prior ? prior_forward(prior, mva, p.initial.mask())
                               : apply_mask(mva, p.initial.mask());
  require_finite(out, "solver output");

  ensure_dir(r.output);
  io::write_pfm(r.output / "texture_sr.pfm", out);
  io::write_pfm(r.output / "initial.pfm", p.initial.data());
  if (r.write_png) io::write_png(r.output / "texture_sr.png", out);

  std::vector<MetricReport> reports{
      report_for("initial", p.initial.data(), b, p.initial.mask(), r.metric_ssim),
      report_for(use_prior ? "mva+prior" : "mva", out, b, p.initial.mask(), r.metric_ssim)};
  nlohmann::json extra = {{"command", "solve"},
                          {"views", b.views.size()},
                          {"num_pd_iters", r.solver.num_pd_iters},
                          {"lambda", use_prior ? nlohmann::json("checkpoint") : nlohmann::json(r.lambda)},
                          {"eta", r.solver.eta},
                          {"tau", r.solver.tau},
                          {"prior", use_prior}};
  write_reports(r.output, "report", reports, extra);
  for (const auto& m : reports) std::cout << to_line(m) << "\n";
  return kOk;
}

// -- train ------------------------------------------------------------------

int cmd_train(const fs::path& cfg_path) {
  const Config cfg = Config::load(cfg_path);
  RunConfig r = load_run_config(cfg);
  warn_unused(cfg);
  const io::SceneBundle b = load_scene(r);
  const MultiViewProblem p = assemble_problem(b.views, b.chains);
  r.patches.factor = b.spec.factor;

  const Raster target = r.target == "truth"
                            ? b.truth.data()
                            : make_pseudo_gt(b.views, b.chains, r.lambda, kReferenceDepth).data();
  const PatchSet set = extract_patches(p.initial, b.views, b.chains, r.patches, &target);
  if (set.patches.empty()) {
    throw UsageError("train: no patches extracted" + (set.warning.empty() ? "" : ": " + set.warning));
  }

  std::vector<double> sigma0;
  for (const auto& c : b.chains) sigma0.push_back(c.sigma());
  LearnableParams params = LearnableParams::initialize(p.texture, sigma0, r.train.seed);
  AdamMoments moments(params.size());
  std::uint64_t first_epoch = 0;
  ensure_dir(r.output);
  const fs::path ckpt = r.checkpoint ? *r.checkpoint : r.output / "checkpoint.tsrc";
  if (r.checkpoint && fs::exists(*r.checkpoint)) {
    const io::Checkpoint c = io::read_checkpoint(*r.checkpoint);
    if (c.params.lambda_raw.dims() != p.texture || c.params.sigma_raw.size() != sigma0.size()) {
      throw StructuralError("checkpoint '" + r.checkpoint->string() + "' does not match the scene");
    }
    params = c.params;
    moments = c.moments;
    first_epoch = c.epoch;
    std::cout << "train: resuming from epoch " << first_epoch << "\n";
  }

  std::string log;
  for (std::uint64_t e = first_epoch; e < first_epoch + r.train.epochs; ++e) {
    const EpochMetrics m = train_epoch(set, params, moments, r.train, e);
    if (!std::isfinite(m.mean_loss.total) || !all_finite(params.pack())) {
      throw NumericalError("train: non-finite loss or parameters in epoch " + std::to_string(e + 1));
    }
    const double mean = m.mean_loss.total;
    char line[160];
    std::snprintf(line, sizeof(line), "epoch %llu steps %zu loss %.9g\n",
                  static_cast<unsigned long long>(e + 1), m.steps, mean);
    std::cout << line;
    log += line;
    io::write_checkpoint(ckpt, {params, moments, e + 1});
    char name[48];
    std::snprintf(name, sizeof(name), "checkpoint_epoch_%03llu.tsrc",
                  static_cast<unsigned long long>(e + 1));
    io::write_checkpoint(r.output / name, {params, moments, e + 1});
  }
  write_text(r.output / "train_log.txt", log);
  return kOk;
}

// -- eval -------------------------------------------------------------------

int cmd_eval(const fs::path& cfg_path) {
  const Config cfg = Config::load(cfg_path);
  const RunConfig r = load_run_config(cfg);
  warn_unused(cfg);
  const io::SceneBundle b = load_scene(r);
  const MultiViewProblem p = assemble_problem(b.views, b.chains);
  const fs::path est_path = r.estimate ? *r.estimate : r.output / "texture_sr.pfm";
  const Raster est = io::read_pfm(est_path);
  require_same_dims(est.dims(), p.texture, "eval estimate");
  require_finite(est, est_path.string());
  const MetricReport m = report_for(fs::path(est_path).stem().string(), est, b, p.initial.mask(),
                                    r.metric_ssim);
  ensure_dir(r.output);
  write_reports(r.output, "eval", {m}, {{"command", "eval"}, {"estimate", est_path.filename().string()}});
  std::cout << to_line(m) << "\n";
  return kOk;
}

int run_guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view texture super-resolution"};
  app.require_subcommand(1);
  std::string path;
  struct Command {
    const char* name;
    const char* help;
    int (*fn)(const fs::path&);
  };
  const Command commands[] = {
      {"synth", "render a synthetic scene bundle from a scene config", cmd_synth},
      {"solve", "run the multi-view solver (and a trained prior, if given)", cmd_solve},
      {"train", "fit lambda, sigmas and the prior on scene patches", cmd_train},
      {"eval", "score an estimate against the scene's ground truth", cmd_eval},
  };
  std::vector<std::pair<CLI::App*, int (*)(const fs::path&)>> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("config", path, "config file")->required();
    subs.emplace_back(sub, c.fn);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }
  for (const auto& [sub, fn] : subs) {
    if (sub->parsed()) return run_guarded([&, f = fn] { return f(path); });
  }
  return kUsage;
}
