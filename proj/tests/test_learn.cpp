#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "test_util.hpp"
#include "texsr/learn.hpp"
#include "texsr/problem.hpp"
#include "texsr/synth.hpp"

using namespace texsr;
using texsr::oracle::random_raster;

namespace {

struct Instance {
  std::vector<ViewTerm> views;
  Raster init;
  WeightMap lambda;
  std::vector<double> sigmas;
};

Instance small_instance(std::uint64_t seed) {
  SceneSpec spec;
  spec.texture = {16, 16};
  spec.num_views = 2;
  spec.seed = seed;
  const auto gt = render_views(gen_texture(TextureKind::Mixed, spec.texture, seed), spec);
  const auto p = assemble_problem(gt.views, gt.chains);
  std::mt19937_64 rng(seed);
  Instance in{p.terms, p.initial.data(), random_raster(spec.texture, rng, 0.05, 0.3), {0.8, 0.9}};
  return in;
}

/// Which constraints are active in each recorded iteration.
std::vector<int> active_pattern(const SolverTrace& tr) {
  std::vector<int> pat;
  for (const auto& rec : tr.iterations) {
    for (const auto& z : rec.dual_args) {
      for (double v : z) pat.push_back(v >= 1.0 ? 1 : (v <= -1.0 ? -1 : 0));
    }
    for (std::size_t i = 0; i < rec.tv_arg.x.size(); ++i) {
      pat.push_back(std::hypot(rec.tv_arg.x[i], rec.tv_arg.y[i]) >= 1.0);
    }
  }
  return pat;
}

struct Probe {
  double value;
  std::vector<int> pattern;
};

Probe objective(const Instance& in, const Raster& init, const WeightMap& lam,
                const std::vector<double>& sig, const Raster& up, SolverConfig cfg) {
  cfg.record_states = true;
  const auto r = run_unrolled(init, in.views, lam, sig, cfg);
  return {dot(r.output.span(), up.span()), active_pattern(*r.trace)};
}

struct FdStats {
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double worst = 0.0;
};

void check(FdStats& st, double fd, double an) {
  const double err = std::abs(fd - an) / std::max(std::abs(fd), 1e-6);
  st.worst = std::max(st.worst, err);
  ++st.checked;
}

/// `stress` scales lambda and perturbs the initial atlas so that both
/// projections become active within five iterations.
std::size_t solver_gradient_check(SolverConfig cfg, double stress = 0.0) {
  Instance in = small_instance(21);
  std::mt19937_64 rng(22);
  if (stress > 0.0) {
    for (double& l : in.lambda) l *= 20.0 * stress;
    for (double& t : in.init) t += stress * std::uniform_real_distribution<double>(-1, 1)(rng);
  }
  const Raster up = random_raster(in.init.dims(), rng, -1, 1);
  cfg.num_pd_iters = 5;
  cfg.record_states = true;
  const auto r = run_unrolled(in.init, in.views, in.lambda, in.sigmas, cfg);
  const auto g = backprop_through_solver(&*r.trace, up);
  const auto base = active_pattern(*r.trace);
  const double h = 1e-4;

  FdStats lam_st, sig_st, init_st;
  for (std::size_t i = 0; i < in.lambda.size(); ++i) {
    WeightMap lp = in.lambda, lm = in.lambda;
    lp[i] += h;
    lm[i] -= h;
    const Probe a = objective(in, in.init, lp, in.sigmas, up, cfg);
    const Probe b = objective(in, in.init, lm, in.sigmas, up, cfg);
    if (a.pattern != base || b.pattern != base) {
      ++lam_st.skipped;
      continue;
    }
    check(lam_st, (a.value - b.value) / (2 * h), g.lambda[i]);
  }
  for (std::size_t v = 0; v < in.sigmas.size(); ++v) {
    auto sp = in.sigmas, sm = in.sigmas;
    sp[v] += h;
    sm[v] -= h;
    // Same truncation radius on both sides: 3 * sigma stays inside one integer step.
    const Probe a = objective(in, in.init, in.lambda, sp, up, cfg);
    const Probe b = objective(in, in.init, in.lambda, sm, up, cfg);
    EXPECT_EQ(a.pattern, base);
    EXPECT_EQ(b.pattern, base);
    check(sig_st, (a.value - b.value) / (2 * h), g.sigma[v]);
  }
  for (std::size_t i = 0; i < in.init.size(); i += 3) {
    Raster ip = in.init, im = in.init;
    ip[i] += h;
    im[i] -= h;
    const Probe a = objective(in, ip, in.lambda, in.sigmas, up, cfg);
    const Probe b = objective(in, im, in.lambda, in.sigmas, up, cfg);
    if (a.pattern != base || b.pattern != base) continue;
    check(init_st, (a.value - b.value) / (2 * h), g.init[i]);
  }
  EXPECT_GT(lam_st.checked, in.lambda.size() * 9 / 10);
  EXPECT_LE(lam_st.worst, 1e-4);
  EXPECT_LE(sig_st.worst, 1e-4);
  EXPECT_LE(init_st.worst, 1e-4);
  return static_cast<std::size_t>(std::count_if(base.begin(), base.end(), [](int a) { return a != 0; }));
}

}  // namespace

TEST(Reparam, SoftplusAndSigmaClamp) {
  EXPECT_NEAR(softplus(softplus_inverse(0.1)), 0.1, 1e-15);
  EXPECT_NEAR(sigma_from_raw(sigma_to_raw(0.8)), 0.8, 1e-14);
  for (double raw : {-800.0, -20.0, 0.0, 20.0, 800.0}) {
    const double s = sigma_from_raw(raw);
    EXPECT_GE(s, kSigmaMin);
    EXPECT_LE(s, kSigmaMax);
    EXPECT_GE(softplus(raw), 0.0);
  }
  const double h = 1e-6;
  EXPECT_NEAR(sigma_raw_derivative(0.3), (sigma_from_raw(0.3 + h) - sigma_from_raw(0.3 - h)) / (2 * h),
              1e-8);
  EXPECT_THROW((void)sigma_to_raw(5.0), ParameterError);
}

TEST(Reparam, InitialParams) {
  const std::vector<double> s0{0.8, 1.2};
  const auto p = LearnableParams::initialize({5, 4}, s0, 1);
  for (double l : p.lambda()) EXPECT_NEAR(l, 0.1, 1e-15);
  const auto s = p.sigmas();
  EXPECT_NEAR(s[0], 0.8, 1e-14);
  EXPECT_NEAR(s[1], 1.2, 1e-14);
  LearnableParams q = p;
  q.unpack(p.pack());
  EXPECT_EQ(q.pack(), p.pack());
}

TEST(Loss, Examples) {
  const Raster t(Dims{4, 4}, 0.3);
  const Mask m = full_mask(t.dims());
  const std::vector<double> s0{0.8, 1.0};
  EXPECT_EQ(loss(t, t, m, s0, s0, 1.0).total, 0.0);
  const std::vector<double> s{0.9, 0.8};
  const LossTerms l = loss(t, t, m, s, s0, 1.0);
  EXPECT_NEAR(l.total, 0.3, 1e-15);
  EXPECT_NEAR(l.sigma_reg, 0.3, 1e-15);
}

TEST(Loss, MatchesDirectEvaluation) {
  std::mt19937_64 rng(3);
  const Raster a = random_raster({9, 9}, rng), b = random_raster({9, 9}, rng);
  Mask m = full_mask(a.dims());
  m[5] = m[40] = 0;
  const std::vector<double> s{0.7, 1.9, 0.2}, s0{0.8, 1.5, 0.2};
  long double data = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (m[i]) data += std::fabs(a[i] - b[i]);
  }
  const double reg = 0.1 + 0.4;
  const LossTerms l = loss(a, b, m, s, s0, 2.5);
  EXPECT_LE(std::abs(l.data_l1 - static_cast<double>(data)), 1e-12 * l.data_l1);
  EXPECT_NEAR(l.sigma_reg, reg, 1e-12);
  EXPECT_NEAR(l.total, l.data_l1 + 2.5 * l.sigma_reg, 1e-12 * l.total);
}

TEST(Backprop, MissingTraceIsUsageError) {
  EXPECT_THROW((void)backprop_through_solver(nullptr, Raster(Dims{2, 2}, 0.0)), UsageError);
}

TEST(Backprop, ZeroIterations) {
  const Instance in = small_instance(4);
  SolverConfig cfg;
  cfg.num_pd_iters = 0;
  cfg.record_states = true;
  const auto r = run_unrolled(in.init, in.views, in.lambda, in.sigmas, cfg);
  std::mt19937_64 rng(4);
  const Raster up = random_raster(in.init.dims(), rng);
  const auto g = backprop_through_solver(&*r.trace, up);
  EXPECT_EQ(g.init.values(), up.values());
  for (double v : g.lambda) EXPECT_EQ(v, 0.0);
  for (double v : g.sigma) EXPECT_EQ(v, 0.0);
}

TEST(Backprop, MatchesFiniteDifferencesDefaultSteps) { (void)solver_gradient_check(SolverConfig{}); }

TEST(Backprop, MatchesFiniteDifferencesWithActiveProjections) {
  SolverConfig cfg;
  cfg.eta = cfg.tau = 0.6;
  EXPECT_GT(solver_gradient_check(cfg, 1.0), 0u);
}

TEST(Backprop, MatchesFiniteDifferencesPointwiseLambda) {
  SolverConfig cfg;
  cfg.eta = cfg.tau = 0.6;
  cfg.exact_adjoint_tv = false;
  EXPECT_GT(solver_gradient_check(cfg, 1.0), 0u);
}

TEST(Adam, ZeroGradientLeavesParams) {
  std::vector<double> p{0.3, -1.2};
  const std::vector<double> g{0.0, 0.0};
  AdamMoments m(2);
  adam_step(p, g, m, AdamConfig{}, 1);
  EXPECT_EQ(p, (std::vector<double>{0.3, -1.2}));
  EXPECT_THROW(adam_step(p, g, m, AdamConfig{}, 0), UsageError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p{1.0};
  AdamMoments m(1);
  adam_step(p, std::vector<double>{1.0}, m, AdamConfig{}, 1);
  EXPECT_NEAR(p[0], 1.0 - 1e-4, 1e-11);
}

TEST(Adam, QuadraticDecreasesAfterBurnIn) {
  std::vector<double> p{3.0};
  AdamMoments m(1);
  AdamConfig cfg;
  cfg.learning_rate = 0.05;
  double prev = p[0] * p[0];
  for (std::uint64_t t = 1; t <= 100; ++t) {
    adam_step(p, std::vector<double>{2.0 * p[0]}, m, cfg, t);
    const double f = p[0] * p[0];
    if (t > 5) {
      EXPECT_LT(f, prev);
    }
    prev = f;
  }
  EXPECT_LT(prev, 9.0);
}

namespace {

PatchSet toy_patches(std::size_t count, std::uint64_t seed) {
  SceneSpec spec;
  spec.texture = {48, 48};
  spec.num_views = 3;
  spec.seed = seed;
  const auto gt = render_views(gen_texture(TextureKind::Mixed, spec.texture, seed), spec);
  const auto prob = assemble_problem(gt.views, gt.chains);
  PatchGeometry geom;
  geom.patch = 16;
  geom.stride = 16;
  geom.image_crop = 40;
  auto set = extract_patches(prob.initial, gt.views, gt.chains, geom, &gt.texture.data());
  set.patches.resize(std::min(count, set.patches.size()));
  return set;
}

}  // namespace

TEST(Train, FullSampleGradientMatchesFiniteDifferences) {
  const PatchSet set = toy_patches(1, 31);
  ASSERT_EQ(set.patches.size(), 1u);
  const Patch& patch = set.patches.front();
  const std::vector<double> s0{0.8, 0.8, 0.8};
  LearnableParams params = LearnableParams::initialize({48, 48}, s0, 5);
  // Move away from the identity prior and from sigma0 so every term is live.
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0.0, 0.05);
  for (double& w : params.prior.layers[2].weight) w = n(rng);
  params.sigma_raw[0] += 0.3;
  params.sigma_raw[2] -= 0.2;
  TrainConfig cfg;
  cfg.solver.num_pd_iters = 5;
  const SampleResult r = evaluate_sample(patch, params, cfg);
  const auto flat = params.pack();
  const double h = 1e-4;
  std::vector<std::size_t> probes;
  for (std::size_t y = 0; y < 16; y += 5) {
    for (std::size_t x = 0; x < 16; x += 5) probes.push_back((patch.tex_y + y) * 48 + patch.tex_x + x);
  }
  for (std::size_t v = 0; v < 3; ++v) probes.push_back(48 * 48 + v);
  for (std::size_t k = 48 * 48 + 3; k < flat.size(); k += 97) probes.push_back(k);
  std::size_t checked = 0;
  for (std::size_t k : probes) {
    auto fp = flat, fm = flat;
    fp[k] += h;
    fm[k] -= h;
    LearnableParams pp = params, pm = params;
    pp.unpack(fp);
    pm.unpack(fm);
    const double lp = evaluate_sample(patch, pp, cfg).loss.total;
    const double lm = evaluate_sample(patch, pm, cfg).loss.total;
    const double fd = (lp - lm) / (2 * h);
    // The L1 loss kinks where an output texel crosses its target; a kink inside
    // the stencil shows up as a second difference far above the smooth level.
    const double l0 = r.loss.total;
    if (std::abs(lp - 2 * l0 + lm) > 1e-9) continue;
    EXPECT_LE(std::abs(fd - r.grad[k]), 1e-4 * std::max(std::abs(fd), 1e-4)) << "param " << k;
    ++checked;
  }
  EXPECT_GT(checked, probes.size() / 2);
}

TEST(Train, ZeroLearningRateKeepsParams) {
  const PatchSet set = toy_patches(4, 32);
  ASSERT_FALSE(set.patches.empty());
  LearnableParams params = LearnableParams::initialize({48, 48}, std::vector<double>(3, 0.8), 1);
  const auto before = params.pack();
  AdamMoments m;
  TrainConfig cfg;
  cfg.adam.learning_rate = 0.0;
  cfg.solver.num_pd_iters = 5;
  (void)train_epoch(set, params, m, cfg);
  EXPECT_EQ(params.pack(), before);
}

TEST(Train, DeterministicEpochs) {
  const PatchSet set = toy_patches(4, 33);
  TrainConfig cfg;
  cfg.solver.num_pd_iters = 5;
  cfg.batch_size = 2;
  cfg.adam.learning_rate = 1e-3;
  auto run = [&] {
    LearnableParams p = LearnableParams::initialize({48, 48}, std::vector<double>(3, 0.8), 9);
    AdamMoments m;
    const auto e = train_epoch(set, p, m, cfg, 0);
    return std::make_pair(e.step_losses, p.pack());
  };
  setenv("TEXSR_THREADS", "1", 1);
  const auto a = run();
  setenv("TEXSR_THREADS", "2", 1);
  const auto b = run();
  unsetenv("TEXSR_THREADS");
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Train, EmptyDatasetIsUsageError) {
  PatchSet empty;
  LearnableParams p = LearnableParams::initialize({4, 4}, std::vector<double>{0.8}, 1);
  AdamMoments m;
  EXPECT_THROW((void)train_epoch(empty, p, m, TrainConfig{}), UsageError);
}

TEST(Train, IdentityPriorLossEqualsMvaLoss) {
  const PatchSet set = toy_patches(1, 34);
  const auto params = LearnableParams::initialize({48, 48}, std::vector<double>(3, 0.8), 3);
  TrainConfig cfg;
  cfg.solver.num_pd_iters = 8;
  const Patch& patch = set.patches.front();
  const auto terms = patch_terms(patch);
  const auto lam = lambda_window(params.lambda(), patch.tex_x, patch.tex_y, {16, 16});
  const auto sig = patch_sigmas(patch, params.sigmas());
  const auto out = run_pipeline(patch.initial, terms, lam, sig, params.prior, cfg.solver);
  const Raster mva = apply_mask(run_unrolled(patch.initial.data(), terms, lam, sig, cfg.solver).output,
                                patch.initial.mask());
  EXPECT_EQ(out.output.values(), mva.values());
  const auto l_pipe = evaluate_sample(patch, params, cfg).loss.total;
  const auto l_mva = loss(mva, *patch.target, patch.initial.mask(), params.sigmas(), params.sigma0,
                          cfg.alpha)
                         .total;
  EXPECT_EQ(l_pipe, l_mva);
}
