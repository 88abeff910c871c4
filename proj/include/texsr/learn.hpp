#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "texsr/atlas.hpp"
#include "texsr/error.hpp"
#include "texsr/parallel.hpp"
#include "texsr/prior.hpp"
#include "texsr/raster.hpp"
#include "texsr/solver.hpp"

namespace texsr {

// ---------------------------------------------------------------------------
// Reparameterizations
// ---------------------------------------------------------------------------

inline constexpr double kSigmaMin = 0.05;
inline constexpr double kSigmaMax = 5.0;

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double softplus_inverse(double y) { return y + std::log(-std::expm1(-y)); }

inline double sigma_from_raw(double raw) { return kSigmaMin + (kSigmaMax - kSigmaMin) * sigmoid(raw); }

inline double sigma_raw_derivative(double raw) {
  const double s = sigmoid(raw);
  return (kSigmaMax - kSigmaMin) * s * (1.0 - s);
}

inline double sigma_to_raw(double sigma) {
  if (!(sigma > kSigmaMin && sigma < kSigmaMax)) {
    throw ParameterError("sigma " + std::to_string(sigma) + " outside (" +
                         std::to_string(kSigmaMin) + ", " + std::to_string(kSigmaMax) + ")");
  }
  const double u = (sigma - kSigmaMin) / (kSigmaMax - kSigmaMin);
  return std::log(u / (1.0 - u));
}

/// Everything the optimizer updates. lambda = softplus(lambda_raw) per texel of
/// the training atlas; sigma_i = smooth clamp of sigma_raw[i] into
/// [kSigmaMin, kSigmaMax], indexed by view id.
struct LearnableParams {
  Raster lambda_raw;
  std::vector<double> sigma_raw;
  std::vector<double> sigma0;  ///< reference blur widths for the loss; not trained
  PriorNet prior;

  static LearnableParams initialize(Dims atlas, std::span<const double> sigma0, std::uint64_t seed) {
    LearnableParams p;
    p.lambda_raw = Raster(atlas, softplus_inverse(kDefaultLambda));
    p.sigma0.assign(sigma0.begin(), sigma0.end());
    for (double s : sigma0) p.sigma_raw.push_back(sigma_to_raw(s));
    p.prior = PriorNet::initialize(seed);
    return p;
  }

  [[nodiscard]] WeightMap lambda() const {
    WeightMap l(lambda_raw.dims());
    for (std::size_t i = 0; i < l.size(); ++i) l[i] = softplus(lambda_raw[i]);
    return l;
  }

  [[nodiscard]] std::vector<double> sigmas() const {
    std::vector<double> s;
    s.reserve(sigma_raw.size());
    for (double r : sigma_raw) s.push_back(sigma_from_raw(r));
    return s;
  }

  [[nodiscard]] std::size_t size() const {
    return lambda_raw.size() + sigma_raw.size() + prior.param_count();
  }

  /// Optimizer vector: [lambda_raw, sigma_raw, prior weights].
  [[nodiscard]] std::vector<double> pack() const {
    std::vector<double> v(lambda_raw.begin(), lambda_raw.end());
    v.insert(v.end(), sigma_raw.begin(), sigma_raw.end());
    const auto w = prior.pack();
    v.insert(v.end(), w.begin(), w.end());
    return v;
  }

  void unpack(std::span<const double> v) {
    if (v.size() != size()) throw StructuralError("learnable params: vector size mismatch");
    std::size_t k = 0;
    for (double& x : lambda_raw) x = v[k++];
    for (double& x : sigma_raw) x = v[k++];
    prior.unpack(v.subspan(k));
  }
};

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct LossTerms {
  double data_l1 = 0.0;
  double sigma_reg = 0.0;
  double total = 0.0;
};

inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// L1 over valid texels plus alpha * sum_i |sigma_i - sigma0_i|.
inline LossTerms loss(const Raster& predicted, const Raster& truth, const Mask& mask,
                      std::span<const double> sigmas, std::span<const double> sigmas0,
                      double alpha) {
  require_same_dims(predicted.dims(), truth.dims(), "loss");
  require_same_dims(predicted.dims(), mask.dims(), "loss mask");
  if (sigmas.size() != sigmas0.size()) throw StructuralError("loss: sigma count mismatch");
  LossTerms l;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (mask[i]) l.data_l1 += std::abs(predicted[i] - truth[i]);
  }
  for (std::size_t i = 0; i < sigmas.size(); ++i) l.sigma_reg += std::abs(sigmas[i] - sigmas0[i]);
  l.total = l.data_l1 + alpha * l.sigma_reg;
  return l;
}

// ---------------------------------------------------------------------------
// Reverse pass through the unrolled solver
// ---------------------------------------------------------------------------

struct SolverGradients {
  Raster init;
  WeightMap lambda;
  std::vector<double> sigma;  ///< per view, in the trace's view order
};

namespace detail {

/// Transposed Jacobian of the L2-ball projection at argument (wx, wy).
inline Vec2 ball_projection_vjp(double wx, double wy, Vec2 g) {
  const double n = std::hypot(wx, wy);
  if (n < 1.0) return g;
  const double ux = wx / n, uy = wy / n;
  const double radial = ux * g.x + uy * g.y;
  return {(g.x - radial * ux) / n, (g.y - radial * uy) / n};
}

}  // namespace detail

/// Reverse accumulation from d(loss)/d(T_out) back through every recorded
/// iteration. Clamp derivatives pass strictly inside (-1, 1) and vanish
/// otherwise; the ball projection uses its exact Jacobian.
inline SolverGradients backprop_through_solver(const SolverTrace* trace, const Raster& upstream) {
  if (trace == nullptr) throw UsageError("backprop_through_solver: run_unrolled had no trace");
  const SolverTrace& tr = *trace;
  if (tr.iterations.size() != tr.config.num_pd_iters) {
    throw UsageError("backprop_through_solver: incomplete trace");
  }
  const Dims d = upstream.dims();
  require_same_dims(tr.lambda.dims(), d, "backprop upstream");
  const std::size_t n = d.size();
  const std::size_t nv = tr.views.size();
  const double eta = tr.config.eta;
  const double tau = tr.config.tau;
  const WeightMap& lambda = tr.lambda;

  SolverGradients out;
  out.lambda = Raster(d, 0.0);
  out.sigma.assign(nv, 0.0);

  Raster g_primal = upstream;
  Raster g_relaxed(d, 0.0);
  std::vector<Raster> g_q;
  for (const auto& v : tr.views) g_q.emplace_back(v.chain.dims().lowres, 0.0);
  VecField g_p(d);

  for (std::size_t kk = tr.iterations.size(); kk-- > 0;) {
    const IterationRecord& rec = tr.iterations[kk];

    // Over-relaxation: relaxed' = 2 primal' - primal.
    Raster g_primal_prev(d);
    for (std::size_t i = 0; i < n; ++i) {
      g_primal[i] += 2.0 * g_relaxed[i];
      g_primal_prev[i] = -g_relaxed[i];
    }

    // Primal update: primal' = primal + tau (tv(p') - sum_v A_v^T q_v').
    const Raster& u = g_primal;
    for (std::size_t i = 0; i < n; ++i) g_primal_prev[i] += u[i];
    Raster tu(d);
    for (std::size_t i = 0; i < n; ++i) tu[i] = tau * u[i];
    if (tr.config.exact_adjoint_tv) {
      const VecField gt = grad_op(tu);  // d/d(lambda p) of <tu, div(.)> is -grad(tu)
      for (std::size_t i = 0; i < n; ++i) {
        g_p.x[i] -= lambda[i] * gt.x[i];
        g_p.y[i] -= lambda[i] * gt.y[i];
        out.lambda[i] -= rec.tv_dual.x[i] * gt.x[i] + rec.tv_dual.y[i] * gt.y[i];
      }
    } else {
      const Raster dv = div_op(rec.tv_dual);
      Raster tlu(d);
      for (std::size_t i = 0; i < n; ++i) {
        out.lambda[i] += tu[i] * dv[i];
        tlu[i] = lambda[i] * tu[i];
      }
      const VecField gt = grad_op(tlu);
      for (std::size_t i = 0; i < n; ++i) {
        g_p.x[i] -= gt.x[i];
        g_p.y[i] -= gt.y[i];
      }
    }

    std::vector<std::vector<double>> back(nv);
    std::vector<double> sigma_acc(nv, 0.0);
    parallel_for(nv, [&](std::size_t v) {
      const ViewChain& ch = tr.views[v].chain;
      const Mask& vis = tr.views[v].visibility;
      const auto au = ch.forward(u.span());
      const auto dau = ch.sigma_derivative(u.span());
      const Raster& q = rec.data_duals[v];
      double s = 0.0;
      for (std::size_t i = 0; i < au.size(); ++i) {
        g_q[v][i] -= tau * au[i];
        s -= tau * dau[i] * q[i];
      }
      // Data dual: q' = clamp(q + eta (A relaxed - b)).
      const Raster& z = rec.dual_args[v];
      Raster gz(z.dims(), 0.0);
      for (std::size_t i = 0; i < gz.size(); ++i) {
        if (vis[i] && std::abs(z[i]) < 1.0) gz[i] = g_q[v][i];
      }
      const auto dat = ch.sigma_derivative(rec.relaxed_in.span());
      for (std::size_t i = 0; i < gz.size(); ++i) s += eta * gz[i] * dat[i];
      back[v] = ch.adjoint(gz.span());
      g_q[v] = std::move(gz);
      sigma_acc[v] = s;
    });
    for (std::size_t v = 0; v < nv; ++v) out.sigma[v] += sigma_acc[v];

    // TV dual: p' = proj(p + eta lambda grad relaxed).
    const VecField gr = grad_op(rec.relaxed_in);
    VecField weighted(d);
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 gw = detail::ball_projection_vjp(rec.tv_arg.x[i], rec.tv_arg.y[i],
                                                  {g_p.x[i], g_p.y[i]});
      g_p.x[i] = gw.x;
      g_p.y[i] = gw.y;
      out.lambda[i] += eta * (gw.x * gr.x[i] + gw.y * gr.y[i]);
      weighted.x[i] = eta * lambda[i] * gw.x;
      weighted.y[i] = eta * lambda[i] * gw.y;
    }
    const Raster dv = div_op(weighted);
    Raster g_relaxed_prev(d);
    for (std::size_t i = 0; i < n; ++i) g_relaxed_prev[i] = -dv[i];
    for (std::size_t v : tr.order) {
      for (std::size_t i = 0; i < n; ++i) g_relaxed_prev[i] += eta * back[v][i];
    }

    g_primal = std::move(g_primal_prev);
    g_relaxed = std::move(g_relaxed_prev);
  }

  out.init = Raster(d);
  for (std::size_t i = 0; i < n; ++i) out.init[i] = g_primal[i] + g_relaxed[i];
  return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamMoments {
  std::vector<double> first;
  std::vector<double> second;
  std::uint64_t step = 0;

  explicit AdamMoments(std::size_t n = 0) : first(n, 0.0), second(n, 0.0) {}
};

/// Bias-corrected Adam update for step index t >= 1.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& m,
                      const AdamConfig& cfg, std::uint64_t t) {
  if (t < 1) throw UsageError("adam_step: step index must be >= 1");
  if (params.size() != grads.size() || m.first.size() != params.size() ||
      m.second.size() != params.size()) {
    throw StructuralError("adam_step: size mismatch");
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m.first[i] = cfg.beta1 * m.first[i] + (1.0 - cfg.beta1) * g;
    m.second[i] = cfg.beta2 * m.second[i] + (1.0 - cfg.beta2) * g * g;
    const double mh = m.first[i] / c1;
    const double vh = m.second[i] / c2;
    params[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.epsilon);
  }
  m.step = t;
}

// ---------------------------------------------------------------------------
// Full pipeline and training
// ---------------------------------------------------------------------------

struct TrainConfig {
  double alpha = 1.0;
  AdamConfig adam;
  std::size_t batch_size = 4;
  std::size_t epochs = 1;
  std::uint64_t seed = 1;
  SolverConfig solver{};

  void validate() const {
    if (!(alpha >= 0.0)) throw ParameterError("train config: alpha must be >= 0");
    if (!(adam.learning_rate >= 0.0)) throw ParameterError("train config: learning rate < 0");
    if (batch_size < 1) throw ParameterError("train config: batch size must be >= 1");
    solver.validate();
  }
};

/// Lambda restricted to a window of the parameter grid.
inline WeightMap lambda_window(const WeightMap& lambda, std::size_t x0, std::size_t y0, Dims d) {
  return crop(lambda, static_cast<std::ptrdiff_t>(x0), static_cast<std::ptrdiff_t>(y0), d);
}

struct PipelineOutput {
  Raster mva;     ///< unrolled solver output (unmasked)
  Raster output;  ///< after the residual prior, masked
};

/// MVA solve followed by the residual prior.
inline PipelineOutput run_pipeline(const TextureAtlas& initial, std::span<const ViewTerm> views,
                                   const WeightMap& lambda, std::span<const double> sigmas,
                                   const PriorNet& prior, SolverConfig cfg) {
  cfg.record_states = false;
  PipelineOutput out;
  out.mva = run_unrolled(initial.data(), views, lambda, sigmas, cfg).output;
  out.output = prior_forward(prior, out.mva, initial.mask());
  return out;
}

struct SampleResult {
  LossTerms loss;
  std::vector<double> grad;  ///< matches LearnableParams::pack
};

/// Sigmas of a patch's views looked up by view id.
inline std::vector<double> patch_sigmas(const Patch& patch, std::span<const double> all) {
  std::vector<double> s;
  for (const auto& v : patch.views) {
    if (v.view_id >= all.size()) {
      throw StructuralError("patch view id " + std::to_string(v.view_id) + " has no sigma");
    }
    s.push_back(all[v.view_id]);
  }
  return s;
}

inline std::vector<ViewTerm> patch_terms(const Patch& patch) {
  std::vector<ViewTerm> terms;
  for (const auto& v : patch.views) terms.push_back({v.view_id, v.chain, v.lowres, v.visibility});
  return terms;
}

/// Forward, loss and full reverse pass for one patch.
inline SampleResult evaluate_sample(const Patch& patch, const LearnableParams& params,
                                    const TrainConfig& cfg) {
  if (!patch.target) throw UsageError("evaluate_sample: patch has no target");
  const Dims pd = patch.initial.dims();
  const WeightMap lambda_full = params.lambda();
  const WeightMap lambda = lambda_window(lambda_full, patch.tex_x, patch.tex_y, pd);
  const std::vector<double> all_sigmas = params.sigmas();
  const auto terms = patch_terms(patch);
  const auto sigmas = patch_sigmas(patch, all_sigmas);

  SolverConfig scfg = cfg.solver;
  scfg.record_states = true;
  const UnrolledResult mva = run_unrolled(patch.initial.data(), terms, lambda, sigmas, scfg);
  PriorCache cache;
  const Raster out = prior_forward(params.prior, mva.output, patch.initial.mask(), &cache);

  SampleResult r;
  r.loss = loss(out, *patch.target, patch.initial.mask(), all_sigmas, params.sigma0, cfg.alpha);

  Raster upstream(pd, 0.0);
  for (std::size_t i = 0; i < upstream.size(); ++i) {
    if (patch.initial.mask()[i]) upstream[i] = sign0(out[i] - (*patch.target)[i]);
  }
  const PriorGradients pg = prior_backward(params.prior, cache, upstream, patch.initial.mask());
  const SolverGradients sg = backprop_through_solver(mva.trace ? &*mva.trace : nullptr, pg.input);

  r.grad.assign(params.size(), 0.0);
  const Dims full = params.lambda_raw.dims();
  for (std::size_t y = 0; y < pd.height; ++y) {
    for (std::size_t x = 0; x < pd.width; ++x) {
      const std::size_t fi = full.index(patch.tex_x + x, patch.tex_y + y);
      r.grad[fi] += sg.lambda(x, y) * sigmoid(params.lambda_raw[fi]);
    }
  }
  const std::size_t so = params.lambda_raw.size();
  for (std::size_t v = 0; v < patch.views.size(); ++v) {
    const std::size_t id = patch.views[v].view_id;
    r.grad[so + id] += sg.sigma[v] * sigma_raw_derivative(params.sigma_raw[id]);
  }
  for (std::size_t id = 0; id < all_sigmas.size(); ++id) {
    r.grad[so + id] += cfg.alpha * sign0(all_sigmas[id] - params.sigma0[id]) *
                       sigma_raw_derivative(params.sigma_raw[id]);
  }
  const std::size_t po = so + params.sigma_raw.size();
  for (std::size_t k = 0; k < pg.weights.size(); ++k) r.grad[po + k] = pg.weights[k];
  return r;
}

struct EpochMetrics {
  LossTerms mean_loss;
  std::size_t steps = 0;
  std::vector<double> step_losses;  ///< mean total loss of each minibatch
};

/// Loss of the current parameters over a whole patch set, no update.
inline LossTerms dataset_loss(const PatchSet& data, const LearnableParams& params,
                              const TrainConfig& cfg) {
  LossTerms acc;
  const WeightMap lambda_full = params.lambda();
  const auto sigmas = params.sigmas();
  for (const auto& patch : data.patches) {
    const Dims pd = patch.initial.dims();
    const auto terms = patch_terms(patch);
    const auto out = run_pipeline(patch.initial, terms,
                                  lambda_window(lambda_full, patch.tex_x, patch.tex_y, pd),
                                  patch_sigmas(patch, sigmas), params.prior, cfg.solver);
    const LossTerms l = loss(out.output, *patch.target, patch.initial.mask(), sigmas,
                             params.sigma0, cfg.alpha);
    acc.data_l1 += l.data_l1;
    acc.sigma_reg += l.sigma_reg;
    acc.total += l.total;
  }
  const auto k = static_cast<double>(std::max<std::size_t>(1, data.patches.size()));
  acc.data_l1 /= k;
  acc.sigma_reg /= k;
  acc.total /= k;
  return acc;
}

/// One pass over the patch set in seeded-shuffle order. Each minibatch loss is
/// the mean of its patch losses; all parameters take one joint Adam step.
inline EpochMetrics train_epoch(const PatchSet& data, LearnableParams& params,
                                AdamMoments& moments, const TrainConfig& cfg,
                                std::uint64_t epoch = 0) {
  cfg.validate();
  if (data.patches.empty()) throw UsageError("train_epoch: empty dataset");
  if (moments.first.size() != params.size()) moments = AdamMoments(params.size());

  std::vector<std::size_t> order(data.patches.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed + epoch);
  std::shuffle(order.begin(), order.end(), rng);

  EpochMetrics metrics;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t count = std::min(cfg.batch_size, order.size() - start);
    std::vector<SampleResult> results(count);
    parallel_for(count, [&](std::size_t b) {
      results[b] = evaluate_sample(data.patches[order[start + b]], params, cfg);
    });
    std::vector<double> grad(params.size(), 0.0);
    LossTerms batch;
    const double inv = 1.0 / static_cast<double>(count);
    for (const auto& r : results) {
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += r.grad[k] * inv;
      batch.data_l1 += r.loss.data_l1 * inv;
      batch.sigma_reg += r.loss.sigma_reg * inv;
      batch.total += r.loss.total * inv;
    }
    std::vector<double> flat = params.pack();
    adam_step(flat, grad, moments, cfg.adam, moments.step + 1);
    params.unpack(flat);

    metrics.mean_loss.data_l1 += batch.data_l1;
    metrics.mean_loss.sigma_reg += batch.sigma_reg;
    metrics.mean_loss.total += batch.total;
    metrics.step_losses.push_back(batch.total);
    ++metrics.steps;
  }
  const auto k = static_cast<double>(metrics.steps);
  metrics.mean_loss.data_l1 /= k;
  metrics.mean_loss.sigma_reg /= k;
  metrics.mean_loss.total /= k;
  return metrics;
}

}  // namespace texsr
