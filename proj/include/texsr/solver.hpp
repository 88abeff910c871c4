#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "texsr/error.hpp"
#include "texsr/operators.hpp"
#include "texsr/parallel.hpp"
#include "texsr/raster.hpp"

namespace texsr {

struct SolverConfig {
  double eta = 0.025;  ///< dual step
  double tau = 0.025;  ///< primal step
  std::size_t num_pd_iters = 50;
  bool record_states = false;
  /// true: primal update uses div(lambda * p), the exact adjoint of the dual
  /// ascent term. false: lambda * div(p), applied pointwise after divergence.
  bool exact_adjoint_tv = true;

  void validate() const {
    if (!(eta > 0.0) || !(tau > 0.0) || !std::isfinite(eta) || !std::isfinite(tau)) {
      throw ParameterError("solver config: eta and tau must be positive");
    }
  }
};

inline constexpr std::size_t kTrainingDepth = 50;
inline constexpr std::size_t kInferenceDepth = 400;
inline constexpr std::size_t kReferenceDepth = 2000;
inline constexpr double kDefaultLambda = 0.1;

/// Per-texel nonnegative regularization weight.
using WeightMap = Raster;

/// Data term of one view: observed LR image, visibility, and its chain.
struct ViewTerm {
  std::size_t view_id = 0;
  ViewChain chain;
  Raster observed;
  Mask visibility;
};

struct SolverState {
  Raster primal;
  Raster relaxed;
  std::vector<Raster> data_duals;  ///< one per view, LR-sized
  VecField tv_dual;

  static SolverState start(const Raster& init, std::span<const ViewTerm> views) {
    SolverState s;
    s.primal = init;
    s.relaxed = init;
    s.tv_dual = VecField(init.dims());
    for (const auto& v : views) s.data_duals.emplace_back(v.chain.dims().lowres, 0.0);
    return s;
  }
};

// ---------------------------------------------------------------------------
// Discrete calculus
// ---------------------------------------------------------------------------

/// Forward differences, zero across the last column/row.
inline VecField grad_op(const Raster& t) {
  const Dims d = t.dims();
  VecField g(d);
  for (std::size_t y = 0; y < d.height; ++y) {
    for (std::size_t x = 0; x < d.width; ++x) {
      const double c = t(x, y);
      g.x(x, y) = x + 1 < d.width ? t(x + 1, y) - c : 0.0;
      g.y(x, y) = y + 1 < d.height ? t(x, y + 1) - c : 0.0;
    }
  }
  return g;
}

/// Negative adjoint of grad_op.
inline Raster div_op(const VecField& p) {
  const Dims d = p.dims();
  Raster out(d);
  for (std::size_t y = 0; y < d.height; ++y) {
    for (std::size_t x = 0; x < d.width; ++x) {
      double v = 0.0;
      if (x + 1 < d.width) v += p.x(x, y);
      if (x > 0) v -= p.x(x - 1, y);
      if (y + 1 < d.height) v += p.y(x, y);
      if (y > 0) v -= p.y(x, y - 1);
      out(x, y) = v;
    }
  }
  return out;
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 project_l2_ball(Vec2 v) {
  const double n = std::hypot(v.x, v.y);
  const double s = 1.0 / std::max(1.0, n);
  return {v.x * s, v.y * s};
}

inline double clamp_interval(double s) { return std::clamp(s, -1.0, 1.0); }

// ---------------------------------------------------------------------------
// Primal-dual iteration
// ---------------------------------------------------------------------------

/// Quantities from one iteration needed by the reverse pass.
struct IterationRecord {
  Raster relaxed_in;                 ///< T-bar entering the iteration
  std::vector<Raster> dual_args;     ///< q + eta (A T-bar - b), before clamping
  VecField tv_arg;                   ///< p + eta lambda grad T-bar, before projection
  std::vector<Raster> data_duals;    ///< after clamping
  VecField tv_dual;                  ///< after projection
};

struct SolverTrace {
  SolverConfig config;
  WeightMap lambda;
  std::vector<ViewTerm> views;  ///< chains carry the sigmas used in the solve
  std::vector<std::size_t> order;
  std::vector<IterationRecord> iterations;
};

namespace detail {

inline std::vector<std::size_t> view_order(std::span<const ViewTerm> views) {
  std::vector<std::size_t> order(views.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return views[a].view_id < views[b].view_id;
  });
  return order;
}

inline void check_views(const Raster& t, std::span<const ViewTerm> views) {
  for (const auto& v : views) {
    require_same_dims(v.chain.dims().texture, t.dims(), "solver view chain");
    require_same_dims(v.observed.dims(), v.chain.dims().lowres, "solver observed image");
    require_same_dims(v.visibility.dims(), v.chain.dims().lowres, "solver visibility");
  }
}

/// lambda applied to a TV dual in the primal update.
inline Raster tv_primal_term(const VecField& p, const WeightMap& lambda, bool exact_adjoint) {
  if (exact_adjoint) {
    VecField lp(p.dims());
    for (std::size_t i = 0; i < lambda.size(); ++i) {
      lp.x[i] = lambda[i] * p.x[i];
      lp.y[i] = lambda[i] * p.y[i];
    }
    return div_op(lp);
  }
  Raster d = div_op(p);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] *= lambda[i];
  return d;
}

inline void pd_step_impl(SolverState& st, std::span<const ViewTerm> views,
                         std::span<const std::size_t> order, const WeightMap& lambda,
                         const SolverConfig& cfg, IterationRecord* rec) {
  const std::size_t n = st.primal.size();
  if (rec != nullptr) {
    rec->relaxed_in = st.relaxed;
    rec->dual_args.resize(views.size());
  }

  // Dual ascent per view; invisible LR pixels keep a zero dual.
  std::vector<std::vector<double>> back(views.size());
  parallel_for(views.size(), [&](std::size_t v) {
    const ViewTerm& vt = views[v];
    const auto a = vt.chain.forward(st.relaxed.span());
    Raster& q = st.data_duals[v];
    Raster arg(q.dims(), 0.0);
    for (std::size_t i = 0; i < q.size(); ++i) {
      if (vt.visibility[i]) {
        arg[i] = q[i] + cfg.eta * (a[i] - vt.observed[i]);
        q[i] = clamp_interval(arg[i]);
      } else {
        q[i] = 0.0;
      }
    }
    back[v] = vt.chain.adjoint(q.span());
    if (rec != nullptr) rec->dual_args[v] = std::move(arg);
  });

  // TV dual ascent.
  const VecField g = grad_op(st.relaxed);
  VecField arg(g.dims());
  for (std::size_t i = 0; i < n; ++i) {
    arg.x[i] = st.tv_dual.x[i] + cfg.eta * lambda[i] * g.x[i];
    arg.y[i] = st.tv_dual.y[i] + cfg.eta * lambda[i] * g.y[i];
    const Vec2 pr = project_l2_ball({arg.x[i], arg.y[i]});
    st.tv_dual.x[i] = pr.x;
    st.tv_dual.y[i] = pr.y;
  }

  // Primal descent; data adjoints reduced in view-id order.
  const Raster tv = tv_primal_term(st.tv_dual, lambda, cfg.exact_adjoint_tv);
  std::vector<double> data_sum(n, 0.0);
  for (std::size_t v : order) {
    for (std::size_t i = 0; i < n; ++i) data_sum[i] += back[v][i];
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double prev = st.primal[i];
    const double next = prev + cfg.tau * (tv[i] - data_sum[i]);
    st.primal[i] = next;
    st.relaxed[i] = 2.0 * next - prev;
  }

  if (rec != nullptr) {
    rec->tv_arg = std::move(arg);
    rec->data_duals = st.data_duals;
    rec->tv_dual = st.tv_dual;
  }
}

}  // namespace detail

/// One primal-dual update: data duals, TV dual, primal, over-relaxation.
inline SolverState pd_step(SolverState state, std::span<const ViewTerm> views,
                           const WeightMap& lambda, const SolverConfig& cfg) {
  cfg.validate();
  detail::check_views(state.primal, views);
  require_same_dims(lambda.dims(), state.primal.dims(), "pd_step lambda");
  if (state.data_duals.size() != views.size()) {
    throw StructuralError("pd_step: " + std::to_string(state.data_duals.size()) +
                          " data duals for " + std::to_string(views.size()) + " views");
  }
  const auto order = detail::view_order(views);
  detail::pd_step_impl(state, views, order, lambda, cfg, nullptr);
  return state;
}

struct UnrolledResult {
  Raster output;
  std::optional<SolverTrace> trace;
};

/// Re-targets every view chain to the given blur widths (empty = keep).
inline std::vector<ViewTerm> with_sigmas(std::span<const ViewTerm> views,
                                         std::span<const double> sigmas) {
  std::vector<ViewTerm> out(views.begin(), views.end());
  if (sigmas.empty()) return out;
  if (sigmas.size() != views.size()) {
    throw StructuralError("with_sigmas: " + std::to_string(sigmas.size()) + " sigmas for " +
                          std::to_string(views.size()) + " views");
  }
  for (std::size_t v = 0; v < out.size(); ++v) out[v].chain = out[v].chain.with_sigma(sigmas[v]);
  return out;
}

/// Runs exactly cfg.num_pd_iters updates from T = T-bar = init, zero duals.
inline UnrolledResult run_unrolled(const Raster& init, std::span<const ViewTerm> views,
                                   const WeightMap& lambda, std::span<const double> sigmas,
                                   const SolverConfig& cfg) {
  cfg.validate();
  require_same_dims(lambda.dims(), init.dims(), "run_unrolled lambda");
  std::vector<ViewTerm> terms = with_sigmas(views, sigmas);
  detail::check_views(init, terms);
  const auto order = detail::view_order(terms);

  UnrolledResult result;
  if (cfg.record_states) {
    result.trace.emplace();
    result.trace->config = cfg;
    result.trace->lambda = lambda;
    result.trace->order = order;
    result.trace->iterations.resize(cfg.num_pd_iters);
  }
  SolverState st = SolverState::start(init, terms);
  for (std::size_t k = 0; k < cfg.num_pd_iters; ++k) {
    detail::pd_step_impl(st, terms, order, lambda, cfg,
                         result.trace ? &result.trace->iterations[k] : nullptr);
    if (!all_finite(st.primal.span())) {
      throw NumericalError("run_unrolled: non-finite primal at iteration " + std::to_string(k + 1));
    }
  }
  result.output = std::move(st.primal);
  if (result.trace) result.trace->views = std::move(terms);
  return result;
}

/// Multi-view L1 data term over visible pixels plus weighted isotropic TV.
inline double energy(const Raster& t, std::span<const ViewTerm> views, const WeightMap& lambda) {
  detail::check_views(t, views);
  require_same_dims(lambda.dims(), t.dims(), "energy lambda");
  double data = 0.0;
  for (std::size_t v : detail::view_order(views)) {
    const auto a = views[v].chain.forward(t.span());
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (views[v].visibility[i]) data += std::abs(a[i] - views[v].observed[i]);
    }
  }
  const VecField g = grad_op(t);
  double tv = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) tv += lambda[i] * std::hypot(g.x[i], g.y[i]);
  return data + tv;
}

/// Power-iteration estimate of ||[A_1; ...; A_N; lambda grad]||.
inline double full_operator_norm(std::span<const ViewTerm> views, const WeightMap& lambda,
                                 std::size_t iters = 50) {
  const Dims d = lambda.dims();
  auto fwd = [&](const std::vector<double>& x) {
    std::vector<double> y;
    for (const auto& v : views) {
      auto a = v.chain.forward(x);
      for (std::size_t i = 0; i < a.size(); ++i) y.push_back(v.visibility[i] ? a[i] : 0.0);
    }
    const VecField g = grad_op(Raster(d, x));
    for (std::size_t i = 0; i < d.size(); ++i) y.push_back(lambda[i] * g.x[i]);
    for (std::size_t i = 0; i < d.size(); ++i) y.push_back(lambda[i] * g.y[i]);
    return y;
  };
  auto adj = [&](const std::vector<double>& y) {
    std::vector<double> x(d.size(), 0.0);
    std::size_t off = 0;
    for (const auto& v : views) {
      const std::size_t m = v.chain.dims().lowres.size();
      std::vector<double> q(y.begin() + static_cast<std::ptrdiff_t>(off),
                            y.begin() + static_cast<std::ptrdiff_t>(off + m));
      for (std::size_t i = 0; i < m; ++i) {
        if (!v.visibility[i]) q[i] = 0.0;
      }
      const auto b = v.chain.adjoint(q);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += b[i];
      off += m;
    }
    VecField p(d);
    for (std::size_t i = 0; i < d.size(); ++i) {
      p.x[i] = lambda[i] * y[off + i];
      p.y[i] = lambda[i] * y[off + d.size() + i];
    }
    const Raster dv = div_op(p);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= dv[i];
    return x;
  };
  return estimate_operator_norm(fwd, adj, d.size(), iters);
}

/// Non-empty when eta * tau * ||[A_1; ...; A_N; lambda grad]||^2 > 1.
inline std::optional<std::string> step_size_warning(std::span<const ViewTerm> views,
                                                    const WeightMap& lambda,
                                                    const SolverConfig& cfg) {
  const double norm = full_operator_norm(views, lambda);
  const double bound = cfg.eta * cfg.tau * norm * norm;
  if (bound > 1.0) {
    return "step sizes exceed the primal-dual bound: eta*tau*||K||^2 = " + std::to_string(bound);
  }
  return std::nullopt;
}

}  // namespace texsr
