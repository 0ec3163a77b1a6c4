#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "normscale/objective.hpp"
#include "normscale/optim.hpp"
#include "normscale/rng.hpp"

namespace normscale {

/// Parameters of the stochastic weight-norm model: per-output gradient noise
/// std sigma_grad, activation scale gamma, weight dimension, input std.
/// sigma_x cancels out of every closed form; it is carried for completeness.
struct NoiseModel {
  double sigma_grad = 1.0;
  double gamma = 1.0;
  int dim = 64;
  double sigma_x = 1.0;
};

struct EquivalenceReport {
  Rule rule = Rule::sgd;
  double alpha = 1.0;
  long steps = 0;
  double tolerance = 0.0;
  double max_rel_deviation = 0.0;
  bool pass = false;
  long diverged_at = -1;  // step index if either run diverged, else -1
};

/// ||w_t|| over a simulated run, t = 0..T.
struct NormTrace {
  std::vector<double> norms;
  Rule rule = Rule::sgd;
  double eta = 0.0;
  double lambda = 0.0;
  std::uint64_t seed = 0;
};

/// How the optimizer state of the scaled run relates to the base run:
/// v_scaled = v_factor * v_base, gacc_scaled = gacc_factor * gacc_base.
struct StateScaling {
  double v_factor = 1.0;
  double gacc_factor = 1.0;
};

/// Step size per unit of normalized-function gradient, as a function of the
/// current weight norm. This is what actually shrinks when weights grow.
inline double effective_lr(Rule rule, double eta, double wnorm) {
  detail::require(wnorm > 0.0, "effective_lr: wnorm must be positive");
  detail::require(eta > 0.0, "effective_lr: eta must be positive");
  switch (rule) {
    case Rule::sgd:
    case Rule::momentum:
    case Rule::nesterov:
      return eta / (wnorm * wnorm);
    case Rule::rmsprop:
    case Rule::adam:
      return eta / wnorm;
    case Rule::normalized_sgd:
    case Rule::newton:
      return eta;
  }
  throw contract_error("effective_lr: unknown rule");
}

/// Configuration for the run that reproduces, at weight scale 1, the
/// trajectory started from alpha-scaled weights under cfg. The returned
/// scaling descriptor relates the two runs' optimizer states.
inline std::pair<OptConfig, StateScaling> rescaled_config(Rule rule,
                                                          const OptConfig& cfg,
                                                          double alpha) {
  detail::require(alpha > 0.0, "rescaled_config: alpha must be positive");
  OptConfig out = cfg;
  out.rule = rule;
  StateScaling sc;
  const double a2 = alpha * alpha;
  switch (rule) {
    case Rule::sgd:
    case Rule::momentum:
    case Rule::nesterov:
      out.eta = cfg.eta / a2;
      out.lambda = cfg.lambda * a2;
      sc.v_factor = alpha;  // scaled-run v = alpha * base-run v
      break;
    case Rule::rmsprop:
      out.eta = cfg.eta / alpha;
      out.lambda = cfg.lambda * a2;
      out.eps = cfg.eps * a2;
      sc.gacc_factor = 1.0 / a2;
      break;
    case Rule::adam:
      out.eta = cfg.eta / alpha;
      out.lambda = cfg.lambda * a2;
      out.eps = cfg.eps * alpha;
      sc.v_factor = 1.0 / alpha;
      sc.gacc_factor = 1.0 / a2;
      break;
    case Rule::newton:
      out.lambda = cfg.lambda * a2;  // eta unchanged: the rule is scale-free
      break;
    case Rule::normalized_sgd:
      break;  // invariant by construction
  }
  return {out, sc};
}

/// Random single-unit problem plus matching parameters, for invariance and
/// equivalence checks. Weights are drawn away from the origin.
struct ProblemInstance {
  Problem problem;
  UnitParams params;
};

inline ProblemInstance make_random_problem(UnitKind kind,
                                           const Nonlinearity& g,
                                           const LossSpec& loss,
                                           Eigen::Index n, Eigen::Index d,
                                           double lambda,
                                           std::uint64_t seed) {
  detail::require(n >= 2 && d >= 1, "make_random_problem: need n >= 2, d >= 1");
  Rng rng(seed);
  ProblemInstance inst;
  inst.problem.kind = kind;
  inst.problem.g = g;
  inst.problem.loss = loss;
  inst.problem.lambda = lambda;
  inst.problem.batch.X = gaussian_matrix(rng, n, d);
  inst.problem.batch.targets.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (loss.tag() == LossSpec::Tag::logistic)
      inst.problem.batch.targets(i) = rng.uniform() < 0.5 ? -1.0 : 1.0;
    else
      inst.problem.batch.targets(i) = rng.gaussian();
  }
  do {
    inst.params.w = gaussian_vector(rng, d);
  } while (inst.params.w.norm() < 1e-3);
  inst.params.gamma = rng.uniform(0.5, 1.5);
  inst.params.beta = rng.uniform(-0.5, 0.5);
  inst.params.bias = 0.1 * rng.gaussian();
  return inst;
}

namespace detail {

inline GradSource full_grad_source(const Problem& pr, const UnitParams& tmpl,
                                   double lambda) {
  return [&pr, tmpl, lambda](const Eigen::VectorXd& w) {
    UnitParams p = tmpl;
    p.w = w;
    return Eigen::VectorXd(data_grad(pr, p) + lambda * w);
  };
}

inline HessSource full_hess_source(const Problem& pr, const UnitParams& tmpl,
                                   double lambda) {
  return [&pr, tmpl, lambda](const Eigen::VectorXd& w) {
    UnitParams p = tmpl;
    p.w = w;
    Problem q = pr;
    q.lambda = lambda;
    return loss_hessian(q, p);
  };
}

}  // namespace detail

namespace detail {

/// One optimizer step on the problem's full-batch objective; p.w advances,
/// gamma/beta stay fixed.
inline void advance_one(Rule rule, const Problem& pr, UnitParams& p,
                        OptState& st, const OptConfig& cfg,
                        const GradSource& gsrc, const HessSource& hsrc) {
  switch (rule) {
    case Rule::sgd:
      p.w = step_sgd(p.w, data_grad(pr, p), cfg);
      break;
    case Rule::momentum:
    case Rule::nesterov: {
      auto [w2, st2] = step_momentum(p.w, gsrc, std::move(st), cfg);
      p.w = std::move(w2);
      st = std::move(st2);
      break;
    }
    case Rule::rmsprop: {
      auto [w2, st2] = step_rmsprop(p.w, data_grad(pr, p), std::move(st), cfg);
      p.w = std::move(w2);
      st = std::move(st2);
      break;
    }
    case Rule::adam: {
      auto [w2, st2] = step_adam(p.w, data_grad(pr, p), std::move(st), cfg);
      p.w = std::move(w2);
      st = std::move(st2);
      break;
    }
    case Rule::normalized_sgd:
      p.w = step_normalized_sgd(p.w, data_grad(pr, p), cfg);
      break;
    case Rule::newton:
      p.w = step_newton(p.w, gsrc, hsrc, cfg);
      break;
  }
}

}  // namespace detail

/// Run T optimizer steps on the problem's full-batch objective, starting from
/// params0.w with gamma/beta held fixed. Returns w_0..w_T.
inline std::vector<Eigen::VectorXd> run_trajectory(Rule rule,
                                                   const Problem& pr,
                                                   const UnitParams& params0,
                                                   long T, OptConfig cfg,
                                                   const OptState* state0 = nullptr) {
  detail::require(T >= 1, "run_trajectory: T must be >= 1");
  cfg.rule = rule;
  validate_config(cfg);
  if (rule == Rule::newton)
    detail::require(pr.kind == UnitKind::bn, "run_trajectory: newton needs a bn problem");

  UnitParams p = params0;
  OptState st = state0 ? *state0 : OptState::zeros(p.w.size());
  const GradSource gsrc = detail::full_grad_source(pr, params0, cfg.lambda);
  const HessSource hsrc = detail::full_hess_source(pr, params0, cfg.lambda);

  std::vector<Eigen::VectorXd> traj;
  traj.reserve(static_cast<std::size_t>(T) + 1);
  traj.push_back(p.w);
  for (long t = 0; t < T; ++t) {
    detail::advance_one(rule, pr, p, st, cfg, gsrc, hsrc);
    traj.push_back(p.w);
  }
  return traj;
}

/// Compare T steps from alpha * w0 under cfg against T steps from w0 under
/// the rescaled configuration, states initialized to zero on both sides
/// (consistent with every state-scaling descriptor). Deviation at step t is
/// ||w_t - alpha w'_t|| / ||w_t||.
inline EquivalenceReport check_trajectory_equivalence(Rule rule,
                                                      const Problem& pr,
                                                      const UnitParams& params0,
                                                      double alpha, long T,
                                                      double tol,
                                                      const OptConfig& cfg) {
  detail::require(alpha > 0.0, "check_trajectory_equivalence: alpha must be positive");
  EquivalenceReport rep;
  rep.rule = rule;
  rep.alpha = alpha;
  rep.steps = T;
  rep.tolerance = tol;

  detail::require(T >= 1, "check_trajectory_equivalence: T must be >= 1");
  OptConfig scaled_cfg = cfg;
  scaled_cfg.rule = rule;
  validate_config(scaled_cfg);
  if (rule == Rule::newton)
    detail::require(pr.kind == UnitKind::bn, "check_trajectory_equivalence: newton needs a bn problem");

  UnitParams ps = params0;
  ps.w *= alpha;
  UnitParams pb = params0;
  const auto [base_cfg_, sc] = rescaled_config(rule, scaled_cfg, alpha);
  const OptConfig base_cfg = base_cfg_;
  (void)sc;  // zero states on both sides satisfy any linear scaling

  OptState sts = OptState::zeros(ps.w.size());
  OptState stb = OptState::zeros(pb.w.size());
  const GradSource gsrc_s = detail::full_grad_source(pr, params0, scaled_cfg.lambda);
  const HessSource hsrc_s = detail::full_hess_source(pr, params0, scaled_cfg.lambda);
  const GradSource gsrc_b = detail::full_grad_source(pr, params0, base_cfg.lambda);
  const HessSource hsrc_b = detail::full_hess_source(pr, params0, base_cfg.lambda);

  double worst = 0.0;
  for (long t = 0; t < T; ++t) {
    try {
      detail::advance_one(rule, pr, ps, sts, scaled_cfg, gsrc_s, hsrc_s);
      detail::advance_one(rule, pr, pb, stb, base_cfg, gsrc_b, hsrc_b);
    } catch (const divergence_error&) {
      rep.max_rel_deviation = std::numeric_limits<double>::infinity();
      rep.pass = false;
      rep.diverged_at = t + 1;
      return rep;
    }
    const double denom = ps.w.norm();
    detail::require(denom > 0.0, "check_trajectory_equivalence: zero weight norm");
    const double dev = (ps.w - alpha * pb.w).norm() / denom;
    if (dev > worst) worst = dev;
  }
  rep.max_rel_deviation = worst;
  rep.pass = worst <= tol;
  return rep;
}

/// Stationary weight norm predicted by the stochastic model, order constants
/// fixed to 1 where the derivation gives only the scaling.
inline double equilibrium_norm_closed_form(Rule rule, double eta, double lambda,
                                           const NoiseModel& nm,
                                           std::optional<double> rho = std::nullopt) {
  detail::require(eta > 0.0 && lambda > 0.0,
                  "equilibrium_norm_closed_form: eta and lambda must be positive");
  detail::require(nm.sigma_grad > 0.0 && nm.gamma > 0.0,
                  "equilibrium_norm_closed_form: noise model must be positive");
  const double el = eta * lambda;
  switch (rule) {
    case Rule::sgd: {
      if (el >= 2.0)
        throw out_of_model_error("equilibrium_norm_closed_form: eta*lambda must be < 2");
      const double g2s2 = nm.gamma * nm.gamma * nm.sigma_grad * nm.sigma_grad;
      return std::pow(eta * eta * g2s2 / (4.0 * el - 2.0 * el * el), 0.25);
    }
    case Rule::momentum:
    case Rule::nesterov: {
      const double r = rho.value_or(0.9);
      detail::require(r >= 0.0 && r < 1.0, "equilibrium_norm_closed_form: rho must be in [0,1)");
      return std::pow(eta / ((1.0 - r) * lambda), 0.25);
    }
    case Rule::rmsprop:
    case Rule::adam:
      return std::cbrt(eta * nm.sigma_grad * nm.gamma / lambda);
    default:
      throw out_of_model_error(
          "equilibrium_norm_closed_form: no closed form for this rule");
  }
}

struct SimOptions {
  double rho = 0.9;
  double rho1 = 0.9;
  double rho2 = 0.999;
  double eps = 1e-12;  // small: the model has no curvature floor to regularize
};

/// Iterate the chosen update rule on the pure norm model: the data gradient
/// is replaced by isotropic noise u_t with per-component variance
/// gamma^2 sigma_grad^2 / (2 d ||w_t||^2), and lambda acts as usual decay.
/// The rmsprop/adam accumulator starts at the stationary noise expectation
/// to shorten burn-in.
inline NormTrace simulate_norm_dynamics(Rule rule, double eta, double lambda,
                                        const NoiseModel& nm, long T,
                                        std::uint64_t seed,
                                        const SimOptions& opt = {}) {
  detail::require(nm.dim >= 2, "simulate_norm_dynamics: dim must be >= 2");
  detail::require(T >= 1, "simulate_norm_dynamics: T must be >= 1");
  detail::require(nm.sigma_grad >= 0.0 && nm.gamma > 0.0,
                  "simulate_norm_dynamics: noise model must be nonnegative");
  Rule sim_rule = rule;
  if (sim_rule == Rule::nesterov) sim_rule = Rule::momentum;  // same norm model
  if (sim_rule != Rule::sgd && sim_rule != Rule::momentum &&
      sim_rule != Rule::rmsprop && sim_rule != Rule::adam)
    throw out_of_model_error("simulate_norm_dynamics: rule has no noise model");

  OptConfig cfg;
  cfg.rule = sim_rule;
  cfg.eta = eta;
  cfg.lambda = lambda;
  cfg.rho = opt.rho;
  cfg.rho1 = opt.rho1;
  cfg.rho2 = opt.rho2;
  cfg.eps = opt.eps;
  validate_config(cfg);

  Rng rng(seed);
  const Eigen::Index d = nm.dim;
  Eigen::VectorXd w = gaussian_vector(rng, d).normalized();

  OptState st = OptState::zeros(d);
  const double noise_scale2 = nm.gamma * nm.gamma * nm.sigma_grad * nm.sigma_grad /
                              (2.0 * static_cast<double>(d));
  if (sim_rule == Rule::rmsprop || sim_rule == Rule::adam)
    st.gacc.setConstant(noise_scale2 / w.squaredNorm());

  NormTrace trace;
  trace.rule = rule;
  trace.eta = eta;
  trace.lambda = lambda;
  trace.seed = seed;
  trace.norms.reserve(static_cast<std::size_t>(T) + 1);
  trace.norms.push_back(w.norm());

  for (long t = 0; t < T; ++t) {
    const double wn2 = w.squaredNorm();
    if (wn2 < 1e-60)
      throw model_breakdown_error("simulate_norm_dynamics: weight norm underflow");
    const double comp_std = std::sqrt(noise_scale2 / wn2);
    Eigen::VectorXd u(d);
    for (Eigen::Index i = 0; i < d; ++i) u(i) = comp_std * rng.gaussian();

    switch (sim_rule) {
      case Rule::sgd:
        w = step_sgd(w, u, cfg);
        break;
      case Rule::momentum: {
        GradSource src = [&u, &cfg](const Eigen::VectorXd& q) {
          return Eigen::VectorXd(u + cfg.lambda * q);
        };
        auto [w2, st2] = step_momentum(w, src, std::move(st), cfg);
        w = std::move(w2);
        st = std::move(st2);
        break;
      }
      case Rule::rmsprop: {
        auto [w2, st2] = step_rmsprop(w, u, std::move(st), cfg);
        w = std::move(w2);
        st = std::move(st2);
        break;
      }
      case Rule::adam: {
        auto [w2, st2] = step_adam(w, u, std::move(st), cfg);
        w = std::move(w2);
        st = std::move(st2);
        break;
      }
      default:
        break;
    }
    const double n = w.norm();
    if (!std::isfinite(n)) throw divergence_error("simulate_norm_dynamics: norm diverged");
    if (n < 1e-30) throw model_breakdown_error("simulate_norm_dynamics: weight norm underflow");
    trace.norms.push_back(n);
  }
  return trace;
}

/// Time-averaged norm over the trailing half of the trace.
inline double stationary_norm(const NormTrace& trace) {
  const std::size_t n = trace.norms.size();
  detail::require(n >= 2, "stationary_norm: trace too short");
  const std::size_t start = n / 2;
  double acc = 0.0;
  for (std::size_t i = start; i < n; ++i) acc += trace.norms[i];
  return acc / static_cast<double>(n - start);
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double rms_residual = 0.0;
};

/// Least-squares line through (log x, log y).
inline LineFit fit_loglog_slope(const std::vector<std::pair<double, double>>& pts) {
  detail::require(pts.size() >= 3, "fit_loglog_slope: need at least 3 points");
  const auto n = static_cast<double>(pts.size());
  double sx = 0.0, sy = 0.0;
  std::vector<double> lx(pts.size()), ly(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    detail::require(pts[i].first > 0.0 && pts[i].second > 0.0,
                    "fit_loglog_slope: points must be positive");
    lx[i] = std::log(pts[i].first);
    ly[i] = std::log(pts[i].second);
    sx += lx[i];
    sy += ly[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  detail::require(sxx > 0.0, "fit_loglog_slope: degenerate x-range");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double r = ly[i] - (fit.intercept + fit.slope * lx[i]);
    rss += r * r;
  }
  fit.rms_residual = std::sqrt(rss / n);
  return fit;
}

}  // namespace normscale
