#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <utility>

#include "normscale/errors.hpp"

namespace normscale {

enum class Rule { sgd, momentum, nesterov, rmsprop, adam, normalized_sgd, newton };

inline const char* rule_name(Rule r) {
  switch (r) {
    case Rule::sgd: return "sgd";
    case Rule::momentum: return "momentum";
    case Rule::nesterov: return "nesterov";
    case Rule::rmsprop: return "rmsprop";
    case Rule::adam: return "adam";
    case Rule::normalized_sgd: return "normalized_sgd";
    case Rule::newton: return "newton";
  }
  return "?";
}

inline std::optional<Rule> rule_from_name(std::string_view name) {
  if (name == "sgd") return Rule::sgd;
  if (name == "momentum") return Rule::momentum;
  if (name == "nesterov") return Rule::nesterov;
  if (name == "rmsprop") return Rule::rmsprop;
  if (name == "adam") return Rule::adam;
  if (name == "normalized_sgd") return Rule::normalized_sgd;
  if (name == "newton") return Rule::newton;
  return std::nullopt;
}

struct OptConfig {
  Rule rule = Rule::sgd;
  double eta = 0.1;
  double lambda = 0.0;
  double rho = 0.9;     // momentum / rmsprop decay
  double rho1 = 0.9;    // adam first moment
  double rho2 = 0.999;  // adam second moment
  double eps = 1e-8;    // rmsprop / adam
};

inline void validate_config(const OptConfig& cfg) {
  detail::require(cfg.eta > 0.0, "OptConfig: eta must be > 0");
  detail::require(cfg.lambda >= 0.0, "OptConfig: lambda must be >= 0");
  detail::require(cfg.rho >= 0.0 && cfg.rho < 1.0, "OptConfig: rho must be in [0,1)");
  detail::require(cfg.rho1 >= 0.0 && cfg.rho1 < 1.0, "OptConfig: rho1 must be in [0,1)");
  detail::require(cfg.rho2 >= 0.0 && cfg.rho2 < 1.0, "OptConfig: rho2 must be in [0,1)");
  detail::require(cfg.eps > 0.0, "OptConfig: eps must be > 0");
}

/// Mutable per-rule state, passed by value and returned updated.
struct OptState {
  Eigen::VectorXd v;     // first moment (momentum, adam)
  Eigen::VectorXd gacc;  // second-moment accumulator (rmsprop, adam)
  long t = 0;

  static OptState zeros(Eigen::Index d) {
    OptState st;
    st.v = Eigen::VectorXd::Zero(d);
    st.gacc = Eigen::VectorXd::Zero(d);
    st.t = 0;
    return st;
  }
};

/// Callable returning the FULL regularized gradient at a queried point.
/// Momentum's lookahead and Newton need gradients away from the current w,
/// so these rules take a source instead of a fixed vector. The vector-based
/// rules take the data gradient and apply the lambda*w decay themselves.
using GradSource = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using HessSource = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

namespace detail {
inline void check_finite(const Eigen::VectorXd& x, const char* msg) {
  if (!x.allFinite()) throw divergence_error(msg);
}
}  // namespace detail

/// w' = w - eta * (grad + lambda w). grad is the data-term gradient.
inline Eigen::VectorXd step_sgd(const Eigen::VectorXd& w,
                                const Eigen::VectorXd& grad,
                                const OptConfig& cfg) {
  validate_config(cfg);
  detail::require(grad.size() == w.size(), "step_sgd: gradient dimension mismatch");
  detail::check_finite(grad, "step_sgd: nonfinite gradient");
  Eigen::VectorXd next = w - cfg.eta * (grad + cfg.lambda * w);
  detail::check_finite(next, "step_sgd: nonfinite weights after step");
  return next;
}

/// Classic momentum: v' = rho v - eta grad_src(w); w' = w + v'.
/// Nesterov (cfg.rule == Rule::nesterov): gradient taken at w + rho v.
/// grad_src must return the full regularized gradient; cfg.lambda is not
/// applied here. Note v accumulates downhill displacements, so the weight
/// update adds v'; writing it as a subtraction would ascend.
inline std::pair<Eigen::VectorXd, OptState> step_momentum(
    const Eigen::VectorXd& w, const GradSource& grad_src, OptState st,
    const OptConfig& cfg) {
  validate_config(cfg);
  detail::require(st.v.size() == w.size(), "step_momentum: state dimension mismatch");
  const bool lookahead = cfg.rule == Rule::nesterov;
  const Eigen::VectorXd q = lookahead ? Eigen::VectorXd(w + cfg.rho * st.v) : w;
  const Eigen::VectorXd g = grad_src(q);
  detail::require(g.size() == w.size(), "step_momentum: gradient dimension mismatch");
  detail::check_finite(g, "step_momentum: nonfinite gradient");
  st.v = cfg.rho * st.v + (-cfg.eta) * g;
  Eigen::VectorXd next = w + st.v;
  detail::check_finite(next, "step_momentum: nonfinite weights after step");
  st.t += 1;
  return {std::move(next), std::move(st)};
}

/// gacc' = rho gacc + (1-rho) gl^2;  w' = w - eta gl / sqrt(gacc' + eps),
/// elementwise, with gl = grad + lambda w.
inline std::pair<Eigen::VectorXd, OptState> step_rmsprop(
    const Eigen::VectorXd& w, const Eigen::VectorXd& grad, OptState st,
    const OptConfig& cfg) {
  validate_config(cfg);
  detail::require(st.gacc.size() == w.size(), "step_rmsprop: state dimension mismatch");
  detail::require(grad.size() == w.size(), "step_rmsprop: gradient dimension mismatch");
  detail::check_finite(grad, "step_rmsprop: nonfinite gradient");
  const Eigen::ArrayXd gl = (grad + cfg.lambda * w).array();
  st.gacc = cfg.rho * st.gacc.array() + (1.0 - cfg.rho) * gl.square();
  Eigen::VectorXd next =
      w.array() - cfg.eta * gl / (st.gacc.array() + cfg.eps).sqrt();
  detail::check_finite(next, "step_rmsprop: nonfinite weights after step");
  st.t += 1;
  return {std::move(next), std::move(st)};
}

/// v' = rho1 v + (1-rho1) gl;  gacc' = rho2 gacc + (1-rho2) gl^2;
/// w' = w - eta (v'/(1-rho1)) / (sqrt(gacc'/(1-rho2)) + eps).
/// Bias divisors are the fixed constants (1-rho1), (1-rho2), not the
/// per-step powers of the original formulation.
inline std::pair<Eigen::VectorXd, OptState> step_adam(
    const Eigen::VectorXd& w, const Eigen::VectorXd& grad, OptState st,
    const OptConfig& cfg) {
  validate_config(cfg);
  detail::require(st.v.size() == w.size() && st.gacc.size() == w.size(),
                  "step_adam: state dimension mismatch");
  detail::require(grad.size() == w.size(), "step_adam: gradient dimension mismatch");
  detail::check_finite(grad, "step_adam: nonfinite gradient");
  const Eigen::ArrayXd gl = (grad + cfg.lambda * w).array();
  st.v = cfg.rho1 * st.v.array() + (1.0 - cfg.rho1) * gl;
  st.gacc = cfg.rho2 * st.gacc.array() + (1.0 - cfg.rho2) * gl.square();
  const Eigen::ArrayXd vhat = st.v.array() / (1.0 - cfg.rho1);
  const Eigen::ArrayXd denom = (st.gacc.array() / (1.0 - cfg.rho2)).sqrt() + cfg.eps;
  Eigen::VectorXd next = w.array() - cfg.eta * vhat / denom;
  detail::check_finite(next, "step_adam: nonfinite weights after step");
  st.t += 1;
  return {std::move(next), std::move(st)};
}

/// SGD step followed by projection to the unit sphere.
inline Eigen::VectorXd step_normalized_sgd(const Eigen::VectorXd& w,
                                           const Eigen::VectorXd& grad,
                                           const OptConfig& cfg) {
  Eigen::VectorXd wt = step_sgd(w, grad, cfg);
  const double n = wt.norm();
  if (!(n > 0.0))
    throw degenerate_step_error("step_normalized_sgd: step landed on the origin");
  return wt / n;
}

/// w' = w - eta H^{-1} g with g = grad_src(w), H = hess_src(w), both of the
/// full regularized objective. Dense solve; guarded by a condition-number
/// limit of 1e12.
inline Eigen::VectorXd step_newton(const Eigen::VectorXd& w,
                                   const GradSource& grad_src,
                                   const HessSource& hess_src,
                                   const OptConfig& cfg) {
  validate_config(cfg);
  const Eigen::VectorXd g = grad_src(w);
  const Eigen::MatrixXd h = hess_src(w);
  detail::require(g.size() == w.size(), "step_newton: gradient dimension mismatch");
  detail::require(h.rows() == w.size() && h.cols() == w.size(),
                  "step_newton: hessian dimension mismatch");
  detail::check_finite(g, "step_newton: nonfinite gradient");
  if (!h.allFinite()) throw divergence_error("step_newton: nonfinite hessian");

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(h, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);
  if (!(smin > 0.0) || smax / smin > 1e12)
    throw singular_hessian_error("step_newton: hessian singular or condition number > 1e12");

  Eigen::VectorXd next = w - cfg.eta * svd.solve(g);
  detail::check_finite(next, "step_newton: nonfinite weights after step");
  return next;
}

}  // namespace normscale
