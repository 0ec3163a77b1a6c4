#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>

#include "normscale/errors.hpp"
#include "normscale/nonlinearity.hpp"

namespace normscale {

/// A minibatch: rows of X are samples. Targets may be absent (size 0).
struct Batch {
  Eigen::MatrixXd X;
  Eigen::VectorXd targets;

  Eigen::Index samples() const { return X.rows(); }
  Eigen::Index features() const { return X.cols(); }
  bool has_targets() const { return targets.size() > 0; }
};

/// Parameters of a single unit. gamma/beta are the affine terms used by the
/// normalized forms; bias applies to the plain form only.
struct UnitParams {
  Eigen::VectorXd w;
  double gamma = 1.0;
  double beta = 0.0;
  double bias = 0.0;
};

/// Parameters of a k-unit layer, one column of W per unit.
struct LayerParams {
  Eigen::MatrixXd W;
  Eigen::VectorXd gamma;
  Eigen::VectorXd beta;
};

enum class StatsMode { train, test };

/// First two moments of the pre-activation over a batch. sigma is the
/// population standard deviation (divisor N, not N-1).
struct BNStats {
  double mu = 0.0;
  double sigma = 1.0;
  StatsMode mode = StatsMode::train;
};

namespace detail {

inline BNStats batch_stats(const Eigen::VectorXd& s) {
  const double mu = s.mean();
  const double var = (s.array() - mu).square().mean();
  const double sigma = std::sqrt(var);
  if (!(sigma > 0.0))
    throw degenerate_batch_error(
        "pre-activation is constant across the batch (sigma = 0)");
  return {mu, sigma, StatsMode::train};
}

inline void check_unit_dims(const Batch& b, const UnitParams& p,
                            const char* who) {
  if (b.features() != p.w.size()) throw contract_error(std::string(who) + ": feature/weight dimension mismatch");
  if (b.samples() < 1) throw contract_error(std::string(who) + ": empty batch");
}

// Resolve the statistics to normalize with: supplied stats mean test mode,
// otherwise compute train-mode stats from this batch.
inline BNStats resolve_stats(const Eigen::VectorXd& s,
                             const std::optional<BNStats>& stats,
                             Eigen::Index n_samples, const char* who) {
  if (stats.has_value()) {
    if (!(stats->sigma > 0.0))
      throw degenerate_batch_error(std::string(who) + ": supplied sigma must be positive");
    BNStats st = *stats;
    st.mode = StatsMode::test;
    return st;
  }
  if (n_samples < 2)
    throw contract_error(std::string(who) + ": need at least 2 samples to estimate batch statistics");
  return batch_stats(s);
}

}  // namespace detail

/// y_i = g(x_i . w + bias)
inline Eigen::VectorXd forward_plain(const Batch& b, const UnitParams& p,
                                     const Nonlinearity& g) {
  detail::check_unit_dims(b, p, "forward_plain");
  Eigen::VectorXd z = b.X * p.w;
  z.array() += p.bias;
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = g.g(z(i));
  return z;
}

struct BNForward {
  Eigen::VectorXd y;
  BNStats stats;
};

/// Batch-normalized unit: y_i = g(gamma * (s_i - mu)/sigma + beta) with
/// s = X w. Without supplied stats, mu/sigma come from the batch itself
/// (train mode); with stats, they are used as constants (test mode).
inline BNForward forward_bn(const Batch& b, const UnitParams& p,
                            const Nonlinearity& g,
                            const std::optional<BNStats>& stats = std::nullopt) {
  detail::check_unit_dims(b, p, "forward_bn");
  const Eigen::VectorXd s = b.X * p.w;
  const BNStats st = detail::resolve_stats(s, stats, b.samples(), "forward_bn");
  Eigen::VectorXd y(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    y(i) = g.g(p.gamma * (s(i) - st.mu) / st.sigma + p.beta);
  return {std::move(y), st};
}

/// Weight-normalized unit: y_i = g(gamma * (x_i . w)/||w|| + beta).
inline Eigen::VectorXd forward_wn(const Batch& b, const UnitParams& p,
                                  const Nonlinearity& g) {
  detail::check_unit_dims(b, p, "forward_wn");
  const double wn = p.w.norm();
  if (!(wn > 0.0)) throw contract_error("forward_wn: weight vector must be nonzero");
  Eigen::VectorXd z = (b.X * p.w) * (p.gamma / wn);
  z.array() += p.beta;
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = g.g(z(i));
  return z;
}

/// Layer-normalized layer applied to one sample x: the k pre-activations
/// s_j = x . W_col(j) are standardized across units.
inline Eigen::VectorXd forward_ln(const Eigen::VectorXd& x,
                                  const LayerParams& p,
                                  const Nonlinearity& g) {
  const Eigen::Index k = p.W.cols();
  if (x.size() != p.W.rows()) throw contract_error("forward_ln: input/weight dimension mismatch");
  if (p.gamma.size() != k || p.beta.size() != k)
    throw contract_error("forward_ln: gamma/beta must have one entry per unit");
  if (k < 2) throw contract_error("forward_ln: need at least 2 units");

  const Eigen::VectorXd s = p.W.transpose() * x;
  const double mu = s.mean();
  const double var = (s.array() - mu).square().mean();
  const double sigma = std::sqrt(var);
  if (!(sigma > 0.0))
    throw degenerate_layer_error("forward_ln: pre-activations are constant across units");

  Eigen::VectorXd y(k);
  for (Eigen::Index j = 0; j < k; ++j)
    y(j) = g.g(p.gamma(j) * (s(j) - mu) / sigma + p.beta(j));
  return y;
}

/// Gradient of sum_i upstream_i * y_i w.r.t. w for the BN unit, with mu and
/// sigma treated as constants of the batch (the stop-gradient convention).
/// upstream_i is d(loss)/d(y_i).
inline Eigen::VectorXd grad_bn(const Batch& b, const UnitParams& p,
                               const Nonlinearity& g,
                               const Eigen::VectorXd& upstream,
                               const std::optional<BNStats>& stats = std::nullopt) {
  detail::check_unit_dims(b, p, "grad_bn");
  if (upstream.size() != b.samples()) throw contract_error("grad_bn: upstream size must match batch");
  const Eigen::VectorXd s = b.X * p.w;
  const BNStats st = detail::resolve_stats(s, stats, b.samples(), "grad_bn");

  Eigen::VectorXd coeff(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double z = p.gamma * (s(i) - st.mu) / st.sigma + p.beta;
    coeff(i) = upstream(i) * p.gamma * g.dg(z) / st.sigma;
  }
  return b.X.transpose() * coeff;
}

/// Gradient of sum_i upstream_i * y_i w.r.t. w for the WN unit.
/// d z_i / d w = gamma * (x_i / ||w|| - w (x_i . w) / ||w||^3).
inline Eigen::VectorXd grad_wn(const Batch& b, const UnitParams& p,
                               const Nonlinearity& g,
                               const Eigen::VectorXd& upstream) {
  detail::check_unit_dims(b, p, "grad_wn");
  if (upstream.size() != b.samples()) throw contract_error("grad_wn: upstream size must match batch");
  const double wn = p.w.norm();
  if (!(wn > 0.0)) throw contract_error("grad_wn: weight vector must be nonzero");

  const Eigen::VectorXd s = b.X * p.w;
  Eigen::VectorXd coeff(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double z = p.gamma * s(i) / wn + p.beta;
    coeff(i) = upstream(i) * p.gamma * g.dg(z);
  }
  const Eigen::VectorXd xc = b.X.transpose() * coeff;
  const double sc = s.dot(coeff);
  return xc / wn - p.w * (sc / (wn * wn * wn));
}

/// Hessian of sum_i loss_i(y_i) w.r.t. w for the BN unit under the same
/// stop-gradient convention. lossd1/lossd2 hold per-sample first and second
/// derivatives of the loss w.r.t. y_i. Requires a twice-differentiable g.
inline Eigen::MatrixXd hessian_bn_unit(const Batch& b, const UnitParams& p,
                                       const Nonlinearity& g,
                                       const Eigen::VectorXd& lossd1,
                                       const Eigen::VectorXd& lossd2,
                                       const std::optional<BNStats>& stats = std::nullopt) {
  detail::check_unit_dims(b, p, "hessian_bn_unit");
  if (!g.smooth())
    throw unsupported_nonlinearity_error("hessian_bn_unit: activation must be twice differentiable");
  if (lossd1.size() != b.samples() || lossd2.size() != b.samples())
    throw contract_error("hessian_bn_unit: loss derivative sizes must match batch");

  const Eigen::VectorXd s = b.X * p.w;
  const BNStats st = detail::resolve_stats(s, stats, b.samples(), "hessian_bn_unit");
  const double r = p.gamma / st.sigma;  // dz/ds, constant per batch

  Eigen::VectorXd q(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double z = r * (s(i) - st.mu) + p.beta;
    const double d1 = g.dg(z);
    q(i) = r * r * (lossd2(i) * d1 * d1 + lossd1(i) * g.d2g(z));
  }
  return b.X.transpose() * q.asDiagonal() * b.X;
}

}  // namespace normscale
