#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>

#include "normscale/errors.hpp"
#include "normscale/units.hpp"

namespace normscale {

/// Per-sample loss with derivatives w.r.t. the prediction y.
class LossSpec {
 public:
  enum class Tag { squared_error, logistic };

  static LossSpec squared_error() { return LossSpec(Tag::squared_error); }
  static LossSpec logistic() { return LossSpec(Tag::logistic); }

  Tag tag() const { return tag_; }
  const char* name() const {
    return tag_ == Tag::squared_error ? "squared_error" : "logistic";
  }

  double value(double y, double t) const {
    if (tag_ == Tag::squared_error) {
      const double d = y - t;
      return 0.5 * d * d;
    }
    return Nonlinearity::softplus_value(-t * y);  // log(1 + e^{-t y})
  }

  double d1(double y, double t) const {
    if (tag_ == Tag::squared_error) return y - t;
    return -t * Nonlinearity::sigmoid(-t * y);
  }

  double d2(double y, double t) const {
    if (tag_ == Tag::squared_error) return 1.0;
    const double s = Nonlinearity::sigmoid(-t * y);
    return t * t * s * (1.0 - s);
  }

 private:
  explicit LossSpec(Tag t) : tag_(t) {}
  Tag tag_;
};

enum class UnitKind { plain, bn, wn };

inline const char* unit_kind_name(UnitKind k) {
  switch (k) {
    case UnitKind::plain: return "plain";
    case UnitKind::bn: return "bn";
    case UnitKind::wn: return "wn";
  }
  return "?";
}

/// A single-unit training problem: batch with targets, unit kind, activation,
/// per-sample loss and L2 coefficient. The objective is the SUM of per-sample
/// losses plus lambda * ||w||^2.
struct Problem {
  Batch batch;
  UnitKind kind = UnitKind::bn;
  Nonlinearity g = Nonlinearity::identity();
  LossSpec loss = LossSpec::squared_error();
  double lambda = 0.0;
};

namespace detail {
inline void check_problem(const Problem& pr, const char* who) {
  if (!pr.batch.has_targets()) throw contract_error(std::string(who) + ": batch has no targets");
  if (pr.batch.targets.size() != pr.batch.samples())
    throw contract_error(std::string(who) + ": target count must match batch");
  if (!(pr.lambda >= 0.0)) throw contract_error(std::string(who) + ": lambda must be >= 0");
}

inline Eigen::VectorXd problem_forward(const Problem& pr, const UnitParams& p,
                                       const std::optional<BNStats>& stats) {
  switch (pr.kind) {
    case UnitKind::plain: return forward_plain(pr.batch, p, pr.g);
    case UnitKind::bn: return forward_bn(pr.batch, p, pr.g, stats).y;
    case UnitKind::wn: return forward_wn(pr.batch, p, pr.g);
  }
  throw contract_error("problem_forward: unknown unit kind");
}
}  // namespace detail

/// Full regularized objective L_lambda(w) = sum_i l(y_i, t_i) + lambda ||w||^2.
/// Optional stats freeze the BN statistics (test mode); ignored for other kinds.
inline double loss_value(const Problem& pr, const UnitParams& p,
                         const std::optional<BNStats>& stats = std::nullopt) {
  detail::check_problem(pr, "loss_value");
  const Eigen::VectorXd y = detail::problem_forward(pr, p, stats);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    acc += pr.loss.value(y(i), pr.batch.targets(i));
  return acc + pr.lambda * p.w.squaredNorm();
}

/// Gradient of the DATA term only (no lambda contribution) w.r.t. w.
inline Eigen::VectorXd data_grad(const Problem& pr, const UnitParams& p,
                                 const std::optional<BNStats>& stats = std::nullopt) {
  detail::check_problem(pr, "data_grad");
  const Eigen::VectorXd y = detail::problem_forward(pr, p, stats);
  Eigen::VectorXd up(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i)
    up(i) = pr.loss.d1(y(i), pr.batch.targets(i));

  switch (pr.kind) {
    case UnitKind::bn: return grad_bn(pr.batch, p, pr.g, up, stats);
    case UnitKind::wn: return grad_wn(pr.batch, p, pr.g, up);
    case UnitKind::plain: {
      Eigen::VectorXd coeff(y.size());
      const Eigen::VectorXd z = (pr.batch.X * p.w).array() + p.bias;
      for (Eigen::Index i = 0; i < y.size(); ++i)
        coeff(i) = up(i) * pr.g.dg(z(i));
      return pr.batch.X.transpose() * coeff;
    }
  }
  throw contract_error("data_grad: unknown unit kind");
}

/// Gradient of the full objective; w block plus gamma/beta entries.
/// For the plain unit the beta slot carries the bias gradient and the gamma
/// slot is zero.
struct ObjectiveGrad {
  Eigen::VectorXd w;
  double gamma = 0.0;
  double beta = 0.0;
};

inline ObjectiveGrad loss_grad(const Problem& pr, const UnitParams& p,
                               const std::optional<BNStats>& stats = std::nullopt) {
  detail::check_problem(pr, "loss_grad");
  ObjectiveGrad out;
  // Regularizer derivative is taken as lambda * w, so one SGD step shrinks
  // weights by exactly (1 - eta*lambda). This is half the literal derivative
  // of lambda*||w||^2; the decay form is what the norm recursions assume.
  out.w = data_grad(pr, p, stats) + pr.lambda * p.w;

  // gamma/beta chain: z_i = gamma * shat_i + beta with shat the normalized
  // pre-activation (or z_i = s_i + bias for the plain unit).
  const Eigen::VectorXd s = pr.batch.X * p.w;
  Eigen::VectorXd shat;
  Eigen::VectorXd z(s.size());
  switch (pr.kind) {
    case UnitKind::bn: {
      const BNStats st = detail::resolve_stats(s, stats, pr.batch.samples(), "loss_grad");
      shat = (s.array() - st.mu) / st.sigma;
      z = p.gamma * shat.array() + p.beta;
      break;
    }
    case UnitKind::wn: {
      const double wn = p.w.norm();
      if (!(wn > 0.0)) throw contract_error("loss_grad: weight vector must be nonzero");
      shat = s / wn;
      z = p.gamma * shat.array() + p.beta;
      break;
    }
    case UnitKind::plain:
      shat = Eigen::VectorXd::Zero(s.size());
      z = s.array() + p.bias;
      break;
  }
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double up = pr.loss.d1(pr.g.g(z(i)), pr.batch.targets(i));
    const double c = up * pr.g.dg(z(i));
    out.gamma += c * shat(i);
    out.beta += c;
  }
  return out;
}

/// Hessian of the full objective w.r.t. w. Supported for the BN unit with a
/// twice-differentiable activation; the lambda term contributes lambda * I.
inline Eigen::MatrixXd loss_hessian(const Problem& pr, const UnitParams& p,
                                    const std::optional<BNStats>& stats = std::nullopt) {
  detail::check_problem(pr, "loss_hessian");
  if (pr.kind != UnitKind::bn)
    throw contract_error("loss_hessian: only the bn unit is supported");
  const Eigen::VectorXd y = detail::problem_forward(pr, p, stats);
  Eigen::VectorXd d1(y.size()), d2(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    d1(i) = pr.loss.d1(y(i), pr.batch.targets(i));
    d2(i) = pr.loss.d2(y(i), pr.batch.targets(i));
  }
  Eigen::MatrixXd h = hessian_bn_unit(pr.batch, p, pr.g, d1, d2, stats);
  h.diagonal().array() += pr.lambda;  // d/dw of the lambda*w decay term
  return h;
}

/// | L_lambda(alpha w) - L_{lambda alpha^2}(w) | for the normalized kinds.
/// Zero in exact arithmetic: scaling w leaves the data term unchanged and
/// maps the penalty lambda ||alpha w||^2 to (lambda alpha^2) ||w||^2.
inline double scale_identity_gap(const Problem& pr, const UnitParams& p,
                                 double alpha) {
  detail::check_problem(pr, "scale_identity_gap");
  if (!(alpha > 0.0)) throw contract_error("scale_identity_gap: alpha must be positive");
  if (pr.kind == UnitKind::plain)
    throw contract_error("scale_identity_gap: unit kind must be bn or wn");

  UnitParams scaled = p;
  scaled.w *= alpha;
  const double lhs = loss_value(pr, scaled);

  Problem rescaled = pr;
  rescaled.lambda = pr.lambda * alpha * alpha;
  const double rhs = loss_value(rescaled, p);
  return std::abs(lhs - rhs);
}

}  // namespace normscale
