#pragma once

#include <stdexcept>
#include <string>

namespace normscale {

/// Base class for all library errors.
struct error : std::runtime_error {
  explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Precondition or dimension violation by the caller.
struct contract_error : error {
  using error::error;
};

/// Batch statistics are unusable (zero standard deviation across the batch).
struct degenerate_batch_error : error {
  using error::error;
};

/// Across-unit statistics of a layer are unusable.
struct degenerate_layer_error : error {
  using error::error;
};

/// Nonfinite values produced or consumed by an update rule.
struct divergence_error : error {
  using error::error;
};

/// Newton step cannot be taken: Hessian singular or condition number too large.
struct singular_hessian_error : error {
  using error::error;
};

/// Operation needs a twice-differentiable activation.
struct unsupported_nonlinearity_error : error {
  using error::error;
};

/// Normalized step would divide by zero.
struct degenerate_step_error : error {
  using error::error;
};

/// Requested parameters fall outside the stochastic model's validity region.
struct out_of_model_error : error {
  using error::error;
};

/// Simulated weight norm underflowed; the noise model breaks down.
struct model_breakdown_error : error {
  using error::error;
};

namespace detail {
inline void require(bool cond, const char* msg) {
  if (!cond) throw contract_error(msg);
}
}  // namespace detail

}  // namespace normscale
