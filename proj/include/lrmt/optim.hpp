#pragma once

#include <span>
#include <vector>

#include "lrmt/tensor.hpp"

namespace lrmt {

/// Max-shifted softmax. Throws std::invalid_argument on empty input.
std::vector<Real> softmax(std::span<const Real> v);

/// Rescale gradients of updatable parameters (excluding frozen rows) so their
/// global L2 norm is at most `max_norm`. Returns the applied factor (1 when
/// already within bounds).
Real clip_grad_norm(std::span<Parameter* const> params, Real max_norm);

/// Global L2 norm over the same gradient entries clip_grad_norm considers.
Real grad_norm(std::span<Parameter* const> params);

struct AdamConfig {
  Real lr = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
  /// Classic coupled L2: l2 * w is added to the gradient before the moments.
  Real l2 = 0.0;
};

/// Holds one AdamState per parameter, aligned by position.
class Adam {
public:
  explicit Adam(AdamConfig config);

  /// (Re)bind to a parameter list; moments start at zero.
  void bind(std::span<Parameter* const> params);
  void step();

  const AdamConfig& config() const noexcept { return config_; }
  std::span<Parameter* const> params() const noexcept { return params_; }
  std::span<const AdamState> states() const noexcept { return states_; }

private:
  AdamConfig config_;
  std::vector<Parameter*> params_;
  std::vector<AdamState> states_;
};

/// One Adam update over aligned (params, states). Frozen parameters and frozen
/// rows are skipped, leaving both their values and their moments untouched.
void adam_step(std::span<Parameter* const> params, std::span<AdamState> states,
               const AdamConfig& config);

}  // namespace lrmt
