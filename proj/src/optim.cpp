#include "lrmt/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lrmt {

std::vector<Real> softmax(std::span<const Real> v) {
  if (v.empty()) throw std::invalid_argument("softmax of an empty vector");
  const Real mx = *std::max_element(v.begin(), v.end());
  std::vector<Real> out(v.size());
  Real z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    z += out[i];
  }
  for (Real& x : out) x /= z;
  return out;
}

namespace {

template <typename Fn>
void for_each_live_row(Parameter& p, Fn&& fn) {
  const std::size_t cols = p.value.cols();
  for (std::size_t r = 0; r < p.value.rows(); ++r) {
    if (p.row_frozen(r)) continue;
    fn(r * cols, cols);
  }
}

}  // namespace

Real grad_norm(std::span<Parameter* const> params) {
  Real sq = 0.0;
  for (Parameter* p : params) {
    if (!p->updatable()) continue;
    for_each_live_row(*p, [&](std::size_t off, std::size_t n) {
      for (std::size_t i = off; i < off + n; ++i) sq += p->grad[i] * p->grad[i];
    });
  }
  return std::sqrt(sq);
}

Real clip_grad_norm(std::span<Parameter* const> params, Real max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_grad_norm: max_norm must be > 0");
  const Real norm = grad_norm(params);
  // A freshly clipped set can recompute a hair above max_norm; the slack keeps
  // a second call a no-op.
  if (norm <= max_norm * (1.0 + 1e-9)) return 1.0;
  const Real scale = max_norm / norm;
  for (Parameter* p : params) {
    if (!p->updatable()) continue;
    for_each_live_row(*p, [&](std::size_t off, std::size_t n) {
      for (std::size_t i = off; i < off + n; ++i) p->grad[i] *= scale;
    });
  }
  return scale;
}

void adam_step(std::span<Parameter* const> params, std::span<AdamState> states,
               const AdamConfig& config) {
  if (!(config.lr > 0.0)) throw std::invalid_argument("adam: learning rate must be > 0");
  if (params.size() != states.size()) {
    throw std::invalid_argument("adam: parameter and state lists are not aligned");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    AdamState& s = states[i];
    if (!p.updatable()) continue;
    if (s.m.empty()) {
      s.m = Tensor(p.value.shape(), 0.0);
      s.v = Tensor(p.value.shape(), 0.0);
    }
    if (!s.m.same_shape(p.value)) throw std::invalid_argument("adam: state shape mismatch for " + p.name);
    ++s.t;
    const Real bc1 = 1.0 - std::pow(config.beta1, static_cast<Real>(s.t));
    const Real bc2 = 1.0 - std::pow(config.beta2, static_cast<Real>(s.t));
    for_each_live_row(p, [&](std::size_t off, std::size_t n) {
      for (std::size_t j = off; j < off + n; ++j) {
        const Real grad = p.grad[j] + config.l2 * p.value[j];
        s.m[j] = config.beta1 * s.m[j] + (1.0 - config.beta1) * grad;
        s.v[j] = config.beta2 * s.v[j] + (1.0 - config.beta2) * grad * grad;
        const Real mhat = s.m[j] / bc1;
        const Real vhat = s.v[j] / bc2;
        p.value[j] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
      }
    });
  }
}

Adam::Adam(AdamConfig config) : config_(config) {
  if (!(config_.lr > 0.0)) throw std::invalid_argument("adam: learning rate must be > 0");
}

void Adam::bind(std::span<Parameter* const> params) {
  params_.assign(params.begin(), params.end());
  states_.assign(params_.size(), AdamState{});
}

void Adam::step() { adam_step(params_, states_, config_); }

}  // namespace lrmt
