#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "lrmt/autodiff.hpp"

namespace lrmt::check {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients with central differences for every entry
/// of every parameter. `build` must record a forward pass ending in a scalar
/// and be deterministic across calls.
inline GradCheckResult grad_check(const std::vector<Parameter*>& params,
                                  const std::function<Var(Graph&)>& build, double eps = 1e-5) {
  for (Parameter* p : params) p->zero_grad();
  {
    Graph g;
    g.backward(build(g));
  }
  GradCheckResult res;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      Graph gp;
      const double up = gp.value(build(gp))[0];
      p->value[i] = saved - eps;
      Graph gm;
      const double down = gm.value(build(gm))[0];
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p->grad[i];
      const double scale = std::max(std::abs(numeric), std::abs(analytic));
      const double diff = std::abs(numeric - analytic);
      const double rel = scale < 1e-7 ? (diff < 1e-9 ? 0.0 : diff / 1e-7) : diff / scale;
      res.max_rel_error = std::max(res.max_rel_error, rel);
      ++res.checked;
    }
  }
  return res;
}

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape), 0.0);
  for (Real& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

/// sum(probe * x): a scalar whose gradient w.r.t. x is `probe`.
inline Var probe_sum(Graph& g, Var x, const Tensor& probe) {
  return ops::sum(g, ops::mul(g, x, g.constant(probe)));
}

}  // namespace lrmt::check
