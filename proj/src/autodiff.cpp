#include "lrmt/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace lrmt {

namespace {

using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

MatMap as_mat(Tensor& t) {
  return MatMap(t.storage().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}
ConstMatMap as_mat(const Tensor& t) {
  return ConstMatMap(t.storage().data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

Real sigm(Real x) { return 1.0 / (1.0 + std::exp(-x)); }

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": " + what);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.same_shape(b), op,
          "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

}  // namespace

Var Graph::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Graph::constant_ref(const Tensor& value) {
  Var v = push(Tensor{}, false, nullptr);
  nodes_[v.id].external = &value;
  return v;
}

Var Graph::param(Parameter& p) {
  Var v = push(Tensor{}, p.updatable(), nullptr);
  nodes_[v.id].external = &p.value;
  nodes_[v.id].param = &p;
  return v;
}

Var Graph::push(Tensor value, bool requires_grad, Backward back) {
  nodes_.push_back(Node{std::move(value), Tensor{}, std::move(back), nullptr, nullptr, requires_grad});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor& Graph::grad_mut(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(value_of(id).shape(), 0.0);
  return n.grad;
}

void Graph::backward(Var loss) {
  if (!loss.valid() || loss.id >= nodes_.size()) {
    throw std::logic_error("backward called without a recorded forward pass");
  }
  if (value_of(loss.id).size() != 1) {
    throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                shape_string(value_of(loss.id).shape()));
  }
  if (!nodes_[loss.id].requires_grad) return;
  grad_mut(loss.id)[0] = 1.0;
  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.back) n.back(*this, id);
    if (n.param != nullptr) {
      auto dst = as_mat(n.param->grad);
      dst += as_mat(nodes_[id].grad);
    }
  }
}

void Graph::clear() { nodes_.clear(); }

namespace ops {

Var linear(Graph& g, Var x, Var weight, Var bias) {
  const Tensor& X = g.value(x);
  const Tensor& W = g.value(weight);
  require(X.cols() == W.cols(), "linear",
          "input width " + std::to_string(X.cols()) + " != weight width " +
              std::to_string(W.cols()));
  Tensor y = Tensor::matrix(X.rows(), W.rows());
  auto Y = as_mat(y);
  Y.noalias() = as_mat(X) * as_mat(W).transpose();
  if (bias.valid()) {
    const Tensor& b = g.value(bias);
    require(b.size() == W.rows(), "linear", "bias length mismatch");
    Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>> bv(b.storage().data(),
                                                                static_cast<Eigen::Index>(b.size()));
    Y.rowwise() += bv;
  }
  const bool rg = g.requires_grad(x) || g.requires_grad(weight) ||
                  (bias.valid() && g.requires_grad(bias));
  return g.push(std::move(y), rg, [x, weight, bias](Graph& g, std::uint32_t self) {
    const Tensor& dy = g.grad_of(self);
    auto dY = as_mat(dy);
    if (g.needs(x.id)) as_mat(g.grad_mut(x.id)).noalias() += dY * as_mat(g.value(weight));
    if (g.needs(weight.id)) {
      as_mat(g.grad_mut(weight.id)).noalias() += dY.transpose() * as_mat(g.value(x));
    }
    if (bias.valid() && g.needs(bias.id)) {
      Tensor& db = g.grad_mut(bias.id);
      Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>> dbv(db.storage().data(),
                                                             static_cast<Eigen::Index>(db.size()));
      dbv += dY.colwise().sum();
    }
  });
}

Var add(Graph& g, Var a, Var b) {
  require_same_shape(g.value(a), g.value(b), "add");
  Tensor y = g.value(a);
  as_mat(y) += as_mat(g.value(b));
  return g.push(std::move(y), g.requires_grad(a) || g.requires_grad(b),
                [a, b](Graph& g, std::uint32_t self) {
                  for (Var v : {a, b}) {
                    if (g.needs(v.id)) as_mat(g.grad_mut(v.id)) += as_mat(g.grad_of(self));
                  }
                });
}

Var sub(Graph& g, Var a, Var b) {
  require_same_shape(g.value(a), g.value(b), "sub");
  Tensor y = g.value(a);
  as_mat(y) -= as_mat(g.value(b));
  return g.push(std::move(y), g.requires_grad(a) || g.requires_grad(b),
                [a, b](Graph& g, std::uint32_t self) {
                  if (g.needs(a.id)) as_mat(g.grad_mut(a.id)) += as_mat(g.grad_of(self));
                  if (g.needs(b.id)) as_mat(g.grad_mut(b.id)) -= as_mat(g.grad_of(self));
                });
}

Var mul(Graph& g, Var a, Var b) {
  require_same_shape(g.value(a), g.value(b), "mul");
  Tensor y = g.value(a);
  as_mat(y).array() *= as_mat(g.value(b)).array();
  return g.push(std::move(y), g.requires_grad(a) || g.requires_grad(b),
                [a, b](Graph& g, std::uint32_t self) {
                  auto dy = as_mat(g.grad_of(self)).array();
                  if (g.needs(a.id)) {
                    as_mat(g.grad_mut(a.id)).array() += dy * as_mat(g.value(b)).array();
                  }
                  if (g.needs(b.id)) {
                    as_mat(g.grad_mut(b.id)).array() += dy * as_mat(g.value(a)).array();
                  }
                });
}

Var scale(Graph& g, Var a, Real s) {
  Tensor y = g.value(a);
  as_mat(y) *= s;
  return g.push(std::move(y), g.requires_grad(a), [a, s](Graph& g, std::uint32_t self) {
    as_mat(g.grad_mut(a.id)) += s * as_mat(g.grad_of(self));
  });
}

Var tanh(Graph& g, Var a) {
  Tensor y = g.value(a);
  for (Real& v : y.storage()) v = std::tanh(v);
  return g.push(std::move(y), g.requires_grad(a), [a](Graph& g, std::uint32_t self) {
    auto yv = as_mat(g.value(Var{self})).array();
    as_mat(g.grad_mut(a.id)).array() += as_mat(g.grad_of(self)).array() * (1.0 - yv * yv);
  });
}

Var sigmoid(Graph& g, Var a) {
  Tensor y = g.value(a);
  for (Real& v : y.storage()) v = sigm(v);
  return g.push(std::move(y), g.requires_grad(a), [a](Graph& g, std::uint32_t self) {
    auto yv = as_mat(g.value(Var{self})).array();
    as_mat(g.grad_mut(a.id)).array() += as_mat(g.grad_of(self)).array() * yv * (1.0 - yv);
  });
}

Var sum(Graph& g, Var a) {
  Real s = 0.0;
  for (Real v : g.value(a).storage()) s += v;
  return g.push(Tensor::scalar(s), g.requires_grad(a), [a](Graph& g, std::uint32_t self) {
    const Real d = g.grad_of(self)[0];
    for (Real& v : g.grad_mut(a.id).storage()) v += d;
  });
}

Var concat_cols(Graph& g, std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  const std::size_t rows = g.value(parts[0]).rows();
  std::size_t width = 0;
  bool rg = false;
  for (Var p : parts) {
    require(g.value(p).rows() == rows, "concat_cols", "row count mismatch");
    width += g.value(p).cols();
    rg = rg || g.requires_grad(p);
  }
  Tensor y = Tensor::matrix(rows, width);
  auto Y = as_mat(y);
  Eigen::Index off = 0;
  for (Var p : parts) {
    auto P = as_mat(g.value(p));
    Y.middleCols(off, P.cols()) = P;
    off += P.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return g.push(std::move(y), rg, [inputs](Graph& g, std::uint32_t self) {
    auto dY = as_mat(g.grad_of(self));
    Eigen::Index off = 0;
    for (Var p : inputs) {
      const auto w = static_cast<Eigen::Index>(g.value(p).cols());
      if (g.needs(p.id)) as_mat(g.grad_mut(p.id)) += dY.middleCols(off, w);
      off += w;
    }
  });
}

Var slice_cols(Graph& g, Var a, std::size_t begin, std::size_t width) {
  const Tensor& A = g.value(a);
  require(begin + width <= A.cols() && width > 0, "slice_cols", "range out of bounds");
  Tensor y = Tensor::matrix(A.rows(), width);
  as_mat(y) = as_mat(A).middleCols(static_cast<Eigen::Index>(begin),
                                   static_cast<Eigen::Index>(width));
  return g.push(std::move(y), g.requires_grad(a), [a, begin, width](Graph& g, std::uint32_t self) {
    as_mat(g.grad_mut(a.id))
        .middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(width)) +=
        as_mat(g.grad_of(self));
  });
}

Var stack_rows(Graph& g, std::span<const Var> parts) {
  require(!parts.empty(), "stack_rows", "no inputs");
  const std::size_t cols = g.value(parts[0]).cols();
  std::size_t rows = 0;
  bool rg = false;
  for (Var p : parts) {
    require(g.value(p).cols() == cols, "stack_rows", "column count mismatch");
    rows += g.value(p).rows();
    rg = rg || g.requires_grad(p);
  }
  Tensor y = Tensor::matrix(rows, cols);
  auto out = y.storage().begin();
  for (Var p : parts) out = std::copy(g.value(p).storage().begin(), g.value(p).storage().end(), out);
  std::vector<Var> inputs(parts.begin(), parts.end());
  return g.push(std::move(y), rg, [inputs](Graph& g, std::uint32_t self) {
    const Real* src = g.grad_of(self).storage().data();
    for (Var p : inputs) {
      const std::size_t n = g.value(p).size();
      if (g.needs(p.id)) {
        Real* dst = g.grad_mut(p.id).storage().data();
        for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
      }
      src += n;
    }
  });
}

Var stack_batch_major(Graph& g, std::span<const Var> steps) {
  require(!steps.empty(), "stack_batch_major", "no inputs");
  const std::size_t T = steps.size();
  const std::size_t B = g.value(steps[0]).rows();
  const std::size_t D = g.value(steps[0]).cols();
  bool rg = false;
  Tensor y = Tensor::matrix(B * T, D);
  for (std::size_t t = 0; t < T; ++t) {
    const Tensor& s = g.value(steps[t]);
    require(s.rows() == B && s.cols() == D, "stack_batch_major", "step shape mismatch");
    rg = rg || g.requires_grad(steps[t]);
    for (std::size_t b = 0; b < B; ++b) {
      std::copy(s.row(b).begin(), s.row(b).end(), y.row(b * T + t).begin());
    }
  }
  std::vector<Var> inputs(steps.begin(), steps.end());
  return g.push(std::move(y), rg, [inputs, B, T, D](Graph& g, std::uint32_t self) {
    const Tensor& dy = g.grad_of(self);
    for (std::size_t t = 0; t < T; ++t) {
      if (!g.needs(inputs[t].id)) continue;
      Tensor& ds = g.grad_mut(inputs[t].id);
      for (std::size_t b = 0; b < B; ++b) {
        auto src = dy.row(b * T + t);
        auto dst = ds.row(b);
        for (std::size_t k = 0; k < D; ++k) dst[k] += src[k];
      }
    }
  });
}

Var gather_rows(Graph& g, Var table, std::span<const int> ids) {
  const Tensor& W = g.value(table);
  const std::size_t D = W.cols();
  require(!ids.empty(), "gather_rows", "empty id list");
  Tensor y = Tensor::matrix(ids.size(), D);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < W.rows(), "gather_rows",
            "id " + std::to_string(ids[i]) + " outside table of " + std::to_string(W.rows()));
    auto src = W.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), y.row(i).begin());
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return g.push(std::move(y), g.requires_grad(table), [table, idx](Graph& g, std::uint32_t self) {
    const Tensor& dy = g.grad_of(self);
    Tensor& dW = g.grad_mut(table.id);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto src = dy.row(i);
      auto dst = dW.row(static_cast<std::size_t>(idx[i]));
      for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
    }
  });
}

Var mask_blend(Graph& g, Var fresh, Var prev, std::span<const std::uint8_t> keep) {
  const Tensor& F = g.value(fresh);
  const Tensor& P = g.value(prev);
  require_same_shape(F, P, "mask_blend");
  require(keep.size() == F.rows(), "mask_blend", "mask length mismatch");
  Tensor y = F;
  for (std::size_t b = 0; b < keep.size(); ++b) {
    if (!keep[b]) std::copy(P.row(b).begin(), P.row(b).end(), y.row(b).begin());
  }
  std::vector<std::uint8_t> mask(keep.begin(), keep.end());
  return g.push(std::move(y), g.requires_grad(fresh) || g.requires_grad(prev),
                [fresh, prev, mask](Graph& g, std::uint32_t self) {
                  const Tensor& dy = g.grad_of(self);
                  for (std::size_t b = 0; b < mask.size(); ++b) {
                    const Var to = mask[b] ? fresh : prev;
                    if (!g.needs(to.id)) continue;
                    auto src = dy.row(b);
                    auto dst = g.grad_mut(to.id).row(b);
                    for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
                  }
                });
}

Var dropout(Graph& g, Var a, Real rate, Rng& rng) {
  require(rate >= 0.0 && rate < 1.0, "dropout", "rate must be in [0, 1)");
  if (rate == 0.0) return a;
  const Real keep_scale = 1.0 / (1.0 - rate);
  Tensor mask(g.value(a).shape(), 0.0);
  for (Real& m : mask.storage()) m = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor y = g.value(a);
  as_mat(y).array() *= as_mat(mask).array();
  return g.push(std::move(y), g.requires_grad(a),
                [a, mask = std::move(mask)](Graph& g, std::uint32_t self) {
                  as_mat(g.grad_mut(a.id)).array() +=
                      as_mat(g.grad_of(self)).array() * as_mat(mask).array();
                });
}

Var gru_update(Graph& g, Var gi, Var gh, Var h) {
  const Tensor& GI = g.value(gi);
  const Tensor& GH = g.value(gh);
  const Tensor& Hp = g.value(h);
  const std::size_t B = Hp.rows();
  const std::size_t H = Hp.cols();
  require(GI.rows() == B && GI.cols() == 3 * H && GH.rows() == B && GH.cols() == 3 * H,
          "gru_update", "gate projections must be [B x 3H]");
  // cache holds r | z | n per row.
  Tensor cache = Tensor::matrix(B, 3 * H);
  Tensor y = Tensor::matrix(B, H);
  for (std::size_t b = 0; b < B; ++b) {
    auto gi_row = GI.row(b);
    auto gh_row = GH.row(b);
    auto c = cache.row(b);
    for (std::size_t k = 0; k < H; ++k) {
      const Real r = sigm(gi_row[k] + gh_row[k]);
      const Real z = sigm(gi_row[H + k] + gh_row[H + k]);
      const Real n = std::tanh(gi_row[2 * H + k] + r * gh_row[2 * H + k]);
      c[k] = r;
      c[H + k] = z;
      c[2 * H + k] = n;
      y(b, k) = (1.0 - z) * n + z * Hp(b, k);
    }
  }
  const bool rg = g.requires_grad(gi) || g.requires_grad(gh) || g.requires_grad(h);
  return g.push(std::move(y), rg,
                [gi, gh, h, cache = std::move(cache)](Graph& g, std::uint32_t self) {
                  const Tensor& dy = g.grad_of(self);
                  const Tensor& GH = g.value(gh);
                  const Tensor& Hp = g.value(h);
                  const std::size_t B = Hp.rows();
                  const std::size_t H = Hp.cols();
                  Tensor* dgi = g.needs(gi.id) ? &g.grad_mut(gi.id) : nullptr;
                  Tensor* dgh = g.needs(gh.id) ? &g.grad_mut(gh.id) : nullptr;
                  Tensor* dh = g.needs(h.id) ? &g.grad_mut(h.id) : nullptr;
                  for (std::size_t b = 0; b < B; ++b) {
                    auto c = cache.row(b);
                    for (std::size_t k = 0; k < H; ++k) {
                      const Real r = c[k], z = c[H + k], n = c[2 * H + k];
                      const Real d = dy(b, k);
                      const Real dn_pre = d * (1.0 - z) * (1.0 - n * n);
                      const Real dz_pre = d * (Hp(b, k) - n) * z * (1.0 - z);
                      const Real dr_pre = dn_pre * GH(b, 2 * H + k) * r * (1.0 - r);
                      if (dgi) {
                        (*dgi)(b, k) += dr_pre;
                        (*dgi)(b, H + k) += dz_pre;
                        (*dgi)(b, 2 * H + k) += dn_pre;
                      }
                      if (dgh) {
                        (*dgh)(b, k) += dr_pre;
                        (*dgh)(b, H + k) += dz_pre;
                        (*dgh)(b, 2 * H + k) += dn_pre * r;
                      }
                      if (dh) (*dh)(b, k) += d * z;
                    }
                  }
                });
}

Var lstm_update(Graph& g, Var gi, Var gh, Var c) {
  const Tensor& GI = g.value(gi);
  const Tensor& GH = g.value(gh);
  const Tensor& C = g.value(c);
  const std::size_t B = C.rows();
  const std::size_t H = C.cols();
  require(GI.rows() == B && GI.cols() == 4 * H && GH.rows() == B && GH.cols() == 4 * H,
          "lstm_update", "gate projections must be [B x 4H]");
  // cache holds i | f | g | o | tanh(c') per row.
  Tensor cache = Tensor::matrix(B, 5 * H);
  Tensor y = Tensor::matrix(B, 2 * H);
  for (std::size_t b = 0; b < B; ++b) {
    auto a = GI.row(b);
    auto r = GH.row(b);
    auto k5 = cache.row(b);
    for (std::size_t k = 0; k < H; ++k) {
      const Real ig = sigm(a[k] + r[k]);
      const Real fg = sigm(a[H + k] + r[H + k]);
      const Real gg = std::tanh(a[2 * H + k] + r[2 * H + k]);
      const Real og = sigm(a[3 * H + k] + r[3 * H + k]);
      const Real cn = fg * C(b, k) + ig * gg;
      const Real tc = std::tanh(cn);
      k5[k] = ig;
      k5[H + k] = fg;
      k5[2 * H + k] = gg;
      k5[3 * H + k] = og;
      k5[4 * H + k] = tc;
      y(b, k) = og * tc;
      y(b, H + k) = cn;
    }
  }
  const bool rg = g.requires_grad(gi) || g.requires_grad(gh) || g.requires_grad(c);
  return g.push(std::move(y), rg,
                [gi, gh, c, cache = std::move(cache)](Graph& g, std::uint32_t self) {
                  const Tensor& dy = g.grad_of(self);
                  const Tensor& C = g.value(c);
                  const std::size_t B = C.rows();
                  const std::size_t H = C.cols();
                  Tensor* dgi = g.needs(gi.id) ? &g.grad_mut(gi.id) : nullptr;
                  Tensor* dgh = g.needs(gh.id) ? &g.grad_mut(gh.id) : nullptr;
                  Tensor* dc = g.needs(c.id) ? &g.grad_mut(c.id) : nullptr;
                  for (std::size_t b = 0; b < B; ++b) {
                    auto k5 = cache.row(b);
                    for (std::size_t k = 0; k < H; ++k) {
                      const Real ig = k5[k], fg = k5[H + k], gg = k5[2 * H + k],
                                 og = k5[3 * H + k], tc = k5[4 * H + k];
                      const Real dh = dy(b, k);
                      const Real dcn = dy(b, H + k) + dh * og * (1.0 - tc * tc);
                      const Real pre[4] = {dcn * gg * ig * (1.0 - ig),
                                           dcn * C(b, k) * fg * (1.0 - fg),
                                           dcn * ig * (1.0 - gg * gg),
                                           dh * tc * og * (1.0 - og)};
                      for (std::size_t q = 0; q < 4; ++q) {
                        if (dgi) (*dgi)(b, q * H + k) += pre[q];
                        if (dgh) (*dgh)(b, q * H + k) += pre[q];
                      }
                      if (dc) (*dc)(b, k) += dcn * fg;
                    }
                  }
                });
}

Var attention_weights(Graph& g, Var query, Var keys, Var score,
                      std::span<const std::uint8_t> valid, std::size_t steps) {
  const Tensor& Q = g.value(query);
  const Tensor& K = g.value(keys);
  const Tensor& S = g.value(score);
  const std::size_t B = Q.rows();
  const std::size_t A = Q.cols();
  const std::size_t T = steps;
  require(K.rows() == B * T && K.cols() == A, "attention_weights", "keys must be [B*T x A]");
  require(S.size() == A, "attention_weights", "score vector must have A entries");
  require(valid.size() == B * T, "attention_weights", "mask must have B*T entries");
  Tensor u = Tensor::matrix(B * T, A);
  Tensor y = Tensor::matrix(B, T);
  for (std::size_t b = 0; b < B; ++b) {
    Real best = -std::numeric_limits<Real>::infinity();
    bool any = false;
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t row = b * T + t;
      if (!valid[row]) continue;
      any = true;
      Real e = 0.0;
      for (std::size_t k = 0; k < A; ++k) {
        const Real v = std::tanh(K(row, k) + Q(b, k));
        u(row, k) = v;
        e += S[k] * v;
      }
      y(b, t) = e;
      best = std::max(best, e);
    }
    if (!any) throw std::invalid_argument("attention_weights: every source position is padding");
    Real total = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      if (!valid[b * T + t]) {
        y(b, t) = 0.0;
        continue;
      }
      y(b, t) = std::exp(y(b, t) - best);
      total += y(b, t);
    }
    for (std::size_t t = 0; t < T; ++t) y(b, t) /= total;
  }
  const bool rg = g.requires_grad(query) || g.requires_grad(keys) || g.requires_grad(score);
  return g.push(std::move(y), rg,
                [query, keys, score, T, u = std::move(u)](Graph& g, std::uint32_t self) {
                  const Tensor& dy = g.grad_of(self);
                  const Tensor& a = g.value(Var{self});
                  const Tensor& S = g.value(score);
                  const std::size_t B = a.rows();
                  const std::size_t A = S.size();
                  Tensor* dq = g.needs(query.id) ? &g.grad_mut(query.id) : nullptr;
                  Tensor* dk = g.needs(keys.id) ? &g.grad_mut(keys.id) : nullptr;
                  Tensor* ds = g.needs(score.id) ? &g.grad_mut(score.id) : nullptr;
                  for (std::size_t b = 0; b < B; ++b) {
                    Real dot = 0.0;
                    for (std::size_t t = 0; t < T; ++t) dot += a(b, t) * dy(b, t);
                    for (std::size_t t = 0; t < T; ++t) {
                      const Real w = a(b, t);
                      if (w == 0.0) continue;
                      const Real de = w * (dy(b, t) - dot);
                      const std::size_t row = b * T + t;
                      for (std::size_t k = 0; k < A; ++k) {
                        const Real uv = u(row, k);
                        const Real dpre = de * S[k] * (1.0 - uv * uv);
                        if (dk) (*dk)(row, k) += dpre;
                        if (dq) (*dq)(b, k) += dpre;
                        if (ds) (*ds)[k] += de * uv;
                      }
                    }
                  }
                });
}

Var weighted_sum(Graph& g, Var weights, Var memory) {
  const Tensor& W = g.value(weights);
  const Tensor& M = g.value(memory);
  const std::size_t B = W.rows();
  const std::size_t T = W.cols();
  require(M.rows() == B * T, "weighted_sum", "memory must be [B*T x D]");
  const std::size_t D = M.cols();
  Tensor y = Tensor::matrix(B, D);
  for (std::size_t b = 0; b < B; ++b) {
    auto out = y.row(b);
    for (std::size_t t = 0; t < T; ++t) {
      const Real w = W(b, t);
      if (w == 0.0) continue;
      auto m = M.row(b * T + t);
      for (std::size_t k = 0; k < D; ++k) out[k] += w * m[k];
    }
  }
  return g.push(std::move(y), g.requires_grad(weights) || g.requires_grad(memory),
                [weights, memory](Graph& g, std::uint32_t self) {
                  const Tensor& dy = g.grad_of(self);
                  const Tensor& W = g.value(weights);
                  const Tensor& M = g.value(memory);
                  const std::size_t B = W.rows();
                  const std::size_t T = W.cols();
                  const std::size_t D = M.cols();
                  Tensor* dw = g.needs(weights.id) ? &g.grad_mut(weights.id) : nullptr;
                  Tensor* dm = g.needs(memory.id) ? &g.grad_mut(memory.id) : nullptr;
                  for (std::size_t b = 0; b < B; ++b) {
                    auto d = dy.row(b);
                    for (std::size_t t = 0; t < T; ++t) {
                      auto m = M.row(b * T + t);
                      if (dw) {
                        Real acc = 0.0;
                        for (std::size_t k = 0; k < D; ++k) acc += d[k] * m[k];
                        (*dw)(b, t) += acc;
                      }
                      if (dm) {
                        const Real w = W(b, t);
                        auto out = dm->row(b * T + t);
                        for (std::size_t k = 0; k < D; ++k) out[k] += w * d[k];
                      }
                    }
                  }
                });
}

Var cross_entropy_masked(Graph& g, Var logits, std::span<const int> targets, int ignore_index) {
  const Tensor& L = g.value(logits);
  const std::size_t N = L.rows();
  const std::size_t V = L.cols();
  require(targets.size() == N, "cross_entropy_masked", "one target per logit row required");
  // probs doubles as the cached softmax for the backward pass.
  Tensor probs = Tensor::matrix(N, V);
  Real total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const int t = targets[i];
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= V) {
      throw std::out_of_range("cross_entropy_masked: target " + std::to_string(t) +
                              " outside " + std::to_string(V) + " classes");
    }
    auto row = L.row(i);
    const Real mx = *std::max_element(row.begin(), row.end());
    Real z = 0.0;
    for (std::size_t k = 0; k < V; ++k) {
      probs(i, k) = std::exp(row[k] - mx);
      z += probs(i, k);
    }
    for (std::size_t k = 0; k < V; ++k) probs(i, k) /= z;
    total += -(row[static_cast<std::size_t>(t)] - mx - std::log(z));
    ++counted;
  }
  const Real loss = counted ? total / static_cast<Real>(counted) : 0.0;
  std::vector<int> tg(targets.begin(), targets.end());
  return g.push(Tensor::scalar(loss), g.requires_grad(logits) && counted > 0,
                [logits, tg, ignore_index, counted, probs = std::move(probs)](Graph& g,
                                                                              std::uint32_t self) {
                  const Real d = g.grad_of(self)[0] / static_cast<Real>(counted);
                  Tensor& dl = g.grad_mut(logits.id);
                  for (std::size_t i = 0; i < tg.size(); ++i) {
                    if (tg[i] == ignore_index) continue;
                    auto p = probs.row(i);
                    auto out = dl.row(i);
                    for (std::size_t k = 0; k < p.size(); ++k) out[k] += d * p[k];
                    out[static_cast<std::size_t>(tg[i])] -= d;
                  }
                });
}

}  // namespace ops

}  // namespace lrmt
