#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "lrmt/tensor.hpp"

namespace lrmt {

class Graph;

/// Handle to a node on a Graph tape.
struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const noexcept { return id != UINT32_MAX; }
};

/// Reverse-mode tape. Ops append nodes in execution order; backward() walks
/// them in reverse. Parameter leaves accumulate into Parameter::grad, frozen
/// ones are treated as constants.
class Graph {
public:
  using Backward = std::function<void(Graph&, std::uint32_t)>;

  Var constant(Tensor value);
  /// Constant leaf that aliases `value`; it must outlive the graph's use.
  Var constant_ref(const Tensor& value);
  /// Leaf aliasing p.value. Gradients reach p.grad only if p is updatable.
  Var param(Parameter& p);

  const Tensor& value(Var v) const { return value_of(v.id); }
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Fill gradients of every reachable leaf with d(loss)/d(leaf). `loss`
  /// must be a one-element node.
  void backward(Var loss);

  void clear();

  // Used by op implementations.
  Var push(Tensor value, bool requires_grad, Backward back);
  const Tensor& value_of(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  Tensor& grad_mut(std::uint32_t id);
  const Tensor& grad_of(std::uint32_t id) const { return nodes_[id].grad; }
  bool needs(std::uint32_t id) const { return nodes_[id].requires_grad; }

private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward back;
    const Tensor* external = nullptr;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

namespace ops {

/// x[B x in] * W[out x in]^T + b[out]; `bias` may be invalid.
Var linear(Graph& g, Var x, Var weight, Var bias = {});
Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, Real s);
Var tanh(Graph& g, Var a);
Var sigmoid(Graph& g, Var a);
/// Sum of all elements, as a one-element tensor.
Var sum(Graph& g, Var a);

Var concat_cols(Graph& g, std::span<const Var> parts);
Var slice_cols(Graph& g, Var a, std::size_t begin, std::size_t width);
/// Vertical concatenation: part k occupies rows [k*B, (k+1)*B).
Var stack_rows(Graph& g, std::span<const Var> parts);
/// Interleave T per-step [B x D] blocks into [B*T x D] with row b*T + t.
Var stack_batch_major(Graph& g, std::span<const Var> steps);

/// Row lookup: out[i] = table[ids[i]].
Var gather_rows(Graph& g, Var table, std::span<const int> ids);

/// Per-row select: out[b] = keep[b] ? fresh[b] : prev[b].
Var mask_blend(Graph& g, Var fresh, Var prev, std::span<const std::uint8_t> keep);

/// Inverted dropout with a mask drawn from `rng`.
Var dropout(Graph& g, Var a, Real rate, Rng& rng);

/// GRU state update from input and recurrent projections (gate order r, z, n):
///   r = sig(gi_r + gh_r), z = sig(gi_z + gh_z), n = tanh(gi_n + r * gh_n),
///   h' = (1 - z) * n + z * h.
Var gru_update(Graph& g, Var gi, Var gh, Var h);

/// LSTM update, gate order i, f, g, o. Returns [B x 2H] laid out as (h' | c').
Var lstm_update(Graph& g, Var gi, Var gh, Var c);

/// Additive attention weights. keys[B*T x A] (row b*T + t) holds the
/// encoder-side energy projection, query[B x A] the decoder-side one, score
/// is [1 x A]. Returns softmax over t of score . tanh(keys + query); positions
/// with valid == 0 get weight exactly 0.
Var attention_weights(Graph& g, Var query, Var keys, Var score,
                      std::span<const std::uint8_t> valid, std::size_t steps);

/// out[b] = sum_t weights[b, t] * memory[b*T + t].
Var weighted_sum(Graph& g, Var weights, Var memory);

/// Mean of -log softmax(logits[i])[targets[i]] over rows whose target is not
/// `ignore_index`. All rows ignored gives 0 with zero gradient.
Var cross_entropy_masked(Graph& g, Var logits, std::span<const int> targets, int ignore_index);

}  // namespace ops

}  // namespace lrmt
