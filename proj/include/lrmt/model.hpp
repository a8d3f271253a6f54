#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lrmt/autodiff.hpp"
#include "lrmt/tensor.hpp"
#include "lrmt/text.hpp"

namespace lrmt {

enum class Arch { lstm, gru, abgru };

std::string_view arch_name(Arch a);
Arch arch_from_name(std::string_view name);

struct ModelDims {
  Arch arch = Arch::abgru;
  std::size_t source_vocab = 0;
  std::size_t target_vocab = 0;
  std::size_t embedding = 300;
  /// Per-direction hidden size.
  std::size_t hidden = 512;
  /// Inner width of the attention energy layer.
  std::size_t attention = 512;
  double dropout = 0.5;

  bool operator==(const ModelDims&) const = default;
};

/// Weight matrix [out x in] with optional bias [out].
struct Linear {
  Parameter weight;
  Parameter bias;
  bool has_bias = true;
};

enum class CellKind { lstm, gru };

/// Single-layer recurrent cell. Input and recurrent weights are stacked by
/// gate: rows [g*H, (g+1)*H) belong to gate g.
struct RecurrentCell {
  CellKind kind = CellKind::gru;
  std::size_t hidden = 0;
  Parameter w_ih;
  Parameter w_hh;
  Parameter b_ih;
  Parameter b_hh;
  /// 1 for units whose incoming weights are pruned.
  std::vector<std::uint8_t> pruned;

  std::size_t gates() const noexcept { return kind == CellKind::lstm ? 4 : 3; }
  /// Zero and freeze every incoming row and bias entry of `unit`.
  void prune_unit(std::size_t unit);
  std::vector<std::size_t> pruned_units() const;
};

/// Bound graph handles for a cell's parameters during one forward pass.
struct CellVars {
  Var w_ih, w_hh, b_ih, b_hh;
};

struct EncoderOutput {
  /// Per source position t: [B x N] encoder state (N = analysis width).
  std::vector<Var> states;
  /// States stacked batch-major [B*T x N]; built for attention models.
  Var memory;
  /// Encoder-side attention projection of `memory` [B*T x A].
  Var keys;
  /// Initial decoder state z [B x H].
  Var init;
  /// LSTM only: initial decoder cell state.
  Var init_cell;
  std::size_t steps = 0;
  std::size_t rows = 0;
  /// [B*T] 1 for real (non-pad) source positions.
  std::vector<std::uint8_t> valid;
};

struct DecoderState {
  Var hidden;
  Var cell;  // LSTM only
};

struct StepOutput {
  DecoderState state;
  Var logits;
  /// A-BGRU only: attention weights [B x T] and weighted source vector [B x 2H].
  Var attention;
  Var context;
};

enum class Mode { train, eval };

/// Encoder-decoder translation model: LSTM, GRU with context reinjection, or
/// attention over a bidirectional GRU encoder.
class Seq2SeqModel {
public:
  Seq2SeqModel() = default;
  Seq2SeqModel(const ModelDims& dims, std::uint64_t seed);

  const ModelDims& dims() const noexcept { return dims_; }
  Arch arch() const noexcept { return dims_.arch; }
  /// Width of the per-token encoder state seen by the analysis layer.
  std::size_t analysis_width() const noexcept;

  /// All parameters in a fixed canonical order.
  ParameterRefs parameters();
  std::vector<const Parameter*> parameters() const;
  /// Source embedding + encoder cells (+ init projection for A-BGRU).
  ParameterRefs encoder_parameters();
  ParameterRefs decoder_parameters();

  Parameter* find(std::string_view name);

  /// Per-pass binding of parameters onto a graph; create once per forward.
  class Binding;

  EncoderOutput encode(Graph& g, Binding& bind, const Batch& batch, Mode mode, Rng* rng) const;
  StepOutput decode_step(Graph& g, Binding& bind, const EncoderOutput& enc,
                         std::span<const int> prev_tokens, const DecoderState& prev, Mode mode,
                         Rng* rng) const;
  DecoderState initial_state(const EncoderOutput& enc) const;

  /// Logits for every target position after sos, stacked step-major
  /// ([(Tt-1)*B x V], row (t-1)*B + b). With probability tf_ratio per step the
  /// gold previous token is fed, otherwise the model's own argmax.
  Var forward_teacher_forced(Graph& g, const Batch& batch, double tf_ratio, Rng& rng,
                             Mode mode) const;

  /// Teacher-forced loss on a batch (mean cross-entropy, pad ignored).
  Var loss(Graph& g, const Batch& batch, double tf_ratio, Rng& rng, Mode mode) const;

  /// Greedy argmax decoding, one output per batch row, sos/eos stripped.
  std::vector<std::vector<int>> greedy_decode(const Batch& batch, std::size_t max_len) const;

  /// Per-row encoder states at real source positions ([len x N] each).
  std::vector<Tensor> encoder_activations(const Batch& batch) const;

  void freeze_encoder();
  bool encoder_frozen() const;

  /// Fresh decoder-side parameters for a new target vocabulary. Initialisation
  /// depends only on (seed, parameter name), so the encoder is untouched.
  void rebind_decoder(std::size_t target_vocab, std::uint64_t seed);

  /// Prune analysis neurons: k < H maps to forward unit k, k >= H (A-BGRU) to
  /// backward unit k - H.
  void prune_neurons(std::span<const std::size_t> neurons);

  RecurrentCell& encoder_cell() { return enc_fwd_; }
  RecurrentCell& encoder_backward_cell() { return enc_bwd_; }
  const RecurrentCell& encoder_cell() const { return enc_fwd_; }
  const RecurrentCell& encoder_backward_cell() const { return enc_bwd_; }

private:
  void init_decoder(std::uint64_t seed);

  ModelDims dims_;
  Parameter src_embedding_;
  Parameter tgt_embedding_;
  RecurrentCell enc_fwd_;
  RecurrentCell enc_bwd_;   // A-BGRU only
  Linear init_proj_;        // A-BGRU only: [2H -> H]
  Parameter attn_query_;    // A-BGRU only: [A x H], decoder-state part of the energy layer
  Parameter attn_key_;      // A-BGRU only: [A x 2H], encoder-state part
  Parameter attn_bias_;     // [A]
  Parameter attn_score_;    // [1 x A]
  RecurrentCell dec_;
  Linear out_;
};

class Seq2SeqModel::Binding {
public:
  Binding(Graph& g, Seq2SeqModel& model);
  Binding(Graph& g, const Seq2SeqModel& model);

  Var src_embedding, tgt_embedding;
  CellVars enc_fwd, enc_bwd, dec;
  Var init_w, init_b;
  Var attn_query, attn_key, attn_bias, attn_score;
  Var out_w, out_b;
};

/// Uniform [-0.08, 0.08] draw for a tensor, seeded from (seed, name).
Tensor init_uniform(const std::vector<std::size_t>& shape, std::uint64_t seed, std::string_view name,
                    Real range = 0.08);

/// Run one cell step on the graph; `state` carries (h) or (h, c).
struct CellStep {
  Var h;
  Var c;
};
CellStep cell_step(Graph& g, const RecurrentCell& cell, const CellVars& vars, Var x, Var h, Var c);
CellVars bind_cell(Graph& g, const RecurrentCell& cell);

RecurrentCell make_cell(CellKind kind, std::size_t input, std::size_t hidden, std::uint64_t seed,
                        const std::string& prefix);

/// Byte-level FNV-1a digest of a parameter list (values, flags, row masks).
std::uint64_t parameter_digest(std::span<const Parameter* const> params);
std::uint64_t parameter_digest(const ParameterRefs& params);

}  // namespace lrmt
