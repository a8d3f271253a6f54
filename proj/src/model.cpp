#include "lrmt/model.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

namespace lrmt {

std::string_view arch_name(Arch a) {
  switch (a) {
    case Arch::lstm: return "lstm";
    case Arch::gru: return "gru";
    case Arch::abgru: return "abgru";
  }
  return "?";
}

Arch arch_from_name(std::string_view name) {
  if (name == "lstm") return Arch::lstm;
  if (name == "gru") return Arch::gru;
  if (name == "abgru") return Arch::abgru;
  throw std::invalid_argument("unknown architecture '" + std::string(name) +
                              "' (expected lstm, gru or abgru)");
}

Tensor init_uniform(const std::vector<std::size_t>& shape, std::uint64_t seed, std::string_view name,
                    Real range) {
  Rng rng(derive_seed(seed, name));
  Tensor t(shape, 0.0);
  for (Real& v : t.storage()) v = rng.uniform(-range, range);
  return t;
}

namespace {

Parameter weight(const std::string& name, std::vector<std::size_t> shape, std::uint64_t seed) {
  return Parameter(name, init_uniform(shape, seed, name));
}

Parameter zeros(const std::string& name, std::vector<std::size_t> shape) {
  return Parameter(name, Tensor(std::move(shape), 0.0));
}

Linear make_linear(const std::string& prefix, std::size_t in, std::size_t out, std::uint64_t seed,
                   bool bias = true) {
  Linear l;
  l.weight = weight(prefix + ".weight", {out, in}, seed);
  l.has_bias = bias;
  if (bias) l.bias = zeros(prefix + ".bias", {out});
  return l;
}

void append_cell(ParameterRefs& out, RecurrentCell& c) {
  out.insert(out.end(), {&c.w_ih, &c.w_hh, &c.b_ih, &c.b_hh});
}

std::vector<int> column(const Batch& b, bool source, std::size_t t) {
  std::vector<int> ids(b.rows);
  for (std::size_t r = 0; r < b.rows; ++r) ids[r] = source ? b.src(r, t) : b.tgt(r, t);
  return ids;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace

RecurrentCell make_cell(CellKind kind, std::size_t input, std::size_t hidden, std::uint64_t seed,
                        const std::string& prefix) {
  RecurrentCell c;
  c.kind = kind;
  c.hidden = hidden;
  const std::size_t rows = c.gates() * hidden;
  c.w_ih = weight(prefix + ".w_ih", {rows, input}, seed);
  c.w_hh = weight(prefix + ".w_hh", {rows, hidden}, seed);
  c.b_ih = zeros(prefix + ".b_ih", {rows});
  c.b_hh = zeros(prefix + ".b_hh", {rows});
  c.pruned.assign(hidden, 0);
  return c;
}

void RecurrentCell::prune_unit(std::size_t unit) {
  if (unit >= hidden) throw std::out_of_range("prune_unit: unit " + std::to_string(unit) + " >= " + std::to_string(hidden));
  for (std::size_t g = 0; g < gates(); ++g) {
    const std::size_t r = g * hidden + unit;
    for (Parameter* p : {&w_ih, &w_hh, &b_ih, &b_hh}) {
      for (Real& v : p->value.row(r)) v = 0.0;
      p->freeze_row(r);
    }
  }
  pruned[unit] = 1;
}

std::vector<std::size_t> RecurrentCell::pruned_units() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pruned.size(); ++i) {
    if (pruned[i]) out.push_back(i);
  }
  return out;
}

CellVars bind_cell(Graph& g, const RecurrentCell& cell) {
  auto& c = const_cast<RecurrentCell&>(cell);
  return {g.param(c.w_ih), g.param(c.w_hh), g.param(c.b_ih), g.param(c.b_hh)};
}

CellStep cell_step(Graph& g, const RecurrentCell& cell, const CellVars& vars, Var x, Var h, Var c) {
  const Var gi = ops::linear(g, x, vars.w_ih, vars.b_ih);
  const Var gh = ops::linear(g, h, vars.w_hh, vars.b_hh);
  if (cell.kind == CellKind::gru) return {ops::gru_update(g, gi, gh, h), Var{}};
  const Var hc = ops::lstm_update(g, gi, gh, c);
  return {ops::slice_cols(g, hc, 0, cell.hidden), ops::slice_cols(g, hc, cell.hidden, cell.hidden)};
}

// --- construction --------------------------------------------------------------

Seq2SeqModel::Seq2SeqModel(const ModelDims& dims, std::uint64_t seed) : dims_(dims) {
  if (dims.source_vocab == 0) {
    throw std::invalid_argument("source vocabulary size must be positive");
  }
  if (dims.target_vocab == 0 || dims.embedding == 0 || dims.hidden == 0 || dims.attention == 0) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (dims.dropout < 0.0 || dims.dropout >= 1.0) throw std::invalid_argument("dropout must be in [0, 1)");
  const std::size_t E = dims.embedding;
  const std::size_t H = dims.hidden;
  src_embedding_ = weight("src_embedding", {dims.source_vocab, E}, seed);
  const CellKind kind = dims.arch == Arch::lstm ? CellKind::lstm : CellKind::gru;
  enc_fwd_ = make_cell(kind, E, H, seed, "enc_fwd");
  if (dims.arch == Arch::abgru) {
    enc_bwd_ = make_cell(CellKind::gru, E, H, seed, "enc_bwd");
    init_proj_ = make_linear("init_proj", 2 * H, H, seed);
  }
  init_decoder(seed);
}

void Seq2SeqModel::init_decoder(std::uint64_t seed) {
  const std::size_t E = dims_.embedding;
  const std::size_t H = dims_.hidden;
  const std::size_t A = dims_.attention;
  const std::size_t V = dims_.target_vocab;
  tgt_embedding_ = weight("tgt_embedding", {V, E}, seed);
  switch (dims_.arch) {
    case Arch::lstm:
      dec_ = make_cell(CellKind::lstm, E, H, seed, "dec");
      out_ = make_linear("out", H, V, seed);
      break;
    case Arch::gru:
      dec_ = make_cell(CellKind::gru, E + H, H, seed, "dec");
      out_ = make_linear("out", E + 2 * H, V, seed);
      break;
    case Arch::abgru:
      attn_query_ = weight("attn.query", {A, H}, seed);
      attn_key_ = weight("attn.key", {A, 2 * H}, seed);
      attn_bias_ = zeros("attn.bias", {A});
      attn_score_ = weight("attn.score", {1, A}, seed);
      dec_ = make_cell(CellKind::gru, E + 2 * H, H, seed, "dec");
      out_ = make_linear("out", E + 2 * H + H, V, seed);
      break;
  }
}

std::size_t Seq2SeqModel::analysis_width() const noexcept {
  return dims_.arch == Arch::abgru ? 2 * dims_.hidden : dims_.hidden;
}

ParameterRefs Seq2SeqModel::encoder_parameters() {
  ParameterRefs out{&src_embedding_};
  append_cell(out, enc_fwd_);
  if (dims_.arch == Arch::abgru) {
    append_cell(out, enc_bwd_);
    out.insert(out.end(), {&init_proj_.weight, &init_proj_.bias});
  }
  return out;
}

ParameterRefs Seq2SeqModel::decoder_parameters() {
  ParameterRefs out{&tgt_embedding_};
  if (dims_.arch == Arch::abgru) out.insert(out.end(), {&attn_query_, &attn_key_, &attn_bias_, &attn_score_});
  append_cell(out, dec_);
  out.insert(out.end(), {&out_.weight, &out_.bias});
  return out;
}

ParameterRefs Seq2SeqModel::parameters() {
  ParameterRefs out = encoder_parameters();
  ParameterRefs dec = decoder_parameters();
  out.insert(out.end(), dec.begin(), dec.end());
  return out;
}

std::vector<const Parameter*> Seq2SeqModel::parameters() const {
  auto refs = const_cast<Seq2SeqModel*>(this)->parameters();
  return {refs.begin(), refs.end()};
}

Parameter* Seq2SeqModel::find(std::string_view name) {
  for (Parameter* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

// --- binding ---------------------------------------------------------------------

Seq2SeqModel::Binding::Binding(Graph& g, Seq2SeqModel& m) {
  src_embedding = g.param(m.src_embedding_);
  tgt_embedding = g.param(m.tgt_embedding_);
  enc_fwd = bind_cell(g, m.enc_fwd_);
  dec = bind_cell(g, m.dec_);
  out_w = g.param(m.out_.weight);
  out_b = g.param(m.out_.bias);
  if (m.dims_.arch == Arch::abgru) {
    enc_bwd = bind_cell(g, m.enc_bwd_);
    init_w = g.param(m.init_proj_.weight);
    init_b = g.param(m.init_proj_.bias);
    attn_query = g.param(m.attn_query_);
    attn_key = g.param(m.attn_key_);
    attn_bias = g.param(m.attn_bias_);
    attn_score = g.param(m.attn_score_);
  }
}

Seq2SeqModel::Binding::Binding(Graph& g, const Seq2SeqModel& m) {
  auto c = [&g](const Parameter& p) { return g.constant_ref(p.value); };
  auto cell = [&](const RecurrentCell& rc) {
    return CellVars{c(rc.w_ih), c(rc.w_hh), c(rc.b_ih), c(rc.b_hh)};
  };
  src_embedding = c(m.src_embedding_);
  tgt_embedding = c(m.tgt_embedding_);
  enc_fwd = cell(m.enc_fwd_);
  dec = cell(m.dec_);
  out_w = c(m.out_.weight);
  out_b = c(m.out_.bias);
  if (m.dims_.arch == Arch::abgru) {
    enc_bwd = cell(m.enc_bwd_);
    init_w = c(m.init_proj_.weight);
    init_b = c(m.init_proj_.bias);
    attn_query = c(m.attn_query_);
    attn_key = c(m.attn_key_);
    attn_bias = c(m.attn_bias_);
    attn_score = c(m.attn_score_);
  }
}

// --- forward ---------------------------------------------------------------------

EncoderOutput Seq2SeqModel::encode(Graph& g, Binding& bind, const Batch& batch, Mode mode,
                                   Rng* rng) const {
  if (batch.rows == 0 || batch.source_len == 0) throw std::invalid_argument("encode: empty batch");
  const std::size_t B = batch.rows;
  const std::size_t T = batch.source_len;
  const std::size_t H = dims_.hidden;
  const bool drop = mode == Mode::train && dims_.dropout > 0.0;
  if (drop && rng == nullptr) throw std::invalid_argument("encode: training mode needs an rng");

  std::vector<Var> inputs(T);
  std::vector<std::vector<std::uint8_t>> keep(T, std::vector<std::uint8_t>(B, 0));
  for (std::size_t t = 0; t < T; ++t) {
    const auto ids = column(batch, true, t);
    Var x = ops::gather_rows(g, bind.src_embedding, ids);
    if (drop) x = ops::dropout(g, x, dims_.dropout, *rng);
    inputs[t] = x;
    for (std::size_t b = 0; b < B; ++b) keep[t][b] = t < batch.source_lengths[b] ? 1 : 0;
  }

  EncoderOutput out;
  out.steps = T;
  out.rows = B;
  out.valid.assign(B * T, 0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < batch.source_lengths[b]; ++t) out.valid[b * T + t] = 1;
  }

  const Var zero = g.constant(Tensor::matrix(B, H));
  std::vector<Var> fwd(T);
  Var h = zero;
  Var c = zero;
  for (std::size_t t = 0; t < T; ++t) {
    const CellStep s = cell_step(g, enc_fwd_, bind.enc_fwd, inputs[t], h, c);
    h = ops::mask_blend(g, s.h, h, keep[t]);
    if (s.c.valid()) c = ops::mask_blend(g, s.c, c, keep[t]);
    fwd[t] = h;
  }

  if (dims_.arch != Arch::abgru) {
    out.states = std::move(fwd);
    out.init = h;
    if (dims_.arch == Arch::lstm) out.init_cell = c;
    return out;
  }

  std::vector<Var> bwd(T);
  Var hb = zero;
  for (std::size_t t = T; t-- > 0;) {
    const CellStep s = cell_step(g, enc_bwd_, bind.enc_bwd, inputs[t], hb, Var{});
    hb = ops::mask_blend(g, s.h, hb, keep[t]);
    bwd[t] = hb;
  }
  out.states.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    const Var parts[] = {fwd[t], bwd[t]};
    out.states[t] = ops::concat_cols(g, parts);
  }
  const Var finals[] = {h, bwd[0]};
  out.init = ops::tanh(g, ops::linear(g, ops::concat_cols(g, finals), bind.init_w, bind.init_b));
  out.memory = ops::stack_batch_major(g, out.states);
  out.keys = ops::linear(g, out.memory, bind.attn_key, bind.attn_bias);
  return out;
}

DecoderState Seq2SeqModel::initial_state(const EncoderOutput& enc) const {
  return DecoderState{enc.init, enc.init_cell};
}

StepOutput Seq2SeqModel::decode_step(Graph& g, Binding& bind, const EncoderOutput& enc,
                                     std::span<const int> prev_tokens, const DecoderState& prev,
                                     Mode mode, Rng* rng) const {
  if (prev_tokens.size() != enc.rows) throw std::invalid_argument("decode_step: token count != batch rows");
  if (g.value(prev.hidden).cols() != dims_.hidden || g.value(prev.hidden).rows() != enc.rows) {
    throw std::invalid_argument("decode_step: state width " + std::to_string(g.value(prev.hidden).cols()) +
                                " does not match hidden size " + std::to_string(dims_.hidden));
  }
  const bool drop = mode == Mode::train && dims_.dropout > 0.0;
  if (drop && rng == nullptr) throw std::invalid_argument("decode_step: training mode needs an rng");

  Var emb = ops::gather_rows(g, bind.tgt_embedding, prev_tokens);
  if (drop) emb = ops::dropout(g, emb, dims_.dropout, *rng);

  StepOutput out;
  Var features;
  switch (dims_.arch) {
    case Arch::lstm: {
      const CellStep s = cell_step(g, dec_, bind.dec, emb, prev.hidden, prev.cell);
      out.state = {s.h, s.c};
      features = s.h;
      break;
    }
    case Arch::gru: {
      const Var in[] = {emb, enc.init};
      const CellStep s = cell_step(g, dec_, bind.dec, ops::concat_cols(g, in), prev.hidden, Var{});
      out.state = {s.h, Var{}};
      const Var f[] = {emb, s.h, enc.init};
      features = ops::concat_cols(g, f);
      break;
    }
    case Arch::abgru: {
      const Var query = ops::linear(g, prev.hidden, bind.attn_query);
      out.attention = ops::attention_weights(g, query, enc.keys, bind.attn_score, enc.valid, enc.steps);
      out.context = ops::weighted_sum(g, out.attention, enc.memory);
      const Var in[] = {emb, out.context};
      const CellStep s = cell_step(g, dec_, bind.dec, ops::concat_cols(g, in), prev.hidden, Var{});
      out.state = {s.h, Var{}};
      const Var f[] = {emb, out.context, s.h};
      features = ops::concat_cols(g, f);
      break;
    }
  }
  if (drop) features = ops::dropout(g, features, dims_.dropout, *rng);
  out.logits = ops::linear(g, features, bind.out_w, bind.out_b);
  return out;
}

Var Seq2SeqModel::forward_teacher_forced(Graph& g, const Batch& batch, double tf_ratio, Rng& rng,
                                         Mode mode) const {
  if (tf_ratio < 0.0 || tf_ratio > 1.0) throw std::invalid_argument("tf_ratio must be in [0, 1]");
  if (batch.target_len < 2) throw std::invalid_argument("targets need at least sos and eos");
  Binding bind = mode == Mode::train ? Binding(g, const_cast<Seq2SeqModel&>(*this)) : Binding(g, *this);
  const EncoderOutput enc = encode(g, bind, batch, mode, &rng);
  DecoderState state = initial_state(enc);
  std::vector<int> prev = column(batch, false, 0);
  std::vector<Var> logits;
  logits.reserve(batch.target_len - 1);
  for (std::size_t t = 1; t < batch.target_len; ++t) {
    StepOutput step = decode_step(g, bind, enc, prev, state, mode, &rng);
    logits.push_back(step.logits);
    state = step.state;
    if (t + 1 < batch.target_len) {
      prev = rng.uniform() < tf_ratio ? column(batch, false, t) : argmax_rows(g.value(step.logits));
    }
  }
  return ops::stack_rows(g, logits);
}

Var Seq2SeqModel::loss(Graph& g, const Batch& batch, double tf_ratio, Rng& rng, Mode mode) const {
  const Var logits = forward_teacher_forced(g, batch, tf_ratio, rng, mode);
  std::vector<int> targets;
  targets.reserve((batch.target_len - 1) * batch.rows);
  for (std::size_t t = 1; t < batch.target_len; ++t) {
    for (std::size_t b = 0; b < batch.rows; ++b) targets.push_back(batch.tgt(b, t));
  }
  return ops::cross_entropy_masked(g, logits, targets, Vocabulary::kPad);
}

std::vector<std::vector<int>> Seq2SeqModel::greedy_decode(const Batch& batch, std::size_t max_len) const {
  Graph g;
  Binding bind(g, *this);
  const EncoderOutput enc = encode(g, bind, batch, Mode::eval, nullptr);
  DecoderState state = initial_state(enc);
  std::vector<int> prev(batch.rows, Vocabulary::kSos);
  std::vector<std::vector<int>> out(batch.rows);
  std::vector<std::uint8_t> done(batch.rows, 0);
  std::size_t remaining = batch.rows;
  for (std::size_t step = 0; step < max_len && remaining > 0; ++step) {
    StepOutput s = decode_step(g, bind, enc, prev, state, Mode::eval, nullptr);
    state = s.state;
    prev = argmax_rows(g.value(s.logits));
    for (std::size_t b = 0; b < batch.rows; ++b) {
      if (done[b]) continue;
      if (prev[b] == Vocabulary::kEos) {
        done[b] = 1;
        --remaining;
      } else {
        out[b].push_back(prev[b]);
      }
    }
  }
  return out;
}

std::vector<Tensor> Seq2SeqModel::encoder_activations(const Batch& batch) const {
  Graph g;
  Binding bind(g, *this);
  const EncoderOutput enc = encode(g, bind, batch, Mode::eval, nullptr);
  const std::size_t N = analysis_width();
  std::vector<Tensor> out;
  for (std::size_t b = 0; b < batch.rows; ++b) {
    const std::size_t len = batch.source_lengths[b];
    Tensor m = Tensor::matrix(len, N);
    for (std::size_t t = 0; t < len; ++t) {
      auto src = g.value(enc.states[t]).row(b);
      std::copy(src.begin(), src.end(), m.row(t).begin());
    }
    out.push_back(std::move(m));
  }
  return out;
}

// --- transfer helpers ------------------------------------------------------------

void Seq2SeqModel::freeze_encoder() {
  for (Parameter* p : encoder_parameters()) p->frozen = true;
}

bool Seq2SeqModel::encoder_frozen() const {
  for (Parameter* p : const_cast<Seq2SeqModel*>(this)->encoder_parameters()) {
    if (!p->frozen) return false;
  }
  return true;
}

void Seq2SeqModel::rebind_decoder(std::size_t target_vocab, std::uint64_t seed) {
  if (target_vocab == 0) throw std::invalid_argument("target vocabulary must be non-empty");
  dims_.target_vocab = target_vocab;
  init_decoder(seed);
}

void Seq2SeqModel::prune_neurons(std::span<const std::size_t> neurons) {
  const std::size_t H = dims_.hidden;
  const std::size_t N = analysis_width();
  for (std::size_t k : neurons) {
    if (k >= N) {
      throw std::out_of_range("neuron " + std::to_string(k) + " outside analysis width " + std::to_string(N));
    }
  }
  for (std::size_t k : neurons) {
    if (k < H) {
      enc_fwd_.prune_unit(k);
    } else {
      enc_bwd_.prune_unit(k - H);
    }
  }
}

// --- digest ----------------------------------------------------------------------

namespace {

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

}  // namespace

std::uint64_t parameter_digest(std::span<const Parameter* const> params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Parameter* p : params) {
    fnv(h, p->name.data(), p->name.size());
    for (auto e : p->value.shape()) fnv(h, &e, sizeof e);
    fnv(h, p->value.storage().data(), p->value.size() * sizeof(Real));
    const std::uint8_t flags[2] = {p->trainable, p->frozen};
    fnv(h, flags, 2);
    fnv(h, p->frozen_rows.data(), p->frozen_rows.size());
  }
  return h;
}

std::uint64_t parameter_digest(const ParameterRefs& params) {
  std::vector<const Parameter*> c(params.begin(), params.end());
  return parameter_digest(std::span<const Parameter* const>(c));
}

}  // namespace lrmt
