#include "lrmt/training.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <map>

namespace lrmt {

using nlohmann::json;

namespace {

template <class T>
T get_as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(key, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        throw ConfigError(key, "expected a non-negative integer");
      }
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(key, "expected a number");
      return v.get<T>();
    } else {
      if (!v.is_string()) throw ConfigError(key, "expected a string");
      return v.get<T>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(key, e.what());
  }
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const char* key, const char* what) { throw ConfigError(key, what); };
  if (layers != 1) fail("layers", "only single-layer recurrent networks are supported");
  if (embedding == 0) fail("embedding", "must be positive");
  if (hidden == 0) fail("hidden", "must be positive");
  if (max_epochs == 0) fail("max_epochs", "must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout", "must be in [0, 1)");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr", "must be positive");
  if (batch_size == 0) fail("batch_size", "must be positive");
  if (!(l2 >= 0.0) || !std::isfinite(l2)) fail("l2", "must be non-negative");
  if (!(clip_norm > 0.0)) fail("clip_norm", "must be positive");
  if (!(tf_ratio >= 0.0 && tf_ratio <= 1.0)) fail("tf_ratio", "must be in [0, 1]");
  if (max_len == 0) fail("max_len", "must be positive");
  if (min_freq == 0) fail("min_freq", "must be at least 1");
  if (!(valid_fraction > 0.0 && valid_fraction < 1.0)) fail("valid_fraction", "must be in (0, 1)");
}

ModelDims TrainConfig::dims(std::size_t source_vocab, std::size_t target_vocab) const {
  ModelDims d;
  d.arch = arch;
  d.source_vocab = source_vocab;
  d.target_vocab = target_vocab;
  d.embedding = embedding;
  d.hidden = hidden;
  d.attention = attention == 0 ? hidden : attention;
  d.dropout = dropout;
  return d;
}

json TrainConfig::to_json() const {
  return json{{"arch", std::string(arch_name(arch))},
              {"embedding", embedding},
              {"layers", layers},
              {"hidden", hidden},
              {"attention", attention},
              {"max_epochs", max_epochs},
              {"patience", patience},
              {"dropout", dropout},
              {"lr", lr},
              {"batch_size", batch_size},
              {"l2", l2},
              {"clip_norm", clip_norm},
              {"tf_ratio", tf_ratio},
              {"seed", seed},
              {"max_len", max_len},
              {"min_freq", min_freq},
              {"valid_fraction", valid_fraction},
              {"language_tokens", language_tokens},
              {"multitask_freeze_encoder", multitask_freeze_encoder}};
}

TrainConfig TrainConfig::from_json(const json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::from_json(const json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("<root>", "expected a JSON object");
  using Setter = std::function<void(TrainConfig&, const json&, const std::string&)>;
  static const std::map<std::string, Setter> setters = {
      {"arch",
       [](TrainConfig& t, const json& v, const std::string& k) {
         try {
           t.arch = arch_from_name(get_as<std::string>(v, k));
         } catch (const ConfigError&) {
           throw;
         } catch (const std::exception& e) {
           throw ConfigError(k, e.what());
         }
       }},
      {"embedding", [](TrainConfig& t, const json& v, const std::string& k) { t.embedding = get_as<std::size_t>(v, k); }},
      {"layers", [](TrainConfig& t, const json& v, const std::string& k) { t.layers = get_as<std::size_t>(v, k); }},
      {"hidden", [](TrainConfig& t, const json& v, const std::string& k) { t.hidden = get_as<std::size_t>(v, k); }},
      {"attention", [](TrainConfig& t, const json& v, const std::string& k) { t.attention = get_as<std::size_t>(v, k); }},
      {"max_epochs", [](TrainConfig& t, const json& v, const std::string& k) { t.max_epochs = get_as<std::size_t>(v, k); }},
      {"patience", [](TrainConfig& t, const json& v, const std::string& k) { t.patience = get_as<std::size_t>(v, k); }},
      {"dropout", [](TrainConfig& t, const json& v, const std::string& k) { t.dropout = get_as<double>(v, k); }},
      {"lr", [](TrainConfig& t, const json& v, const std::string& k) { t.lr = get_as<double>(v, k); }},
      {"batch_size", [](TrainConfig& t, const json& v, const std::string& k) { t.batch_size = get_as<std::size_t>(v, k); }},
      {"l2", [](TrainConfig& t, const json& v, const std::string& k) { t.l2 = get_as<double>(v, k); }},
      {"clip_norm", [](TrainConfig& t, const json& v, const std::string& k) { t.clip_norm = get_as<double>(v, k); }},
      {"tf_ratio", [](TrainConfig& t, const json& v, const std::string& k) { t.tf_ratio = get_as<double>(v, k); }},
      {"seed", [](TrainConfig& t, const json& v, const std::string& k) { t.seed = get_as<std::uint64_t>(v, k); }},
      {"max_len", [](TrainConfig& t, const json& v, const std::string& k) { t.max_len = get_as<std::size_t>(v, k); }},
      {"min_freq", [](TrainConfig& t, const json& v, const std::string& k) { t.min_freq = get_as<std::size_t>(v, k); }},
      {"valid_fraction",
       [](TrainConfig& t, const json& v, const std::string& k) { t.valid_fraction = get_as<double>(v, k); }},
      {"language_tokens",
       [](TrainConfig& t, const json& v, const std::string& k) { t.language_tokens = get_as<bool>(v, k); }},
      {"multitask_freeze_encoder",
       [](TrainConfig& t, const json& v, const std::string& k) { t.multitask_freeze_encoder = get_as<bool>(v, k); }},
  };
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(key, "unknown configuration key");
    it->second(c, value, key);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Loops

double train_epoch(Seq2SeqModel& model, std::span<const Batch> batches, const TrainConfig& config, Adam& optimizer,
                   Rng& rng) {
  ParameterRefs params = model.parameters();
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const Batch& batch = batches[i];
    if (batch.rows == 0) continue;
    for (Parameter* p : params) p->zero_grad();
    Graph g;
    const Var loss = model.loss(g, batch, config.tf_ratio, rng, Mode::train);
    const double value = g.value(loss)[0];
    if (!std::isfinite(value)) {
      throw NonFiniteLoss("non-finite training loss " + std::to_string(value) + " at batch " + std::to_string(i) +
                          " (" + std::to_string(batch.rows) + " rows, source length " +
                          std::to_string(batch.source_len) + ", target length " + std::to_string(batch.target_len) +
                          ")");
    }
    g.backward(loss);
    clip_grad_norm(params, config.clip_norm);
    optimizer.step();
    total += value;
    ++counted;
  }
  return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

double validation_loss(const Seq2SeqModel& model, std::span<const Batch> batches) {
  Rng unused(0);
  double total = 0.0;
  double tokens = 0.0;
  for (const Batch& batch : batches) {
    std::size_t n = 0;
    for (std::size_t r = 0; r < batch.rows; ++r) n += batch.target_lengths[r] > 0 ? batch.target_lengths[r] - 1 : 0;
    if (n == 0) continue;
    Graph g;
    const Var loss = model.loss(g, batch, 1.0, unused, Mode::eval);
    total += g.value(loss)[0] * static_cast<double>(n);
    tokens += static_cast<double>(n);
  }
  return tokens == 0.0 ? 0.0 : total / tokens;
}

EarlyStopping::EarlyStopping(std::size_t patience)
    : patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  if (patience == 0) throw std::invalid_argument("patience must be positive");
}

bool EarlyStopping::observe(double loss) {
  ++epochs_;
  if (loss < best_) {
    best_ = loss;
    best_epoch_ = epochs_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

FitResult fit_with_early_stopping(Seq2SeqModel& model, std::span<const EncodedPair> train,
                                  std::span<const EncodedPair> valid, const TrainConfig& config, Rng& rng,
                                  const std::string& stage, const MetricsSink& metrics) {
  config.validate();
  if (train.empty()) throw std::invalid_argument(stage + ": empty training set");
  ParameterRefs params = model.parameters();
  Adam optimizer(AdamConfig{.lr = config.lr, .l2 = config.l2});
  optimizer.bind(params);

  const BatchOptions train_opts{config.batch_size, true, true};
  const BatchOptions valid_opts{config.batch_size, true, false};
  const std::vector<Batch> valid_batches = make_batches(valid, valid_opts, rng);

  EarlyStopping stopper(config.patience);
  std::vector<Tensor> best;
  FitResult result;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<Batch> batches = make_batches(train, train_opts, rng);
    EpochRecord rec;
    rec.stage = stage;
    rec.epoch = epoch;
    rec.train_loss = train_epoch(model, batches, config, optimizer, rng);
    rec.valid_loss = valid_batches.empty() ? rec.train_loss : validation_loss(model, valid_batches);
    if (stopper.observe(rec.valid_loss)) {
      best.clear();
      for (const Parameter* p : params) best.push_back(p->value);
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (metrics) metrics(rec);
    if (stopper.should_stop()) break;
  }
  if (!best.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  }
  result.epochs_run = stopper.epochs();
  result.best_epoch = stopper.best_epoch();
  result.best_valid_loss = stopper.best_loss();
  return result;
}

// ---------------------------------------------------------------------------
// Regimes

std::vector<EncodedPair> encode_for(const ParallelCorpus& corpus, const Vocabulary& source, const Vocabulary& target,
                                    std::size_t max_len, int control, int origin) {
  std::vector<EncodedPair> out;
  out.reserve(corpus.pairs.size());
  for (const auto& p : corpus.pairs) {
    const std::size_t ns = std::min(p.source.size(), max_len);
    const std::size_t nt = std::min(p.target.size(), max_len);
    out.push_back(EncodedPair{encode(std::span(p.source).first(ns), source),
                              encode(std::span(p.target).first(nt), target), control, origin});
  }
  return out;
}

Vocabulary shared_source_vocab(std::span<const ParallelCorpus> corpora, std::size_t min_freq,
                               std::span<const std::string> target_languages) {
  std::vector<std::string> extra;
  for (const auto& lang : target_languages) extra.push_back(language_token(lang));
  return build_vocab(corpora, Side::source, min_freq, extra);
}

namespace {

struct Prepared {
  ParallelCorpus train;
  ParallelCorpus valid;
};

Prepared prepare(const StageData& data, const TrainConfig& config, const std::string& label) {
  Prepared p{data.train, data.valid};
  if (p.train.pairs.empty()) throw std::invalid_argument(label + ": empty training corpus");
  if (p.valid.pairs.empty()) {
    Rng rng(derive_seed(config.seed, "valid:" + label));
    p.valid = carve_split(p.train, config.valid_fraction, Split::valid, rng);
  }
  return p;
}

ParallelCorpus copy_of(const ParallelCorpus& c) {
  ParallelCorpus out = c;
  out.target_lang = c.source_lang;
  for (auto& pair : out.pairs) pair.target = pair.source;
  return out;
}

StageData copy_of(const StageData& d) { return StageData{copy_of(d.train), copy_of(d.valid), copy_of(d.test)}; }

Vocabulary target_vocab_of(const ParallelCorpus& train, std::size_t min_freq) {
  return build_vocab(std::span(&train, 1), Side::target, min_freq);
}

// Architecture fields always come from the model being continued.
TrainConfig continue_config(const TrainConfig& requested, const Checkpoint& from) {
  TrainConfig c = requested;
  const ModelDims& d = from.model.dims();
  c.arch = d.arch;
  c.embedding = d.embedding;
  c.hidden = d.hidden;
  c.attention = d.attention;
  c.dropout = d.dropout;
  return c;
}

Checkpoint train_fresh(const StageData& data, const Vocabulary& source_vocab, const TrainConfig& config,
                       const RunOptions& options, const std::string& regime) {
  config.validate();
  const std::string label = data.train.label();
  const Prepared prep = prepare(data, config, label);
  Vocabulary target_vocab = target_vocab_of(prep.train, config.min_freq);
  Checkpoint ck{config,
                Seq2SeqModel(config.dims(source_vocab.size(), target_vocab.size()), derive_seed(config.seed, "model")),
                source_vocab,
                std::move(target_vocab),
                {},
                {}};
  Rng rng(derive_seed(config.seed, "train:" + regime + ":" + label));
  const auto train = encode_for(prep.train, ck.source_vocab, ck.target_vocab, config.max_len);
  const auto valid = encode_for(prep.valid, ck.source_vocab, ck.target_vocab, config.max_len);
  const FitResult fit = fit_with_early_stopping(ck.model, train, valid, config, rng, regime, options.metrics);
  ck.rng_state = rng.state();
  ck.provenance.regime = regime;
  ck.provenance.dataset = label;
  ck.provenance.target_languages = {data.train.target_lang};
  ck.provenance.epochs = fit.epochs_run;
  ck.provenance.best_epoch = fit.best_epoch;
  ck.provenance.best_valid_loss = fit.best_valid_loss;
  return ck;
}

void check_source_coverage(const Vocabulary& have, const ParallelCorpus& train, std::size_t min_freq) {
  const Vocabulary needed = build_vocab(std::span(&train, 1), Side::source, min_freq);
  for (const auto& tok : needed.tokens()) {
    if (!have.contains(tok)) {
      throw std::invalid_argument("source vocabulary mismatch: " + train.label() + " uses '" + tok +
                                  "', which the pretrained model does not know");
    }
  }
}

}  // namespace

Checkpoint train_end_to_end(const StageData& data, const Vocabulary& source_vocab, const TrainConfig& config,
                            const RunOptions& options) {
  return train_fresh(data, source_vocab, config, options, "end-to-end");
}

Checkpoint pretrain_copy(const StageData& english, const Vocabulary& source_vocab, const TrainConfig& config,
                         const RunOptions& options) {
  return train_fresh(copy_of(english), source_vocab, config, options, "copy");
}

Checkpoint transfer_1hop(const Checkpoint& pretrained, const StageData& target, const TrainConfig& requested,
                         const RunOptions& options) {
  const TrainConfig config = continue_config(requested, pretrained);
  config.validate();
  const std::string label = target.train.label();
  check_source_coverage(pretrained.source_vocab, target.train, config.min_freq);
  const Prepared prep = prepare(target, config, label);

  Checkpoint ck = pretrained;
  ck.config = config;
  ck.target_vocab = target_vocab_of(prep.train, config.min_freq);
  ck.model.freeze_encoder();
  ck.model.rebind_decoder(ck.target_vocab.size(), derive_seed(config.seed, "decoder:" + label));

  Rng rng(derive_seed(config.seed, "train:1-hop:" + label));
  const auto train = encode_for(prep.train, ck.source_vocab, ck.target_vocab, config.max_len);
  const auto valid = encode_for(prep.valid, ck.source_vocab, ck.target_vocab, config.max_len);
  const FitResult fit = fit_with_early_stopping(ck.model, train, valid, config, rng, "1-hop", options.metrics);
  ck.rng_state = rng.state();
  ck.provenance.regime = "1-hop";
  ck.provenance.stage = pretrained.provenance.stage + 1;
  ck.provenance.dataset = label;
  ck.provenance.target_languages = {target.train.target_lang};
  ck.provenance.epochs = fit.epochs_run;
  ck.provenance.best_epoch = fit.best_epoch;
  ck.provenance.best_valid_loss = fit.best_valid_loss;
  return ck;
}

Checkpoint train_multitask_joint(const Checkpoint& pretrained, std::span<const StageData> corpora,
                                 const TrainConfig& requested, const RunOptions& options) {
  const TrainConfig config = continue_config(requested, pretrained);
  config.validate();
  if (corpora.empty()) throw std::invalid_argument("multi-task training needs at least one corpus");

  std::vector<Prepared> prepared;
  std::vector<ParallelCorpus> trains;
  std::vector<std::string> languages;
  for (const StageData& d : corpora) {
    check_source_coverage(pretrained.source_vocab, d.train, config.min_freq);
    prepared.push_back(prepare(d, config, d.train.label()));
    trains.push_back(prepared.back().train);
    languages.push_back(d.train.target_lang);
  }

  Checkpoint ck = pretrained;
  ck.config = config;
  ck.target_vocab = build_vocab(trains, Side::target, config.min_freq);
  if (config.multitask_freeze_encoder) ck.model.freeze_encoder();
  ck.model.rebind_decoder(ck.target_vocab.size(), derive_seed(config.seed, "decoder:multitask"));

  std::vector<EncodedPair> train;
  std::vector<EncodedPair> valid;
  for (std::size_t i = 0; i < prepared.size(); ++i) {
    int control = -1;
    if (config.language_tokens) {
      const std::string tok = language_token(languages[i]);
      if (!ck.source_vocab.contains(tok)) {
        throw std::invalid_argument("source vocabulary has no control token " + tok);
      }
      control = ck.source_vocab.id(tok);
    }
    const int origin = static_cast<int>(i);
    auto tr = encode_for(prepared[i].train, ck.source_vocab, ck.target_vocab, config.max_len, control, origin);
    auto va = encode_for(prepared[i].valid, ck.source_vocab, ck.target_vocab, config.max_len, control, origin);
    train.insert(train.end(), tr.begin(), tr.end());
    valid.insert(valid.end(), va.begin(), va.end());
  }

  Rng rng(derive_seed(config.seed, "train:multitask"));
  const FitResult fit = fit_with_early_stopping(ck.model, train, valid, config, rng, "multitask", options.metrics);
  ck.rng_state = rng.state();
  ck.provenance.regime = "multitask";
  ck.provenance.stage = pretrained.provenance.stage + 1;
  std::string label;
  for (const StageData& d : corpora) label += (label.empty() ? "" : "+") + d.train.label();
  ck.provenance.dataset = label;
  ck.provenance.target_languages = languages;
  ck.provenance.epochs = fit.epochs_run;
  ck.provenance.best_epoch = fit.best_epoch;
  ck.provenance.best_valid_loss = fit.best_valid_loss;
  return ck;
}

// ---------------------------------------------------------------------------
// Sequential plans

void TransferPlan::validate() const {
  if (stages.empty()) throw ConfigError("stages", "plan has no stages");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const PlanStage& s = stages[i];
    const std::string key = "stages[" + std::to_string(i) + "]";
    if (s.dataset.empty()) throw ConfigError(key + ".dataset", "missing dataset id");
    if (i == 0 && s.prune.mode != PruneMode::none) {
      throw ConfigError(key + ".prune", "the pretraining stage cannot prune");
    }
    if (!(s.prune.percent >= 0.0 && s.prune.percent <= 100.0)) {
      throw ConfigError(key + ".percent", "must be in [0, 100]");
    }
  }
}

json TransferPlan::to_json() const {
  json arr = json::array();
  for (const PlanStage& s : stages) {
    arr.push_back(json{{"dataset", s.dataset},
                       {"freeze_encoder", s.freeze_encoder},
                       {"prune", std::string(prune_mode_name(s.prune.mode))},
                       {"percent", s.prune.percent},
                       {"target_vocab", s.target_vocab}});
  }
  return json{{"stages", arr}};
}

TransferPlan TransferPlan::from_json(const json& j) {
  if (!j.is_object() || !j.contains("stages") || !j.at("stages").is_array()) {
    throw ConfigError("stages", "expected an object with a 'stages' array");
  }
  TransferPlan plan;
  const json& arr = j.at("stages");
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string prefix = "stages[" + std::to_string(i) + "].";
    const json& o = arr[i];
    if (!o.is_object()) throw ConfigError(prefix.substr(0, prefix.size() - 1), "expected an object");
    PlanStage s;
    for (const auto& [key, value] : o.items()) {
      const std::string k = prefix + key;
      if (key == "dataset") {
        s.dataset = get_as<std::string>(value, k);
      } else if (key == "freeze_encoder") {
        s.freeze_encoder = get_as<bool>(value, k);
      } else if (key == "prune") {
        try {
          s.prune.mode = prune_mode_from_name(get_as<std::string>(value, k));
        } catch (const ConfigError&) {
          throw;
        } catch (const std::exception& e) {
          throw ConfigError(k, e.what());
        }
      } else if (key == "percent") {
        s.prune.percent = get_as<double>(value, k);
      } else if (key == "target_vocab") {
        s.target_vocab = get_as<std::string>(value, k);
      } else {
        throw ConfigError(k, "unknown plan key");
      }
    }
    plan.stages.push_back(std::move(s));
  }
  for (const auto& [key, value] : j.items()) {
    if (key != "stages") throw ConfigError(key, "unknown plan key");
  }
  plan.validate();
  return plan;
}

std::vector<StageOutcome> run_sequential_plan(const TransferPlan& plan, const std::map<std::string, StageData>& corpora,
                                              const Vocabulary& source_vocab, const TrainConfig& config,
                                              const SequentialOptions& options) {
  plan.validate();
  config.validate();
  for (const PlanStage& s : plan.stages) {
    if (!corpora.contains(s.dataset)) throw std::invalid_argument("plan references unknown dataset '" + s.dataset + "'");
    if (!s.target_vocab.empty() && !corpora.contains(s.target_vocab)) {
      throw std::invalid_argument("plan references unknown vocabulary dataset '" + s.target_vocab + "'");
    }
    if (corpora.at(s.dataset).test.pairs.empty()) {
      throw std::invalid_argument("dataset '" + s.dataset + "' has no test split");
    }
  }

  std::vector<StageOutcome> outcomes;
  const ParallelCorpus* previous_test = nullptr;
  StageData stage0_copy;
  for (std::size_t i = 0; i < plan.stages.size(); ++i) {
    const PlanStage& stage_def = plan.stages[i];
    const std::string label = "stage" + std::to_string(i);
    StageOutcome out;
    const StageData* data = &corpora.at(stage_def.dataset);

    if (i == 0) {
      stage0_copy = copy_of(*data);
      data = &stage0_copy;
      TrainConfig c = config;
      const Prepared prep = prepare(*data, c, label);
      Vocabulary target_vocab = target_vocab_of(prep.train, c.min_freq);
      out.checkpoint = Checkpoint{
          c, Seq2SeqModel(c.dims(source_vocab.size(), target_vocab.size()), derive_seed(c.seed, "model")),
          source_vocab, std::move(target_vocab), {}, {}};
      Rng rng(derive_seed(c.seed, "train:" + label));
      const auto train = encode_for(prep.train, source_vocab, out.checkpoint.target_vocab, c.max_len);
      const auto valid = encode_for(prep.valid, source_vocab, out.checkpoint.target_vocab, c.max_len);
      out.fit = fit_with_early_stopping(out.checkpoint.model, train, valid, c, rng, label, options.metrics);
      out.checkpoint.rng_state = rng.state();
      out.checkpoint.provenance.regime = "copy";
    } else {
      const Checkpoint& incoming = outcomes.back().checkpoint;
      const TrainConfig c = continue_config(config, incoming);
      check_source_coverage(incoming.source_vocab, data->train, c.min_freq);
      out.checkpoint = incoming;
      Checkpoint& ck = out.checkpoint;

      if (stage_def.prune.mode != PruneMode::none) {
        const ActivationDataset acts =
            capture_activations(ck.model, *previous_test, ck.source_vocab, c.max_len, label + ":prune");
        const MassActivationMatrix mass = mass_matrices(acts);
        out.pruned = select_prune_set(mass, stage_def.prune.mode, stage_def.prune.percent);
        prune_neuron_knowledge(ck.model, out.pruned);
        ck.provenance.prunes.push_back(PruneRecord{i, stage_def.prune.mode, stage_def.prune.percent, out.pruned});
      }
      if (stage_def.freeze_encoder) ck.model.freeze_encoder();

      const std::string& vocab_id = stage_def.target_vocab.empty() ? stage_def.dataset : stage_def.target_vocab;
      const Prepared prep = prepare(*data, c, label);
      ck.config = c;
      ck.target_vocab = vocab_id == stage_def.dataset ? target_vocab_of(prep.train, c.min_freq)
                                                 : target_vocab_of(corpora.at(vocab_id).train, c.min_freq);
      ck.model.rebind_decoder(ck.target_vocab.size(), derive_seed(c.seed, "decoder:" + label));

      Rng rng(derive_seed(c.seed, "train:" + label));
      const auto train = encode_for(prep.train, ck.source_vocab, ck.target_vocab, c.max_len);
      const auto valid = encode_for(prep.valid, ck.source_vocab, ck.target_vocab, c.max_len);
      out.fit = fit_with_early_stopping(ck.model, train, valid, c, rng, label, options.metrics);
      ck.rng_state = rng.state();
      ck.provenance.regime = "sequential";
    }

    Checkpoint& ck = out.checkpoint;
    ck.provenance.stage = i;
    ck.provenance.dataset = stage_def.dataset;
    ck.provenance.target_languages = {data->train.target_lang};
    ck.provenance.epochs = out.fit.epochs_run;
    ck.provenance.best_epoch = out.fit.best_epoch;
    ck.provenance.best_valid_loss = out.fit.best_valid_loss;

    EvalOptions eo;
    eo.max_len = ck.config.max_len;
    out.eval = evaluate_corpus(ck.model, data->test, ck.source_vocab, ck.target_vocab, eo);
    out.activations = capture_activations(ck.model, data->test, ck.source_vocab, ck.config.max_len,
                                          label + ":" + stage_def.dataset);
    out.mass = mass_matrices(out.activations);
    if (!options.keep_activations) out.activations.sentences.clear();

    previous_test = &data->test;
    if (i == 0) {
      // The copy corpus lives in stage0_copy; keep pointing at it for stage 1.
      previous_test = &stage0_copy.test;
    }
    if (options.on_stage) options.on_stage(i, out);
    outcomes.push_back(std::move(out));
  }
  return outcomes;
}

}  // namespace lrmt
