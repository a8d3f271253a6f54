#include "lrmt/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lrmt/checksum.hpp"
#include "lrmt/report.hpp"
#include "lrmt/synthetic.hpp"
#include "lrmt/training.hpp"

#ifndef LRMT_VERSION
#define LRMT_VERSION "0.0.0"
#endif

namespace lrmt::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// --- configuration -----------------------------------------------------------

struct ReportStage {
  std::string label;
  fs::path checkpoint;
  fs::path test;
  std::string lang;
};

struct RunConfig {
  TrainConfig train;
  bool seed_set = false;
  fs::path out;

  fs::path manifest;
  std::string pretrain = "en-en";
  std::string dataset;
  std::vector<std::string> targets{"en-de", "en-fr", "en-es"};
  std::size_t max_tokens = 0;

  std::optional<TransferPlan> plan;
  PruneDirective plan_prune;
  PruneDirective prune{PruneMode::most_n, 10.0};

  std::size_t top_k = 10;
  std::size_t pos_neurons = 3;
  std::size_t pos_k = 5;
  std::size_t samples = 10;

  bool synthetic = false;
  std::size_t sentences = 2000;
  std::vector<std::string> languages{"en", "de", "fr", "es"};
  double valid_fraction = 0.1;
  double test_fraction = 0.1;
  fs::path raw_manifest;

  std::vector<ReportStage> report_stages;
};

struct Flags {
  std::string config;
  std::string seed;
  std::string out;
  std::string stage;
  std::string mode;
  std::string percent;
  std::string arch;
  std::string lang;
  std::vector<std::string> ckpt;
  std::vector<std::string> test;
};

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError(key, "expected a string");
  return v.get<std::string>();
}

std::size_t as_size(const json& v, const std::string& key) {
  if (!v.is_number_unsigned()) throw ConfigError(key, "expected a non-negative integer");
  return v.get<std::size_t>();
}

double as_double(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError(key, "expected a number");
  return v.get<double>();
}

bool as_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError(key, "expected a boolean");
  return v.get<bool>();
}

std::vector<std::string> as_strings(const json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError(key, "expected an array of strings");
  std::vector<std::string> out;
  for (const auto& e : v) out.push_back(as_string(e, key));
  return out;
}

PruneMode as_mode(const std::string& s, const std::string& key) {
  try {
    return prune_mode_from_name(s);
  } catch (const std::exception& e) {
    throw ConfigError(key, e.what());
  }
}

std::uint64_t parse_u64(const std::string& s, const std::string& key) {
  std::size_t used = 0;
  try {
    if (s.empty() || s[0] == '-') throw std::invalid_argument(s);
    const unsigned long long v = std::stoull(s, &used, 0);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a non-negative integer, got '" + s + "'");
  }
}

double parse_double(const std::string& s, const std::string& key) {
  std::size_t used = 0;
  try {
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + s + "'");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path fp(p);
  return fp.is_absolute() || base.empty() ? fp : base / fp;
}

void load_config_file(RunConfig& cfg, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("--config", path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("--config", "top level must be an object");
  const fs::path base = path.parent_path();

  using Setter = std::function<void(const json&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"seed",
       [&](const json& v, const std::string& k) {
         cfg.train.seed = as_size(v, k);
         cfg.seed_set = true;
       }},
      {"out", [&](const json& v, const std::string& k) { cfg.out = resolve(base, as_string(v, k)); }},
      {"data.manifest", [&](const json& v, const std::string& k) { cfg.manifest = resolve(base, as_string(v, k)); }},
      {"data.pretrain", [&](const json& v, const std::string& k) { cfg.pretrain = as_string(v, k); }},
      {"data.dataset", [&](const json& v, const std::string& k) { cfg.dataset = as_string(v, k); }},
      {"data.targets", [&](const json& v, const std::string& k) { cfg.targets = as_strings(v, k); }},
      {"data.max_tokens", [&](const json& v, const std::string& k) { cfg.max_tokens = as_size(v, k); }},
      {"plan.stages",
       [&](const json& v, const std::string& k) {
         try {
           cfg.plan = TransferPlan::from_json(json{{"stages", v}});
         } catch (const ConfigError& e) {
           throw ConfigError("plan." + e.key(), e.detail());
         } catch (const std::exception& e) {
           throw ConfigError(k, e.what());
         }
       }},
      {"plan.prune", [&](const json& v, const std::string& k) { cfg.plan_prune.mode = as_mode(as_string(v, k), k); }},
      {"plan.percent", [&](const json& v, const std::string& k) { cfg.plan_prune.percent = as_double(v, k); }},
      {"prune.mode", [&](const json& v, const std::string& k) { cfg.prune.mode = as_mode(as_string(v, k), k); }},
      {"prune.percent", [&](const json& v, const std::string& k) { cfg.prune.percent = as_double(v, k); }},
      {"analysis.top_k", [&](const json& v, const std::string& k) { cfg.top_k = as_size(v, k); }},
      {"analysis.pos_neurons", [&](const json& v, const std::string& k) { cfg.pos_neurons = as_size(v, k); }},
      {"analysis.pos_k", [&](const json& v, const std::string& k) { cfg.pos_k = as_size(v, k); }},
      {"eval.samples", [&](const json& v, const std::string& k) { cfg.samples = as_size(v, k); }},
      {"prepare.synthetic", [&](const json& v, const std::string& k) { cfg.synthetic = as_bool(v, k); }},
      {"prepare.sentences", [&](const json& v, const std::string& k) { cfg.sentences = as_size(v, k); }},
      {"prepare.languages", [&](const json& v, const std::string& k) { cfg.languages = as_strings(v, k); }},
      {"prepare.valid_fraction", [&](const json& v, const std::string& k) { cfg.valid_fraction = as_double(v, k); }},
      {"prepare.test_fraction", [&](const json& v, const std::string& k) { cfg.test_fraction = as_double(v, k); }},
      {"prepare.raw_manifest",
       [&](const json& v, const std::string& k) { cfg.raw_manifest = resolve(base, as_string(v, k)); }},
      {"report.stages",
       [&](const json& v, const std::string& k) {
         if (!v.is_array()) throw ConfigError(k, "expected an array");
         for (std::size_t i = 0; i < v.size(); ++i) {
           const std::string p = k + "[" + std::to_string(i) + "].";
           const json& o = v[i];
           if (!o.is_object()) throw ConfigError(p, "expected an object");
           ReportStage s;
           for (const auto& [key, val] : o.items()) {
             if (key == "label") {
               s.label = as_string(val, p + key);
             } else if (key == "checkpoint") {
               s.checkpoint = resolve(base, as_string(val, p + key));
             } else if (key == "test") {
               s.test = resolve(base, as_string(val, p + key));
             } else if (key == "lang") {
               s.lang = as_string(val, p + key);
             } else {
               throw ConfigError(p + key, "unknown key");
             }
           }
           if (s.checkpoint.empty() || s.test.empty()) throw ConfigError(p + "checkpoint", "checkpoint and test are required");
           cfg.report_stages.push_back(std::move(s));
         }
       }},
  };

  json train_keys = json::object();
  for (const auto& [key, value] : j.items()) {
    if (key.rfind("train.", 0) == 0) {
      train_keys[key.substr(6)] = value;
      if (key == "train.seed") cfg.seed_set = true;
      continue;
    }
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(key, "unknown configuration key");
    it->second(value, key);
  }
  try {
    cfg.train = TrainConfig::from_json(train_keys, cfg.train);
  } catch (const ConfigError& e) {
    throw ConfigError("train." + e.key(), e.detail());
  }
}

RunConfig build_config(const Flags& flags) {
  RunConfig cfg;
  if (!flags.config.empty()) load_config_file(cfg, flags.config);
  if (!flags.seed.empty()) {
    cfg.train.seed = parse_u64(flags.seed, "--seed");
    cfg.seed_set = true;
  }
  if (!cfg.seed_set) {
    if (const char* env = std::getenv("LRMT_SEED"); env != nullptr && *env != '\0') {
      cfg.train.seed = parse_u64(env, "LRMT_SEED");
    }
  }
  if (!flags.out.empty()) cfg.out = flags.out;
  if (!flags.arch.empty()) cfg.train.arch = arch_from_name(flags.arch);
  if (!flags.mode.empty()) {
    cfg.prune.mode = as_mode(flags.mode, "--mode");
    cfg.plan_prune.mode = cfg.prune.mode;
  }
  if (!flags.percent.empty()) {
    cfg.prune.percent = parse_double(flags.percent, "--percent");
    cfg.plan_prune.percent = cfg.prune.percent;
  }
  try {
    cfg.train.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("train." + e.key(), e.detail());
  }
  for (const double p : {cfg.prune.percent, cfg.plan_prune.percent}) {
    if (!(p >= 0.0 && p <= 100.0)) throw ConfigError("prune.percent", "must be in [0, 100]");
  }
  if (cfg.out.empty()) throw ConfigError("out", "no output directory (set \"out\" or pass --out)");
  return cfg;
}

json resolved_json(const RunConfig& cfg) {
  json j = json::object();
  const json train = cfg.train.to_json();
  for (const auto& [k, v] : train.items()) j["train." + k] = v;
  j["out"] = cfg.out.generic_string();
  j["data.manifest"] = cfg.manifest.generic_string();
  j["data.pretrain"] = cfg.pretrain;
  j["data.dataset"] = cfg.dataset;
  j["data.targets"] = cfg.targets;
  j["data.max_tokens"] = cfg.max_tokens;
  j["plan.stages"] = cfg.plan ? cfg.plan->to_json().at("stages") : json(nullptr);
  j["plan.prune"] = std::string(prune_mode_name(cfg.plan_prune.mode));
  j["plan.percent"] = cfg.plan_prune.percent;
  j["prune.mode"] = std::string(prune_mode_name(cfg.prune.mode));
  j["prune.percent"] = cfg.prune.percent;
  j["analysis.top_k"] = cfg.top_k;
  j["analysis.pos_neurons"] = cfg.pos_neurons;
  j["analysis.pos_k"] = cfg.pos_k;
  j["eval.samples"] = cfg.samples;
  j["prepare.synthetic"] = cfg.synthetic;
  j["prepare.sentences"] = cfg.sentences;
  j["prepare.languages"] = cfg.languages;
  j["prepare.valid_fraction"] = cfg.valid_fraction;
  j["prepare.test_fraction"] = cfg.test_fraction;
  j["prepare.raw_manifest"] = cfg.raw_manifest.generic_string();
  return j;
}

// --- shared helpers ------------------------------------------------------------

struct Context {
  std::string command;
  RunConfig cfg;
  Flags flags;
  std::ostream& out;
  std::vector<fs::path> inputs;
};

void require_file(const fs::path& p, const std::string& key) {
  if (!fs::is_regular_file(p)) throw ConfigError(key, "file not found: " + p.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

// Provenance record; deliberately free of timestamps so reruns compare equal.
void write_run_json(const Context& ctx) {
  fs::create_directories(ctx.cfg.out);
  const json resolved = resolved_json(ctx.cfg);
  std::vector<fs::path> inputs = ctx.inputs;
  std::sort(inputs.begin(), inputs.end());
  inputs.erase(std::unique(inputs.begin(), inputs.end()), inputs.end());
  json files = json::array();
  for (const auto& p : inputs) files.push_back(json{{"path", p.generic_string()}, {"crc32", crc32_hex(file_crc32(p))}});
  const json run{{"command", ctx.command},
                 {"version", LRMT_VERSION},
                 {"config", resolved},
                 {"config_hash", crc32_hex(crc32(resolved.dump()))},
                 {"inputs", files},
                 {"seed", ctx.cfg.train.seed}};
  write_text(ctx.cfg.out / "run.json", run.dump(1) + "\n");
}

CorpusManifest load_manifest(const RunConfig& cfg) {
  if (cfg.manifest.empty()) throw ConfigError("data.manifest", "no corpus manifest configured");
  require_file(cfg.manifest, "data.manifest");
  try {
    return CorpusManifest::load(cfg.manifest);
  } catch (const std::exception& e) {
    throw ConfigError("data.manifest", e.what());
  }
}

const CorpusEntry& find_entry(const CorpusManifest& m, const std::string& id, const std::string& key) {
  if (!m.contains(id)) throw ConfigError(key, "dataset '" + id + "' is not in the manifest");
  return m.find(id);
}

void add_entry_inputs(Context& ctx, const CorpusEntry& e) {
  for (const fs::path& p : {e.train, e.test}) {
    require_file(p, "data.manifest");
    ctx.inputs.push_back(p);
  }
  if (e.valid) {
    require_file(*e.valid, "data.manifest");
    ctx.inputs.push_back(*e.valid);
  }
}

void add_manifest_inputs(Context& ctx, const CorpusManifest& m) {
  ctx.inputs.push_back(ctx.cfg.manifest);
  for (const auto& e : m.corpora) add_entry_inputs(ctx, e);
}

StageData load_stage(const CorpusEntry& e, std::size_t max_tokens) {
  StageData d;
  d.train = read_tsv(e.train, e.source_lang, e.target_lang, Split::train, max_tokens);
  if (e.valid) d.valid = read_tsv(*e.valid, e.source_lang, e.target_lang, Split::valid, max_tokens);
  d.test = read_tsv(e.test, e.source_lang, e.target_lang, Split::test, max_tokens);
  return d;
}

// Every command that trains derives the source vocabulary the same way, so
// checkpoints from separate invocations stay compatible.
Vocabulary manifest_source_vocab(const CorpusManifest& m, const RunConfig& cfg) {
  std::vector<ParallelCorpus> trains;
  std::vector<std::string> langs;
  for (const auto& e : m.corpora) {
    trains.push_back(read_tsv(e.train, e.source_lang, e.target_lang, Split::train, cfg.max_tokens));
    if (std::find(langs.begin(), langs.end(), e.target_lang) == langs.end()) langs.push_back(e.target_lang);
  }
  return shared_source_vocab(trains, cfg.train.min_freq, langs);
}

class MetricsLog {
public:
  MetricsLog(const fs::path& path, std::ostream& echo) : file_(path, std::ios::trunc), echo_(echo) {
    if (!file_) throw std::runtime_error("cannot write " + path.string());
  }
  MetricsSink sink() {
    return [this](const EpochRecord& r) {
      file_ << json{{"stage", r.stage},
                    {"epoch", r.epoch},
                    {"train_loss", r.train_loss},
                    {"valid_loss", r.valid_loss},
                    {"seconds", r.seconds}}
                   .dump()
            << '\n';
      file_.flush();
      echo_ << r.stage << " epoch " << r.epoch << " train " << r.train_loss << " valid " << r.valid_loss << '\n';
    };
  }

private:
  std::ofstream file_;
  std::ostream& echo_;
};

std::string bleu_header() { return "stage,label,score,p1,p2,p3,p4,bp\n"; }

std::string bleu_row(std::size_t stage, const std::string& label, const BleuReport& b) {
  std::string row = std::to_string(stage) + "," + label + "," + format_number(b.score);
  for (double p : b.precisions) row += "," + format_number(p);
  return row + "," + format_number(b.brevity_penalty) + "\n";
}

int control_for(const Checkpoint& ck, const std::string& lang) {
  if (ck.provenance.target_languages.size() <= 1 || !ck.config.language_tokens) return -1;
  const std::string tok = language_token(lang);
  if (!ck.source_vocab.contains(tok)) throw std::invalid_argument("checkpoint has no control token " + tok);
  return ck.source_vocab.id(tok);
}

EvalResult evaluate_for(const Checkpoint& ck, const ParallelCorpus& test, std::size_t samples) {
  EvalOptions eo;
  eo.max_len = ck.config.max_len;
  eo.samples = samples;
  eo.control = control_for(ck, test.target_lang);
  return evaluate_corpus(ck.model, test, ck.source_vocab, ck.target_vocab, eo);
}

void write_eval(const fs::path& dir, std::size_t stage, const std::string& label, const EvalResult& r) {
  write_text(dir / "bleu.csv", bleu_header() + bleu_row(stage, label, r.bleu));
  write_translations(dir / "translations.tsv", r.samples);
}

Checkpoint load_ckpt_flag(Context& ctx, std::size_t index = 0) {
  if (ctx.flags.ckpt.size() <= index) throw ConfigError("--ckpt", "a checkpoint is required");
  const fs::path p = ctx.flags.ckpt[index];
  require_file(p, "--ckpt");
  ctx.inputs.push_back(p);
  return load_checkpoint(p);
}

std::string lang_for(const Context& ctx, const Checkpoint& ck, const std::string& explicit_lang = "") {
  if (!explicit_lang.empty()) return explicit_lang;
  if (!ctx.flags.lang.empty()) return ctx.flags.lang;
  if (!ck.provenance.target_languages.empty()) return ck.provenance.target_languages.front();
  return "xx";
}

// Test corpus for prune / evaluate / xray: --test, else data.dataset's test split.
ParallelCorpus test_corpus(Context& ctx, const Checkpoint& ck) {
  if (!ctx.flags.test.empty()) {
    const fs::path p = ctx.flags.test.front();
    require_file(p, "--test");
    ctx.inputs.push_back(p);
    return read_tsv(p, "en", lang_for(ctx, ck), Split::test, ctx.cfg.max_tokens);
  }
  if (ctx.cfg.dataset.empty()) throw ConfigError("--test", "pass --test or set data.dataset");
  const CorpusManifest m = load_manifest(ctx.cfg);
  const CorpusEntry& e = find_entry(m, ctx.cfg.dataset, "data.dataset");
  require_file(e.test, "data.manifest");
  ctx.inputs.push_back(e.test);
  return read_tsv(e.test, e.source_lang, e.target_lang, Split::test, ctx.cfg.max_tokens);
}

// Neurons worth a POS plot: most changed since the previous stage, or the
// largest magnitude masses when there is no previous stage.
std::vector<std::size_t> plot_neurons(const MassActivationMatrix& mass, const MassActivationMatrix* before,
                                      std::size_t n) {
  std::vector<std::size_t> order;
  if (before != nullptr) {
    order = change_in_mass(*before, mass).most_changed;
  } else {
    order.resize(mass.width);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return mass.magnitude_mass[a] > mass.magnitude_mass[b]; });
  }
  order.resize(std::min(n, order.size()));
  return order;
}

StageAnalysis& add_stage(AnalysisBundle& bundle, const std::string& label, const ActivationDataset& acts,
                         const MassActivationMatrix& mass, const EvalResult& eval, const RunConfig& cfg) {
  const MassActivationMatrix* before = bundle.stages.empty() ? nullptr : &bundle.stages.back().mass;
  const auto neurons = plot_neurons(mass, before, cfg.pos_neurons);
  StageAnalysis& s = bundle.add(label, mass);
  s.bleu = eval.bleu;
  s.samples = eval.samples;
  for (std::size_t k : neurons) s.pos.push_back(pos_token_distribution(acts, k, cfg.pos_k));
  return s;
}

// --- commands --------------------------------------------------------------------

int cmd_prepare(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const fs::path data_dir = cfg.out / "data";
  CorpusManifest raw;
  if (cfg.synthetic) {
    for (const auto& lang : cfg.languages) {
      if (!synthetic::supports_language(lang)) throw ConfigError("prepare.languages", "no dictionary for '" + lang + "'");
    }
    if (!(cfg.valid_fraction > 0.0 && cfg.test_fraction > 0.0 && cfg.valid_fraction + cfg.test_fraction < 1.0)) {
      throw ConfigError("prepare.valid_fraction", "valid and test fractions must be positive and sum below 1");
    }
  } else if (!cfg.raw_manifest.empty()) {
    require_file(cfg.raw_manifest, "prepare.raw_manifest");
    try {
      raw = CorpusManifest::load(cfg.raw_manifest);
    } catch (const std::exception& e) {
      throw ConfigError("prepare.raw_manifest", e.what());
    }
    ctx.inputs.push_back(cfg.raw_manifest);
    for (const auto& e : raw.corpora) add_entry_inputs(ctx, e);
  } else {
    throw ConfigError("prepare.synthetic", "nothing to prepare: set prepare.synthetic or prepare.raw_manifest");
  }
  write_run_json(ctx);
  fs::create_directories(data_dir);

  CorpusManifest m;
  auto emit = [&](const std::string& id, const ParallelCorpus& train, const ParallelCorpus* valid,
                  const ParallelCorpus& test) {
    CorpusEntry e;
    e.id = id;
    e.source_lang = train.source_lang;
    e.target_lang = train.target_lang;
    e.train = data_dir / (id + ".train.tsv");
    e.test = data_dir / (id + ".test.tsv");
    write_tsv(e.train, train);
    write_tsv(e.test, test);
    if (valid != nullptr) {
      e.valid = data_dir / (id + ".valid.tsv");
      write_tsv(*e.valid, *valid);
    }
    ctx.out << id << ": " << train.size() << " train, " << (valid ? valid->size() : 0) << " valid, " << test.size()
            << " test\n";
    m.corpora.push_back(e);
  };

  if (cfg.synthetic) {
    Rng rng(derive_seed(cfg.train.seed, "sentences"));
    const auto english = synthetic::english_sentences(cfg.sentences, rng);
    for (const auto& lang : cfg.languages) {
      // One partition for every language, so no test sentence is trained on elsewhere.
      Rng split_rng(derive_seed(cfg.train.seed, "splits"));
      const auto s = synthetic::make_splits(english, lang, cfg.valid_fraction, cfg.test_fraction, split_rng);
      emit("en-" + lang, s.train, &s.valid, s.test);
    }
  } else {
    for (const auto& e : raw.corpora) {
      const StageData d = load_stage(e, cfg.max_tokens);
      emit(e.id, d.train, e.valid ? &d.valid : nullptr, d.test);
    }
  }
  m.save(data_dir / "manifest.json");
  return 0;
}

int cmd_train(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const CorpusManifest m = load_manifest(cfg);
  const std::string id = cfg.dataset.empty() ? cfg.pretrain : cfg.dataset;
  const CorpusEntry& entry = find_entry(m, id, cfg.dataset.empty() ? "data.pretrain" : "data.dataset");
  add_manifest_inputs(ctx, m);
  write_run_json(ctx);

  const Vocabulary vocab = manifest_source_vocab(m, cfg);
  const StageData data = load_stage(entry, cfg.max_tokens);
  MetricsLog log(cfg.out / "metrics.jsonl", ctx.out);
  const RunOptions opts{log.sink()};
  const Checkpoint ck = entry.source_lang == entry.target_lang ? pretrain_copy(data, vocab, cfg.train, opts)
                                                               : train_end_to_end(data, vocab, cfg.train, opts);
  save_checkpoint(ck, cfg.out / "model.lrmt");
  const EvalResult r = evaluate_for(ck, data.test, cfg.samples);
  write_eval(cfg.out, ck.provenance.stage, id, r);
  ctx.out << "BLEU " << id << " " << format_number(r.bleu.score) << '\n';
  return 0;
}

int cmd_transfer(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const CorpusManifest m = load_manifest(cfg);
  if (cfg.dataset.empty() && cfg.targets.empty()) throw ConfigError("data.dataset", "no target dataset");
  const std::string id = cfg.dataset.empty() ? cfg.targets.front() : cfg.dataset;
  const CorpusEntry& entry = find_entry(m, id, "data.dataset");
  add_entry_inputs(ctx, entry);
  const Checkpoint pre = load_ckpt_flag(ctx);
  write_run_json(ctx);

  const StageData data = load_stage(entry, cfg.max_tokens);
  MetricsLog log(cfg.out / "metrics.jsonl", ctx.out);
  const Checkpoint ck = transfer_1hop(pre, data, cfg.train, RunOptions{log.sink()});
  save_checkpoint(ck, cfg.out / "model.lrmt");
  const EvalResult r = evaluate_for(ck, data.test, cfg.samples);
  write_eval(cfg.out, ck.provenance.stage, id, r);
  ctx.out << "BLEU " << id << " " << format_number(r.bleu.score) << '\n';
  return 0;
}

int cmd_multitask(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const CorpusManifest m = load_manifest(cfg);
  if (cfg.targets.empty()) throw ConfigError("data.targets", "no target datasets");
  std::vector<const CorpusEntry*> entries;
  for (const auto& id : cfg.targets) {
    entries.push_back(&find_entry(m, id, "data.targets"));
    add_entry_inputs(ctx, *entries.back());
  }
  const Checkpoint pre = load_ckpt_flag(ctx);
  write_run_json(ctx);

  std::vector<StageData> parts;
  for (const auto* e : entries) parts.push_back(load_stage(*e, cfg.max_tokens));
  MetricsLog log(cfg.out / "metrics.jsonl", ctx.out);
  const Checkpoint ck = train_multitask_joint(pre, parts, cfg.train, RunOptions{log.sink()});
  save_checkpoint(ck, cfg.out / "model.lrmt");

  std::string csv = bleu_header();
  std::vector<Tokens> all_hyp;
  std::vector<Tokens> all_ref;
  std::vector<Translation> samples;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const EvalResult r = evaluate_for(ck, parts[i].test, cfg.samples);
    csv += bleu_row(ck.provenance.stage, cfg.targets[i], r.bleu);
    all_hyp.insert(all_hyp.end(), r.hypotheses.begin(), r.hypotheses.end());
    for (const auto& p : parts[i].test.pairs) all_ref.push_back(p.target);
    samples.insert(samples.end(), r.samples.begin(), r.samples.end());
    ctx.out << "BLEU " << cfg.targets[i] << " " << format_number(r.bleu.score) << '\n';
  }
  const BleuReport combined = bleu4(all_hyp, all_ref);
  csv += bleu_row(ck.provenance.stage, "combined", combined);
  ctx.out << "BLEU combined " << format_number(combined.score) << '\n';
  write_text(cfg.out / "bleu.csv", csv);
  write_translations(cfg.out / "translations.tsv", samples);
  return 0;
}

TransferPlan plan_of(const RunConfig& cfg) {
  if (cfg.plan) {
    TransferPlan p = *cfg.plan;
    return p;
  }
  TransferPlan p;
  p.stages.push_back(PlanStage{cfg.pretrain, true, {}, ""});
  for (const auto& id : cfg.targets) p.stages.push_back(PlanStage{id, true, cfg.plan_prune, ""});
  return p;
}

int cmd_sequential(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const CorpusManifest m = load_manifest(cfg);
  TransferPlan plan = plan_of(cfg);
  if (!ctx.flags.stage.empty()) {
    const std::size_t last = parse_u64(ctx.flags.stage, "--stage");
    if (last >= plan.stages.size()) throw ConfigError("--stage", "plan has only " + std::to_string(plan.stages.size()) + " stages");
    plan.stages.resize(last + 1);
  }
  if (cfg.plan && (!ctx.flags.mode.empty() || !ctx.flags.percent.empty())) {
    for (std::size_t i = 1; i < plan.stages.size(); ++i) plan.stages[i].prune = cfg.plan_prune;
  }
  try {
    plan.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("plan." + e.key(), e.detail());
  }
  std::set<std::string> ids;
  for (const auto& s : plan.stages) {
    ids.insert(s.dataset);
    if (!s.target_vocab.empty()) ids.insert(s.target_vocab);
  }
  for (const auto& id : ids) find_entry(m, id, "plan.stages");
  add_manifest_inputs(ctx, m);
  write_run_json(ctx);

  const Vocabulary vocab = manifest_source_vocab(m, cfg);
  std::map<std::string, StageData> corpora;
  for (const auto& id : ids) corpora[id] = load_stage(m.find(id), cfg.max_tokens);

  const fs::path ckpt_dir = cfg.out / "checkpoints";
  fs::create_directories(ckpt_dir);
  MetricsLog log(cfg.out / "metrics.jsonl", ctx.out);
  AnalysisBundle bundle;
  json summary = json::array();
  SequentialOptions so;
  so.metrics = log.sink();
  so.keep_activations = true;
  so.on_stage = [&](std::size_t i, const StageOutcome& s) {
    const std::string label = "stage" + std::to_string(i) + "-" + plan.stages[i].dataset;
    save_checkpoint(s.checkpoint, ckpt_dir / (label + ".lrmt"));
    add_stage(bundle, label, s.activations, s.mass, s.eval, cfg);
    summary.push_back(json{{"stage", i},
                           {"label", label},
                           {"dataset", plan.stages[i].dataset},
                           {"bleu", s.eval.bleu.score},
                           {"epochs", s.fit.epochs_run},
                           {"best_epoch", s.fit.best_epoch},
                           {"best_valid_loss", s.fit.best_valid_loss},
                           {"pruned", s.pruned}});
    ctx.out << "BLEU " << label << " " << format_number(s.eval.bleu.score) << '\n';
  };
  run_sequential_plan(plan, corpora, vocab, cfg.train, so);
  write_text(cfg.out / "summary.json", json{{"stages", summary}}.dump(1) + "\n");
  export_analysis(bundle, cfg.out / "report");
  return 0;
}

int cmd_prune(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  Checkpoint ck = load_ckpt_flag(ctx);
  const ParallelCorpus test = test_corpus(ctx, ck);
  write_run_json(ctx);

  const ActivationDataset acts = capture_activations(ck.model, test, ck.source_vocab, ck.config.max_len, test.label());
  const MassActivationMatrix mass = mass_matrices(acts);
  const std::vector<std::size_t> neurons = select_prune_set(mass, cfg.prune.mode, cfg.prune.percent);
  prune_neuron_knowledge(ck.model, neurons);
  const std::size_t stage =
      ctx.flags.stage.empty() ? ck.provenance.stage : static_cast<std::size_t>(parse_u64(ctx.flags.stage, "--stage"));
  ck.provenance.prunes.push_back(PruneRecord{stage, cfg.prune.mode, cfg.prune.percent, neurons});
  save_checkpoint(ck, cfg.out / "model.lrmt");
  write_text(cfg.out / "prune.json", json{{"mode", std::string(prune_mode_name(cfg.prune.mode))},
                                          {"percent", cfg.prune.percent},
                                          {"stage", stage},
                                          {"width", mass.width},
                                          {"neurons", neurons}}
                                             .dump(1) +
                                         "\n");
  ctx.out << "pruned " << neurons.size() << " of " << mass.width << " neurons (" << prune_mode_name(cfg.prune.mode)
          << ")\n";
  return 0;
}

int cmd_evaluate(Context& ctx) {
  const Checkpoint ck = load_ckpt_flag(ctx);
  const ParallelCorpus test = test_corpus(ctx, ck);
  write_run_json(ctx);
  const EvalResult r = evaluate_for(ck, test, test.size());
  write_eval(ctx.cfg.out, ck.provenance.stage, test.label(), r);
  ctx.out << bleu_header() << bleu_row(ck.provenance.stage, test.label(), r.bleu);
  return 0;
}

int cmd_xray(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const Checkpoint ck = load_ckpt_flag(ctx);
  const ParallelCorpus test = test_corpus(ctx, ck);
  write_run_json(ctx);

  const std::string label = "stage" + std::to_string(ck.provenance.stage) + "-" + test.label();
  const ActivationDataset acts = capture_activations(ck.model, test, ck.source_vocab, ck.config.max_len, label);
  save_activations(cfg.out / "activations.lrma", acts);
  const MassActivationMatrix mass = mass_matrices(acts);
  write_text(cfg.out / "analysis.json", analysis_to_json(label, mass, nullptr, cfg.top_k) + "\n");
  const auto dead = dead_neurons(mass);
  write_text(cfg.out / "dead_neurons.json", json{{"width", mass.width}, {"dead", dead}}.dump(1) + "\n");
  AnalysisBundle b;
  b.add(label, mass);
  write_text(cfg.out / "knowledge.svg", render_knowledge_plot(b));
  for (std::size_t k : plot_neurons(mass, nullptr, cfg.pos_neurons)) {
    const auto d = pos_token_distribution(acts, k, cfg.pos_k);
    write_text(cfg.out / ("pos_n" + std::to_string(k) + ".svg"),
               render_pos_distribution(d, label + " neuron " + std::to_string(k)));
  }
  const KnowledgeAbstraction ka = knowledge_abstraction(mass);
  ctx.out << "width " << mass.width << " rows " << mass.rows << " dead " << dead.size() << " positive "
          << format_number(ka.positive) << " negative " << format_number(ka.negative) << '\n';
  return 0;
}

int cmd_report(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  std::vector<ReportStage> stages = cfg.report_stages;
  if (stages.empty()) {
    if (ctx.flags.ckpt.empty() || ctx.flags.ckpt.size() != ctx.flags.test.size()) {
      throw ConfigError("--ckpt", "pass matching --ckpt/--test pairs or set report.stages");
    }
    for (std::size_t i = 0; i < ctx.flags.ckpt.size(); ++i) {
      stages.push_back(ReportStage{"", ctx.flags.ckpt[i], ctx.flags.test[i], ""});
    }
  }
  for (const auto& s : stages) {
    require_file(s.checkpoint, "report.stages");
    require_file(s.test, "report.stages");
    ctx.inputs.push_back(s.checkpoint);
    ctx.inputs.push_back(s.test);
  }
  write_run_json(ctx);

  AnalysisBundle bundle;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const Checkpoint ck = load_checkpoint(stages[i].checkpoint);
    // Each checkpoint knows its own target language; --lang only fills gaps.
    std::string lang = stages[i].lang;
    if (lang.empty() && !ck.provenance.target_languages.empty()) lang = ck.provenance.target_languages.front();
    const ParallelCorpus test = read_tsv(stages[i].test, "en", lang_for(ctx, ck, lang), Split::test, cfg.max_tokens);
    const std::string label =
        stages[i].label.empty() ? "stage" + std::to_string(i) + "-" + test.label() : stages[i].label;
    const EvalResult r = evaluate_for(ck, test, cfg.samples);
    const ActivationDataset acts = capture_activations(ck.model, test, ck.source_vocab, ck.config.max_len, label);
    add_stage(bundle, label, acts, mass_matrices(acts), r, cfg);
  }
  const auto artifacts = export_analysis(bundle, cfg.out);
  ctx.out << "wrote " << artifacts.size() << " artifacts to " << cfg.out.string() << '\n';
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Low-resource machine translation workbench"};
  app.require_subcommand(1);
  Flags flags;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"prepare-data", "Clean TSV corpora or generate the synthetic corpus; writes a manifest"},
      {"train", "Train from scratch (copy pretraining when source and target languages agree)"},
      {"transfer", "1-hop transfer from a pretrained checkpoint with the encoder frozen"},
      {"multitask", "Joint multi-target training from a pretrained checkpoint"},
      {"sequential", "Run a staged transfer plan with optional pruning"},
      {"prune", "Prune encoder neurons of a checkpoint by activation mass"},
      {"evaluate", "BLEU-4 of a checkpoint on a test corpus"},
      {"xray", "Capture encoder activations and mass matrices"},
      {"report", "Export plots and tables for a list of checkpoints"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", flags.config, "JSON file with flat dotted keys");
    sub->add_option("--seed", flags.seed, "Random seed");
    sub->add_option("--out", flags.out, "Output directory");
    sub->add_option("--stage", flags.stage, "Last plan stage to run, or stage recorded by prune");
    sub->add_option("--mode", flags.mode, "Prune mode: none, dead, most_n, least_n");
    sub->add_option("--percent", flags.percent, "Prune percentage");
    sub->add_option("--arch", flags.arch, "Architecture")->check(CLI::IsMember({"lstm", "gru", "abgru"}));
    sub->add_option("--ckpt", flags.ckpt, "Checkpoint file (repeatable for report)");
    sub->add_option("--test", flags.test, "Test TSV (repeatable for report)");
    sub->add_option("--lang", flags.lang, "Target language of --test");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    Context ctx{command, build_config(flags), flags, out, {}};
    if (command == "prepare-data") return cmd_prepare(ctx);
    if (command == "train") return cmd_train(ctx);
    if (command == "transfer") return cmd_transfer(ctx);
    if (command == "multitask") return cmd_multitask(ctx);
    if (command == "sequential") return cmd_sequential(ctx);
    if (command == "prune") return cmd_prune(ctx);
    if (command == "evaluate") return cmd_evaluate(ctx);
    if (command == "xray") return cmd_xray(ctx);
    if (command == "report") return cmd_report(ctx);
    err << "unknown command " << command << '\n';
    return 2;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace lrmt::cli
