#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrmt/eval.hpp"
#include "lrmt/format_error.hpp"
#include "lrmt/model.hpp"
#include "lrmt/optim.hpp"
#include "lrmt/text.hpp"
#include "lrmt/xray.hpp"

namespace lrmt {

/// A configuration value that is unknown, mistyped or out of range.
class ConfigError : public std::invalid_argument {
public:
  ConfigError(std::string key, std::string detail)
      : std::invalid_argument(key + ": " + detail), key_(std::move(key)), detail_(std::move(detail)) {}
  const std::string& key() const noexcept { return key_; }
  /// Message without the key prefix.
  const std::string& detail() const noexcept { return detail_; }

private:
  std::string key_;
  std::string detail_;
};

/// Raised when a training batch produces a NaN or infinite loss.
class NonFiniteLoss : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  Arch arch = Arch::abgru;
  std::size_t embedding = 300;
  std::size_t layers = 1;
  std::size_t hidden = 512;
  /// Attention energy width; 0 means "same as hidden".
  std::size_t attention = 0;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  double dropout = 0.5;
  double lr = 1e-3;
  std::size_t batch_size = 40;
  double l2 = 1e-5;
  double clip_norm = 5.0;
  double tf_ratio = 0.5;
  std::uint64_t seed = 1;
  std::size_t max_len = 50;
  std::size_t min_freq = 1;
  /// Share of training pairs carved off for validation when a corpus has none.
  double valid_fraction = 0.1;
  /// Insert <2xx> after sos in multi-task mode.
  bool language_tokens = true;
  bool multitask_freeze_encoder = true;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
  ModelDims dims(std::size_t source_vocab, std::size_t target_vocab) const;

  /// Flat object with one key per field.
  nlohmann::json to_json() const;
  /// Overlays the keys present in `j` onto `base`; unknown keys are errors.
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
  static TrainConfig from_json(const nlohmann::json& j);

  bool operator==(const TrainConfig&) const = default;
};

struct PruneRecord {
  std::size_t stage = 0;
  PruneMode mode = PruneMode::none;
  double percent = 0.0;
  std::vector<std::size_t> neurons;
};

/// Where a checkpoint came from.
struct Provenance {
  std::string regime;  // copy, end-to-end, 1-hop, multitask, sequential
  std::size_t stage = 0;
  std::string dataset;
  std::vector<std::string> target_languages;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  double best_valid_loss = 0.0;
  std::vector<PruneRecord> prunes;
};

struct Checkpoint {
  TrainConfig config;
  Seq2SeqModel model;
  Vocabulary source_vocab;
  Vocabulary target_vocab;
  std::string rng_state;
  Provenance provenance;
};

// File layout: "LRMT", u32 version, u64 header length, JSON header, raw
// little-endian f64 tensor payloads in manifest order, CRC32 of all preceding
// bytes. Errors are FormatError with kind io, bad_magic, version, truncated,
// checksum or malformed; nothing is returned unless the whole file checks out.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Loops

struct EpochRecord {
  std::string stage;
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double seconds = 0.0;
};

using MetricsSink = std::function<void(const EpochRecord&)>;

/// One pass: loss, backward, clip, Adam step per batch. Returns the mean batch
/// loss. Throws NonFiniteLoss before touching the weights if a loss is not finite.
double train_epoch(Seq2SeqModel& model, std::span<const Batch> batches, const TrainConfig& config, Adam& optimizer,
                   Rng& rng);

/// Token-weighted cross-entropy with dropout off and full teacher forcing.
double validation_loss(const Seq2SeqModel& model, std::span<const Batch> batches);

/// Patience-based stopping on a validation loss sequence (strict improvement).
class EarlyStopping {
public:
  explicit EarlyStopping(std::size_t patience);

  /// Record the next epoch's loss; true if it is a new best.
  bool observe(double loss);
  bool should_stop() const noexcept { return since_best_ >= patience_; }
  std::size_t epochs() const noexcept { return epochs_; }
  /// 1-based epoch of the best loss (0 before any observation).
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  double best_loss() const noexcept { return best_; }

private:
  std::size_t patience_;
  std::size_t epochs_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_;
};

struct FitResult {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_valid_loss = 0.0;
  std::vector<EpochRecord> history;
};

/// Trains until patience runs out or max_epochs, then restores the weights of
/// the best validation epoch.
FitResult fit_with_early_stopping(Seq2SeqModel& model, std::span<const EncodedPair> train,
                                  std::span<const EncodedPair> valid, const TrainConfig& config, Rng& rng,
                                  const std::string& stage, const MetricsSink& metrics = {});

// ---------------------------------------------------------------------------
// Regimes

/// Train/valid/test splits of one language pair. An empty valid split is
/// carved from train (config.valid_fraction, seeded).
struct StageData {
  ParallelCorpus train;
  ParallelCorpus valid;
  ParallelCorpus test;
};

struct RunOptions {
  MetricsSink metrics;
};

/// Source vocabulary shared by every regime: source sides of all corpora plus
/// one control token per target language.
Vocabulary shared_source_vocab(std::span<const ParallelCorpus> corpora, std::size_t min_freq,
                               std::span<const std::string> target_languages);

/// Train a fresh model on one language pair.
Checkpoint train_end_to_end(const StageData& data, const Vocabulary& source_vocab, const TrainConfig& config,
                            const RunOptions& options = {});

/// Auto-encoding pretraining: targets are replaced by the sources.
Checkpoint pretrain_copy(const StageData& english, const Vocabulary& source_vocab, const TrainConfig& config,
                         const RunOptions& options = {});

/// Frozen-encoder transfer to one target language. Throws std::invalid_argument
/// if the corpus uses source tokens the pretrained vocabulary lacks.
Checkpoint transfer_1hop(const Checkpoint& pretrained, const StageData& target, const TrainConfig& config,
                         const RunOptions& options = {});

/// One decoder over the union of several target languages.
Checkpoint train_multitask_joint(const Checkpoint& pretrained, std::span<const StageData> corpora,
                                 const TrainConfig& config, const RunOptions& options = {});

struct PruneDirective {
  PruneMode mode = PruneMode::none;
  double percent = 0.0;
};

struct PlanStage {
  std::string dataset;
  bool freeze_encoder = true;
  PruneDirective prune;
  /// Dataset whose targets define this stage's vocabulary; empty means `dataset`.
  std::string target_vocab;
};

/// Stage 0 is copy pretraining; later stages are frozen-encoder transfers.
struct TransferPlan {
  std::vector<PlanStage> stages;

  void validate() const;
  nlohmann::json to_json() const;
  static TransferPlan from_json(const nlohmann::json& j);
};

struct StageOutcome {
  Checkpoint checkpoint;
  FitResult fit;
  EvalResult eval;
  std::vector<std::size_t> pruned;
  /// Mass of the trained stage model over the stage's test sources.
  MassActivationMatrix mass;
  ActivationDataset activations;
};

struct SequentialOptions {
  MetricsSink metrics;
  /// Called after each stage finishes (checkpoints, reports).
  std::function<void(std::size_t, const StageOutcome&)> on_stage;
  /// Keep activation datasets in the outcomes (for report plots).
  bool keep_activations = true;
};

/// Runs every stage in order. All datasets are checked before training starts.
std::vector<StageOutcome> run_sequential_plan(const TransferPlan& plan, const std::map<std::string, StageData>& corpora,
                                              const Vocabulary& source_vocab, const TrainConfig& config,
                                              const SequentialOptions& options = {});

/// Encode for a checkpoint's vocabularies (control = -1 for none).
std::vector<EncodedPair> encode_for(const ParallelCorpus& corpus, const Vocabulary& source, const Vocabulary& target,
                                    std::size_t max_len, int control = -1, int origin = 0);

}  // namespace lrmt
