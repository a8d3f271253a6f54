#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lrmt/format_error.hpp"
#include "lrmt/model.hpp"
#include "lrmt/text.hpp"

namespace lrmt {

/// Encoder states for one test sentence, one row per source token.
struct ActivationSentence {
  Tokens tokens;
  std::vector<PosTag> tags;
  Tensor activations;  // [tokens x width]

  bool operator==(const ActivationSentence&) const = default;
};

struct ActivationDataset {
  std::size_t width = 0;
  std::string provenance;
  std::vector<ActivationSentence> sentences;

  std::size_t rows() const;
  bool operator==(const ActivationDataset&) const = default;
};

/// Runs the encoder in evaluation mode over every source sentence. Rows for
/// sos, eos and padding are not recorded. Sources longer than max_len are
/// truncated.
ActivationDataset capture_activations(const Seq2SeqModel& model, const ParallelCorpus& corpus,
                                      const Vocabulary& source_vocab, std::size_t max_len = 50,
                                      std::string provenance = {});

/// Per-neuron aggregates over every activation row.
struct MassActivationMatrix {
  std::size_t width = 0;
  std::size_t rows = 0;
  std::vector<double> signed_mass;
  std::vector<double> magnitude_mass;
  /// Sum of activations at rows where the neuron had the largest |activation|.
  std::vector<double> max_mass;
  std::vector<std::uint64_t> hit_count;

  bool operator==(const MassActivationMatrix&) const = default;
};

/// Single pass; argmax ties go to the lowest neuron index.
MassActivationMatrix mass_matrices(const ActivationDataset& acts);

/// Neurons that never won the magnitude argmax.
std::vector<std::size_t> dead_neurons(const MassActivationMatrix& mass);

enum class PruneMode { none, dead, most_n, least_n };
std::string_view prune_mode_name(PruneMode m);
PruneMode prune_mode_from_name(std::string_view name);

/// floor(percent * N / 100)
std::size_t prune_count(std::size_t width, double percent);

/// Sorted neuron ids. most_n / least_n rank by magnitude mass (descending /
/// ascending, ties to the lower index); dead ignores percent.
std::vector<std::size_t> select_prune_set(const MassActivationMatrix& mass, PruneMode mode, double percent);

/// Zero and freeze the incoming weights and biases of each analysis neuron.
void prune_neuron_knowledge(Seq2SeqModel& model, std::span<const std::size_t> neurons);

struct KnowledgeAbstraction {
  double positive = 0.0;
  double negative = 0.0;
  double overall = 0.0;
};

KnowledgeAbstraction knowledge_abstraction(const MassActivationMatrix& mass);

struct MassChange {
  std::vector<double> delta;  // after - before, per neuron
  /// All neuron ids ordered by |delta| descending (most) and ascending (least),
  /// ties to the lower index.
  std::vector<std::size_t> most_changed;
  std::vector<std::size_t> least_changed;
};

MassChange change_in_mass(const MassActivationMatrix& before, const MassActivationMatrix& after);

struct PosTokenEntry {
  std::string token;
  PosTag tag = PosTag::X;
  double mean = 0.0;
  double normalized = 0.0;
  std::size_t count = 0;
};

struct PosTokenDistribution {
  std::size_t neuron = 0;
  /// One entry per unique token, in order of first appearance.
  std::vector<PosTokenEntry> entries;
  /// Indices into entries: the k largest |normalized|, ties to earlier entries.
  std::vector<std::size_t> top;
  /// Share of each POS class among unique tokens with a positive mean.
  std::array<double, kPosTagCount> density{};
};

PosTokenDistribution pos_token_distribution(const ActivationDataset& acts, std::size_t neuron, std::size_t k);

// Binary dump: "LRMA", u32 version, u64 width, u64 sentence count, provenance
// string, then per sentence the tokens, one tag byte per token and the
// row-major f64 block; trailing CRC32.
void save_activations(const std::filesystem::path& path, const ActivationDataset& acts);
ActivationDataset load_activations(const std::filesystem::path& path);
std::string activations_to_json(const ActivationDataset& acts);

/// JSON analysis record; `change` supplies top_changed (up to top_k entries).
std::string analysis_to_json(std::string_view stage, const MassActivationMatrix& mass,
                             const MassChange* change = nullptr, std::size_t top_k = 10);

}  // namespace lrmt
