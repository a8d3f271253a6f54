#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lrmt/model.hpp"
#include "lrmt/text.hpp"

namespace lrmt {

/// Corpus-level BLEU-4 with uniform weights and the standard brevity penalty.
struct BleuReport {
  double score = 0.0;
  std::array<double, 4> precisions{};
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  double brevity_penalty = 0.0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
};

/// One reference per candidate. A precision with no candidate n-grams counts
/// as 0, and any zero precision makes the score 0 (no smoothing).
BleuReport bleu4(std::span<const Tokens> candidates, std::span<const Tokens> references);

struct Translation {
  std::string source;
  std::string reference;
  std::string hypothesis;
};

struct EvalOptions {
  /// Source sentences are truncated to this many tokens; it also caps the
  /// decoded length.
  std::size_t max_len = 50;
  std::size_t batch_size = 64;
  /// Number of leading translation triples kept for reports.
  std::size_t samples = 10;
  /// Source-side control token id (multi-target decoders), or -1.
  int control = -1;
};

struct EvalResult {
  BleuReport bleu;
  std::vector<Tokens> hypotheses;
  std::vector<Translation> samples;
};

EvalResult evaluate_corpus(const Seq2SeqModel& model, const ParallelCorpus& corpus,
                           const Vocabulary& source_vocab, const Vocabulary& target_vocab,
                           const EvalOptions& options = {});

std::string translations_tsv(std::span<const Translation> rows);
/// TSV with header `source\treference\thypothesis`.
void write_translations(const std::filesystem::path& path, std::span<const Translation> rows);

}  // namespace lrmt
