#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "lrmt/tensor.hpp"
#include "lrmt/text.hpp"

namespace lrmt::synthetic {

/// Small English grammar (60 word types) for desk-scale experiments:
///   DET [ADJ] NOUN VERB DET [ADJ] NOUN [ADP DET [ADJ] NOUN] [ADV] PUNCT
struct GrammarOptions {
  double adjective_rate = 0.5;
  double adverb_rate = 0.3;
  double phrase_rate = 0.25;
};

/// `n` distinct English sentences. Throws if the grammar cannot supply n.
std::vector<Tokens> english_sentences(std::size_t n, Rng& rng, const GrammarOptions& options = {});

/// Word types the grammar can emit.
std::vector<std::string> english_lexicon();

/// Target languages with a bundled dictionary: "en" (copy), "de", "fr", "es".
bool supports_language(std::string_view lang);

/// Word-by-word substitution with per-language reordering: fr/es put
/// adjectives after their noun, de moves the adverb right after the verb.
Tokens translate(std::span<const std::string> english, std::string_view lang);

struct Splits {
  ParallelCorpus train;
  ParallelCorpus valid;
  ParallelCorpus test;
};

/// Translate `english` into `lang` and cut it into train/valid/test with the
/// given fractions (test and valid taken from the end of a seeded shuffle).
Splits make_splits(const std::vector<Tokens>& english, std::string_view lang, double valid_fraction,
                   double test_fraction, Rng& rng);

}  // namespace lrmt::synthetic
