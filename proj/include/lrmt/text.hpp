#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lrmt/tensor.hpp"

namespace lrmt {

using Tokens = std::vector<std::string>;

// ---------------------------------------------------------------------------
// Preprocessing and tokenisation

struct PreprocessOptions {
  /// Expand the bundled English contraction table ("won't" -> "will not").
  bool expand_contractions = true;
};

/// Lowercase, expand contractions, drop characters outside letters, digits,
/// basic punctuation and whitespace, pad punctuation with spaces and collapse
/// whitespace. An empty result means the caller should drop the line.
std::string preprocess(std::string_view raw, const PreprocessOptions& options = {});

/// Whitespace split; trailing punctuation is split into its own token.
Tokens tokenize(std::string_view text);

std::string join_tokens(std::span<const std::string> tokens);

// ---------------------------------------------------------------------------
// Vocabulary

class Vocabulary {
public:
  static constexpr int kPad = 0;
  static constexpr int kSos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr std::array<std::string_view, 4> kSpecials{"<pad>", "<sos>", "<eos>", "<unk>"};

  Vocabulary();
  /// Rebuild from an id-ordered token list; the first four must be the specials.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  int id(std::string_view token) const;  // kUnk for unknown tokens
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  /// Appends `token` if absent; returns its id.
  int add(const std::string& token);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

  std::string to_json() const;
  static Vocabulary from_json(std::string_view json);

private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Control token that asks a multi-target decoder for language `lang`.
std::string language_token(std::string_view lang);

// ---------------------------------------------------------------------------
// Corpora

enum class Split { train, valid, test };
std::string_view split_name(Split s);

struct SentencePair {
  Tokens source;
  Tokens target;
};

struct ParallelCorpus {
  std::string source_lang = "en";
  std::string target_lang;
  Split split = Split::train;
  std::vector<SentencePair> pairs;

  std::string label() const { return source_lang + "-" + target_lang; }
  std::size_t size() const noexcept { return pairs.size(); }
};

enum class Side { source, target };

/// Ids 0..3 are the specials, remaining tokens by descending frequency then
/// lexicographically. Tokens seen fewer than `min_freq` times are left out and
/// therefore encode to unk. `extra` tokens are appended at the end.
Vocabulary build_vocab(std::span<const ParallelCorpus> corpora, Side side, std::size_t min_freq = 1,
                       std::span<const std::string> extra = {});

/// [sos] + ids + [eos]; unknown tokens become unk.
std::vector<int> encode(std::span<const std::string> tokens, const Vocabulary& vocab);

/// Inverse of encode for decoder output: stops at eos, skips sos and pad.
Tokens decode_ids(std::span<const int> ids, const Vocabulary& vocab);

struct EncodedPair {
  std::vector<int> source;
  std::vector<int> target;
  /// Target-language control token id in the source vocabulary, or -1.
  int control = -1;
  /// Index into the originating corpus list (language of the pair).
  int origin = 0;
};

std::vector<EncodedPair> encode_corpus(const ParallelCorpus& corpus, const Vocabulary& source,
                                       const Vocabulary& target, int control = -1, int origin = 0);

struct Batch {
  std::size_t rows = 0;
  std::size_t source_len = 0;
  std::size_t target_len = 0;
  /// Row-major [rows x source_len], padded with 0.
  std::vector<int> source;
  std::vector<std::size_t> source_lengths;
  /// Row-major [rows x target_len], padded with 0.
  std::vector<int> target;
  std::vector<std::size_t> target_lengths;
  std::vector<int> origin;

  int src(std::size_t r, std::size_t t) const { return source[r * source_len + t]; }
  int tgt(std::size_t r, std::size_t t) const { return target[r * target_len + t]; }
};

struct BatchOptions {
  std::size_t batch_size = 40;
  /// Insert EncodedPair::control after sos on the source side.
  bool insert_control = true;
  bool shuffle = true;
};

/// Pads a fixed list of pairs into one batch.
Batch make_batch(std::span<const EncodedPair* const> pairs, bool insert_control);

/// Deterministic shuffle from `rng`, then consecutive slices of batch_size.
std::vector<Batch> make_batches(std::span<const EncodedPair> pairs, const BatchOptions& options,
                                Rng& rng);

// ---------------------------------------------------------------------------
// Part-of-speech tags (Universal POS)

enum class PosTag : std::uint8_t {
  ADJ, ADP, ADV, AUX, CCONJ, DET, INTJ, NOUN, NUM, PART, PRON, PROPN, PUNCT, SCONJ, SYM, VERB, X
};
inline constexpr std::size_t kPosTagCount = 17;

std::string_view pos_name(PosTag tag);
std::optional<PosTag> pos_from_name(std::string_view name);

/// Rule tagger: closed-class lexicon, then digit/punctuation checks, then
/// suffix rules, defaulting to NOUN.
std::vector<PosTag> pos_tag(std::span<const std::string> tokens);
PosTag pos_tag_one(std::string_view token);

// ---------------------------------------------------------------------------
// Files

/// Tab-separated source/target per line. Lines are preprocessed and tokenised;
/// pairs with an empty side, or longer than `max_len` tokens when max_len > 0,
/// are dropped.
ParallelCorpus read_tsv(const std::filesystem::path& path, std::string source_lang,
                        std::string target_lang, Split split, std::size_t max_len = 0);

/// Writes tokenised pairs back as TSV (tokens joined by single spaces).
void write_tsv(const std::filesystem::path& path, const ParallelCorpus& corpus);

/// One language pair as named by a manifest.
struct CorpusEntry {
  std::string id;  // e.g. "en-de"
  std::string source_lang;
  std::string target_lang;
  std::filesystem::path train;
  std::optional<std::filesystem::path> valid;
  std::filesystem::path test;
};

struct CorpusManifest {
  std::vector<CorpusEntry> corpora;

  const CorpusEntry& find(std::string_view id) const;
  bool contains(std::string_view id) const;

  /// Relative paths in the file resolve against the manifest's directory.
  static CorpusManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// Carve `fraction` of `corpus` (seeded) into a second corpus; the remainder
/// stays in `corpus`.
ParallelCorpus carve_split(ParallelCorpus& corpus, double fraction, Split split, Rng& rng);

}  // namespace lrmt
