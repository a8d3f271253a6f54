#include "lrmt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

namespace lrmt {

namespace {

using Gram = std::span<const std::string>;

struct GramLess {
  bool operator()(Gram a, Gram b) const {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
  }
};

std::map<Gram, std::size_t, GramLess> count_grams(const Tokens& tokens, std::size_t n) {
  std::map<Gram, std::size_t, GramLess> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[Gram(tokens.data() + i, n)];
  return counts;
}

}  // namespace

BleuReport bleu4(std::span<const Tokens> candidates, std::span<const Tokens> references) {
  if (candidates.empty()) throw std::invalid_argument("bleu4: empty corpus");
  if (candidates.size() != references.size()) {
    throw std::invalid_argument("bleu4: " + std::to_string(candidates.size()) + " candidates but " +
                                std::to_string(references.size()) + " references");
  }
  BleuReport rep;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Tokens& c = candidates[i];
    const Tokens& r = references[i];
    rep.candidate_length += c.size();
    rep.reference_length += r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      if (c.size() < n) continue;
      rep.totals[n - 1] += c.size() - n + 1;
      const auto ref_counts = count_grams(r, n);
      for (const auto& [gram, count] : count_grams(c, n)) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) rep.matches[n - 1] += std::min(count, it->second);
      }
    }
  }
  bool any_zero = false;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    rep.precisions[n] = rep.totals[n] == 0 ? 0.0
                                           : static_cast<double>(rep.matches[n]) / static_cast<double>(rep.totals[n]);
    if (rep.precisions[n] == 0.0) {
      any_zero = true;
    } else {
      log_sum += 0.25 * std::log(rep.precisions[n]);
    }
  }
  const auto c = static_cast<double>(rep.candidate_length);
  const auto r = static_cast<double>(rep.reference_length);
  if (rep.candidate_length == 0) {
    rep.brevity_penalty = 0.0;
  } else {
    rep.brevity_penalty = c < r ? std::exp(1.0 - r / c) : 1.0;
  }
  rep.score = any_zero ? 0.0 : rep.brevity_penalty * std::exp(log_sum);
  return rep;
}

EvalResult evaluate_corpus(const Seq2SeqModel& model, const ParallelCorpus& corpus,
                           const Vocabulary& source_vocab, const Vocabulary& target_vocab,
                           const EvalOptions& options) {
  if (corpus.pairs.empty()) throw std::invalid_argument("evaluate_corpus: empty corpus " + corpus.label());
  if (source_vocab.size() != model.dims().source_vocab || target_vocab.size() != model.dims().target_vocab) {
    throw std::invalid_argument("evaluate_corpus: vocabulary sizes do not match the model");
  }
  if (options.batch_size == 0 || options.max_len == 0) throw std::invalid_argument("evaluate_corpus: bad options");
  std::vector<EncodedPair> encoded;
  encoded.reserve(corpus.size());
  for (const auto& p : corpus.pairs) {
    const std::size_t n = std::min(p.source.size(), options.max_len);
    EncodedPair e;
    e.source = encode(std::span<const std::string>(p.source.data(), n), source_vocab);
    e.target = {Vocabulary::kSos, Vocabulary::kEos};
    e.control = options.control;
    encoded.push_back(std::move(e));
  }
  EvalResult res;
  res.hypotheses.reserve(corpus.size());
  for (std::size_t start = 0; start < encoded.size(); start += options.batch_size) {
    const std::size_t end = std::min(encoded.size(), start + options.batch_size);
    std::vector<const EncodedPair*> rows;
    for (std::size_t i = start; i < end; ++i) rows.push_back(&encoded[i]);
    const Batch batch = make_batch(rows, options.control >= 0);
    for (const auto& ids : model.greedy_decode(batch, options.max_len)) {
      res.hypotheses.push_back(decode_ids(ids, target_vocab));
    }
  }
  std::vector<Tokens> refs;
  refs.reserve(corpus.size());
  for (const auto& p : corpus.pairs) refs.push_back(p.target);
  res.bleu = bleu4(res.hypotheses, refs);
  for (std::size_t i = 0; i < std::min(options.samples, corpus.size()); ++i) {
    res.samples.push_back({join_tokens(corpus.pairs[i].source), join_tokens(corpus.pairs[i].target),
                           join_tokens(res.hypotheses[i])});
  }
  return res;
}

std::string translations_tsv(std::span<const Translation> rows) {
  std::string out = "source\treference\thypothesis\n";
  for (const auto& r : rows) out += r.source + '\t' + r.reference + '\t' + r.hypothesis + '\n';
  return out;
}

void write_translations(const std::filesystem::path& path, std::span<const Translation> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write translations to " + path.string());
  out << translations_tsv(rows);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace lrmt
