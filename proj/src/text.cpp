#include "lrmt/text.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace lrmt {

namespace {

// --- UTF-8 ------------------------------------------------------------------

std::vector<char32_t> decode_utf8(std::string_view s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    int extra = 0;
    char32_t cp = 0;
    if (c < 0x80) {
      cp = c;
    } else if ((c >> 5) == 0x6) {
      cp = c & 0x1f;
      extra = 1;
    } else if ((c >> 4) == 0xe) {
      cp = c & 0x0f;
      extra = 2;
    } else if ((c >> 3) == 0x1e) {
      cp = c & 0x07;
      extra = 3;
    } else {
      // Stray continuation or invalid lead byte.
      out.push_back(U' ');
      ++i;
      continue;
    }
    if (i + static_cast<std::size_t>(extra) >= s.size()) {
      out.push_back(U' ');
      break;
    }
    bool ok = true;
    for (int k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
      if ((cc >> 6) != 0x2) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (cc & 0x3f);
    }
    if (!ok) {
      out.push_back(U' ');
      ++i;
      continue;
    }
    out.push_back(cp);
    i += static_cast<std::size_t>(extra) + 1;
  }
  return out;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xc0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3f));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xe0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
    out += static_cast<char>(0x80 | (cp & 0x3f));
  } else {
    out += static_cast<char>(0xf0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3f));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
    out += static_cast<char>(0x80 | (cp & 0x3f));
  }
}

// Latin letters: ASCII plus Latin-1 Supplement and Latin Extended-A/B.
bool is_letter(char32_t c) {
  if ((c >= U'a' && c <= U'z') || (c >= U'A' && c <= U'Z')) return true;
  return c >= 0xc0 && c <= 0x24f && c != 0xd7 && c != 0xf7;
}

bool is_digit(char32_t c) { return c >= U'0' && c <= U'9'; }

bool is_split_punct(char32_t c) {
  switch (c) {
    case U'.': case U',': case U'!': case U'?': case U';': case U':': case 0xbf: case 0xa1:
      return true;
    default:
      return false;
  }
}

char32_t to_lower(char32_t c) {
  if (c >= U'A' && c <= U'Z') return c + 32;
  if (c >= 0xc0 && c <= 0xde && c != 0xd7) return c + 32;
  if (c >= 0x100 && c <= 0x17f && (c % 2 == 0) && c != 0x130 && c != 0x138) return c + 1;
  return c;
}

// --- contractions -------------------------------------------------------------

const std::map<std::string, std::string, std::less<>>& whole_word_contractions() {
  static const std::map<std::string, std::string, std::less<>> table{
      {"won't", "will not"},   {"can't", "can not"},     {"shan't", "shall not"},
      {"ain't", "is not"},     {"let's", "let us"},      {"i'm", "i am"},
      {"it's", "it is"},       {"he's", "he is"},        {"she's", "she is"},
      {"that's", "that is"},   {"what's", "what is"},    {"there's", "there is"},
      {"here's", "here is"},   {"where's", "where is"},  {"who's", "who is"},
      {"how's", "how is"},     {"y'all", "you all"},
  };
  return table;
}

struct SuffixRule {
  std::string_view suffix;
  std::string_view expansion;
};

constexpr std::array<SuffixRule, 6> kSuffixContractions{{
    {"n't", " not"},
    {"'re", " are"},
    {"'ve", " have"},
    {"'ll", " will"},
    {"'d", " would"},
    {"'m", " am"},
}};

std::string expand_contraction(const std::string& word) {
  const auto& table = whole_word_contractions();
  if (auto it = table.find(word); it != table.end()) return it->second;
  for (const auto& rule : kSuffixContractions) {
    if (word.size() > rule.suffix.size() && word.ends_with(rule.suffix)) {
      return word.substr(0, word.size() - rule.suffix.size()) + std::string(rule.expansion);
    }
  }
  return word;
}

std::string strip_stray_apostrophes(const std::string& word) {
  std::string out;
  for (std::size_t i = 0; i < word.size(); ++i) {
    if (word[i] == '\'') {
      const bool inner = i > 0 && i + 1 < word.size() && word[i - 1] != '\'' && word[i + 1] != '\'';
      if (!inner) continue;
    }
    out += word[i];
  }
  return out;
}

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

bool is_punct_token(std::string_view tok) {
  const auto cps = decode_utf8(tok);
  return cps.size() == 1 && is_split_punct(cps[0]);
}

}  // namespace

std::string preprocess(std::string_view raw, const PreprocessOptions& options) {
  std::string spaced;
  for (char32_t c : decode_utf8(raw)) {
    if (c == 0x2019 || c == 0x2018 || c == U'`') c = U'\'';
    c = to_lower(c);
    if (is_letter(c) || is_digit(c) || c == U'\'') {
      append_utf8(spaced, c);
    } else if (is_split_punct(c)) {
      spaced += ' ';
      append_utf8(spaced, c);
      spaced += ' ';
    } else {
      spaced += ' ';
    }
  }
  std::string out;
  for (const auto& word : split_ws(spaced)) {
    std::string w = options.expand_contractions ? expand_contraction(word) : word;
    for (const auto& piece : split_ws(w)) {
      std::string clean = strip_stray_apostrophes(piece);
      if (clean.empty()) continue;
      if (!out.empty()) out += ' ';
      out += clean;
    }
  }
  return out;
}

Tokens tokenize(std::string_view text) {
  Tokens out;
  for (const auto& chunk : split_ws(text)) {
    const auto cps = decode_utf8(chunk);
    std::size_t begin = 0;
    std::size_t end = cps.size();
    std::vector<std::string> leading;
    std::vector<std::string> trailing;
    while (begin < end && is_split_punct(cps[begin]) && end - begin > 1) {
      std::string p;
      append_utf8(p, cps[begin++]);
      leading.push_back(std::move(p));
    }
    while (end > begin + 1 && is_split_punct(cps[end - 1])) {
      std::string p;
      append_utf8(p, cps[--end]);
      trailing.push_back(std::move(p));
    }
    out.insert(out.end(), leading.begin(), leading.end());
    std::string core;
    for (std::size_t i = begin; i < end; ++i) append_utf8(core, cps[i]);
    if (!core.empty()) out.push_back(std::move(core));
    out.insert(out.end(), trailing.rbegin(), trailing.rend());
  }
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// --- Vocabulary -----------------------------------------------------------------

Vocabulary::Vocabulary() {
  for (auto s : kSpecials) add(std::string(s));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kSpecials.size()) throw std::invalid_argument("vocabulary lacks the reserved tokens");
  for (std::size_t i = 0; i < kSpecials.size(); ++i) {
    if (tokens[i] != kSpecials[i]) {
      throw std::invalid_argument("vocabulary id " + std::to_string(i) + " must be " +
                                  std::string(kSpecials[i]));
    }
  }
  Vocabulary v;
  for (std::size_t i = kSpecials.size(); i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) throw std::invalid_argument("duplicate vocabulary token: " + tokens[i]);
    v.add(tokens[i]);
  }
  return v;
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.find(std::string(token)) != index_.end();
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("vocabulary id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::add(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

std::string Vocabulary::to_json() const { return nlohmann::json(tokens_).dump(); }

Vocabulary Vocabulary::from_json(std::string_view json) {
  return from_tokens(nlohmann::json::parse(json).get<std::vector<std::string>>());
}

std::string language_token(std::string_view lang) { return "<2" + std::string(lang) + ">"; }

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

Vocabulary build_vocab(std::span<const ParallelCorpus> corpora, Side side, std::size_t min_freq,
                       std::span<const std::string> extra) {
  if (corpora.empty()) throw std::invalid_argument("build_vocab: no corpora");
  std::map<std::string, std::size_t> counts;
  for (const auto& c : corpora) {
    for (const auto& p : c.pairs) {
      for (const auto& t : side == Side::source ? p.source : p.target) ++counts[t];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [tok, n] : ranked) {
    if (n >= min_freq) v.add(tok);
  }
  for (const auto& t : extra) v.add(t);
  return v;
}

std::vector<int> encode(std::span<const std::string> tokens, const Vocabulary& vocab) {
  std::vector<int> ids;
  ids.reserve(tokens.size() + 2);
  ids.push_back(Vocabulary::kSos);
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  ids.push_back(Vocabulary::kEos);
  return ids;
}

Tokens decode_ids(std::span<const int> ids, const Vocabulary& vocab) {
  Tokens out;
  for (int id : ids) {
    if (id == Vocabulary::kEos) break;
    if (id == Vocabulary::kSos || id == Vocabulary::kPad) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

std::vector<EncodedPair> encode_corpus(const ParallelCorpus& corpus, const Vocabulary& source,
                                       const Vocabulary& target, int control, int origin) {
  std::vector<EncodedPair> out;
  out.reserve(corpus.pairs.size());
  for (const auto& p : corpus.pairs) {
    out.push_back(EncodedPair{encode(p.source, source), encode(p.target, target), control, origin});
  }
  return out;
}

Batch make_batch(std::span<const EncodedPair* const> pairs, bool insert_control) {
  Batch b;
  b.rows = pairs.size();
  for (const auto* p : pairs) {
    const std::size_t sl = p->source.size() + (insert_control && p->control >= 0 ? 1 : 0);
    b.source_len = std::max(b.source_len, sl);
    b.target_len = std::max(b.target_len, p->target.size());
  }
  b.source.assign(b.rows * b.source_len, Vocabulary::kPad);
  b.target.assign(b.rows * b.target_len, Vocabulary::kPad);
  for (std::size_t r = 0; r < b.rows; ++r) {
    const EncodedPair& p = *pairs[r];
    std::size_t t = 0;
    for (std::size_t i = 0; i < p.source.size(); ++i) {
      b.source[r * b.source_len + t++] = p.source[i];
      if (i == 0 && insert_control && p.control >= 0) b.source[r * b.source_len + t++] = p.control;
    }
    b.source_lengths.push_back(t);
    std::copy(p.target.begin(), p.target.end(), b.target.begin() + static_cast<std::ptrdiff_t>(r * b.target_len));
    b.target_lengths.push_back(p.target.size());
    b.origin.push_back(p.origin);
  }
  return b;
}

std::vector<Batch> make_batches(std::span<const EncodedPair> pairs, const BatchOptions& options,
                                Rng& rng) {
  if (options.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (options.shuffle) rng.shuffle(order);
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
    const std::size_t end = std::min(order.size(), start + options.batch_size);
    std::vector<const EncodedPair*> rows;
    for (std::size_t i = start; i < end; ++i) rows.push_back(&pairs[order[i]]);
    out.push_back(make_batch(rows, options.insert_control));
  }
  return out;
}

// --- POS tagger -------------------------------------------------------------------

namespace {

constexpr std::array<std::string_view, kPosTagCount> kPosNames{
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM",
    "PART", "PRON", "PROPN", "PUNCT", "SCONJ", "SYM", "VERB", "X"};

const std::unordered_map<std::string, PosTag>& pos_lexicon() {
  static const std::unordered_map<std::string, PosTag> lex = [] {
    std::unordered_map<std::string, PosTag> m;
    auto put = [&m](PosTag tag, std::initializer_list<const char*> words) {
      for (const char* w : words) m.emplace(w, tag);
    };
    put(PosTag::DET, {"the", "a", "an", "this", "that", "these", "those", "my", "your", "his",
                      "her", "its", "our", "their", "some", "any", "no", "every", "each",
                      "all", "both", "either", "neither", "another", "which", "whose"});
    put(PosTag::PRON, {"i", "you", "he", "she", "it", "we", "they", "me", "him", "us", "them",
                       "myself", "yourself", "himself", "herself", "itself", "ourselves",
                       "themselves", "mine", "yours", "hers", "ours", "theirs", "who", "whom",
                       "what", "someone", "something", "anyone", "anything", "nobody",
                       "nothing", "everyone", "everything", "one"});
    put(PosTag::ADP, {"in", "on", "at", "by", "for", "with", "about", "against", "between",
                      "into", "through", "during", "before", "after", "above", "below", "to",
                      "from", "up", "down", "of", "off", "over", "under", "near", "without",
                      "behind", "across", "around", "since", "until", "like"});
    put(PosTag::CCONJ, {"and", "or", "but", "nor", "yet", "so"});
    put(PosTag::SCONJ, {"if", "because", "although", "though", "while", "when", "where",
                        "whether", "than", "unless", "as"});
    put(PosTag::AUX, {"is", "are", "was", "were", "be", "been", "being", "am", "do", "does",
                      "did", "have", "has", "had", "will", "would", "shall", "should", "can",
                      "could", "may", "might", "must"});
    put(PosTag::PART, {"not"});
    put(PosTag::INTJ, {"oh", "hello", "hi", "yes", "wow", "please", "thanks", "okay", "ok"});
    put(PosTag::ADV, {"very", "too", "also", "here", "there", "now", "then", "always", "never",
                      "often", "again", "still", "already", "soon", "today", "tomorrow",
                      "yesterday", "well", "just", "only", "how", "why", "almost", "quite"});
    // Frequent open-class words whose form the suffix rules get wrong.
    put(PosTag::VERB, {"go", "goes", "went", "see", "sees", "saw", "like", "likes", "want",
                       "wants", "take", "takes", "took", "make", "makes", "made", "know",
                       "knows", "knew", "eat", "eats", "ate", "read", "reads", "love", "loves",
                       "find", "finds", "found", "give", "gives", "gave", "come", "comes",
                       "came", "get", "gets", "got", "need", "needs", "think", "thinks",
                       "buy", "buys", "bought", "hear", "hears", "heard", "help", "helps",
                       "say", "says", "said", "tell", "tells", "told", "write", "writes"});
    put(PosTag::ADJ, {"good", "bad", "big", "small", "old", "new", "young", "red", "blue",
                      "green", "black", "white", "happy", "sad", "tall", "short", "long",
                      "little", "great", "nice", "hot", "cold", "fast", "slow", "quiet",
                      "loud", "busy", "tired", "hungry", "rich", "poor", "late", "early"});
    return m;
  }();
  return lex;
}

}  // namespace

std::string_view pos_name(PosTag tag) { return kPosNames[static_cast<std::size_t>(tag)]; }

std::optional<PosTag> pos_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kPosNames.size(); ++i) {
    if (kPosNames[i] == name) return static_cast<PosTag>(i);
  }
  return std::nullopt;
}

PosTag pos_tag_one(std::string_view token) {
  if (token.empty()) return PosTag::X;
  const auto& lex = pos_lexicon();
  if (auto it = lex.find(std::string(token)); it != lex.end()) return it->second;
  if (is_punct_token(token)) return PosTag::PUNCT;
  bool all_digits = true;
  bool any_letter = false;
  for (char c : token) {
    if (!(c >= '0' && c <= '9') && c != '.' && c != ',') all_digits = false;
    if ((c >= 'a' && c <= 'z') || static_cast<unsigned char>(c) >= 0x80) any_letter = true;
  }
  if (all_digits && token.front() >= '0' && token.front() <= '9') return PosTag::NUM;
  if (!any_letter) return PosTag::SYM;
  auto ends = [&](std::string_view s) { return token.size() > s.size() + 1 && token.ends_with(s); };
  if (ends("ly")) return PosTag::ADV;
  if (ends("ing") || ends("ed") || ends("ize") || ends("ise")) return PosTag::VERB;
  if (ends("ous") || ends("ful") || ends("ive") || ends("able") || ends("ible") || ends("less") ||
      ends("ic") || ends("al") || ends("ish")) {
    return PosTag::ADJ;
  }
  return PosTag::NOUN;
}

std::vector<PosTag> pos_tag(std::span<const std::string> tokens) {
  std::vector<PosTag> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(pos_tag_one(t));
  return out;
}

// --- files ------------------------------------------------------------------------

ParallelCorpus read_tsv(const std::filesystem::path& path, std::string source_lang,
                        std::string target_lang, Split split, std::size_t max_len) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file " + path.string());
  ParallelCorpus corpus;
  corpus.source_lang = std::move(source_lang);
  corpus.target_lang = std::move(target_lang);
  corpus.split = split;
  const PreprocessOptions src_opts{corpus.source_lang == "en"};
  const PreprocessOptions tgt_opts{corpus.target_lang == "en"};
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    const auto rest = std::string_view(line).substr(tab + 1);
    const auto tab2 = rest.find('\t');
    SentencePair p{tokenize(preprocess(std::string_view(line).substr(0, tab), src_opts)),
                   tokenize(preprocess(rest.substr(0, tab2), tgt_opts))};
    if (p.source.empty() || p.target.empty()) continue;
    if (max_len > 0 && (p.source.size() > max_len || p.target.size() > max_len)) continue;
    corpus.pairs.push_back(std::move(p));
  }
  return corpus;
}

void write_tsv(const std::filesystem::path& path, const ParallelCorpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus file " + path.string());
  for (const auto& p : corpus.pairs) out << join_tokens(p.source) << '\t' << join_tokens(p.target) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

const CorpusEntry& CorpusManifest::find(std::string_view id) const {
  for (const auto& c : corpora) {
    if (c.id == id) return c;
  }
  throw std::invalid_argument("corpus '" + std::string(id) + "' is not in the manifest");
}

bool CorpusManifest::contains(std::string_view id) const {
  return std::any_of(corpora.begin(), corpora.end(), [&](const auto& c) { return c.id == id; });
}

CorpusManifest CorpusManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  const auto j = nlohmann::json::parse(in);
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  CorpusManifest m;
  for (const auto& e : j.at("corpora")) {
    CorpusEntry c;
    c.source_lang = e.at("source").get<std::string>();
    c.target_lang = e.at("target").get<std::string>();
    c.id = e.value("id", c.source_lang + "-" + c.target_lang);
    c.train = resolve(e.at("train").get<std::string>());
    if (e.contains("valid") && !e["valid"].is_null()) c.valid = resolve(e["valid"].get<std::string>());
    c.test = resolve(e.at("test").get<std::string>());
    m.corpora.push_back(std::move(c));
  }
  return m;
}

void CorpusManifest::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["corpora"] = nlohmann::json::array();
  const auto base = path.parent_path();
  auto rel = [&](const std::filesystem::path& p) {
    return base.empty() ? p.generic_string() : std::filesystem::relative(p, base).generic_string();
  };
  for (const auto& c : corpora) {
    nlohmann::json e{{"id", c.id}, {"source", c.source_lang}, {"target", c.target_lang},
                     {"train", rel(c.train)}, {"test", rel(c.test)}};
    if (c.valid) e["valid"] = rel(*c.valid);
    j["corpora"].push_back(std::move(e));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << j.dump(2) << '\n';
}

ParallelCorpus carve_split(ParallelCorpus& corpus, double fraction, Split split, Rng& rng) {
  if (fraction <= 0.0 || fraction >= 1.0) throw std::invalid_argument("carve fraction must be in (0, 1)");
  std::vector<std::size_t> order(corpus.pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  auto n = static_cast<std::size_t>(fraction * static_cast<double>(order.size()));
  if (n == 0 && order.size() > 1) n = 1;
  std::vector<std::uint8_t> taken(order.size(), 0);
  for (std::size_t i = 0; i < n; ++i) taken[order[i]] = 1;
  ParallelCorpus carved;
  carved.source_lang = corpus.source_lang;
  carved.target_lang = corpus.target_lang;
  carved.split = split;
  std::vector<SentencePair> kept;
  for (std::size_t i = 0; i < corpus.pairs.size(); ++i) {
    (taken[i] ? carved.pairs : kept).push_back(std::move(corpus.pairs[i]));
  }
  corpus.pairs = std::move(kept);
  return carved;
}

}  // namespace lrmt
