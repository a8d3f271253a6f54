#include "lrmt/synthetic.hpp"

#include <array>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

namespace lrmt::synthetic {

namespace {

enum class Cat { det, adj, noun, verb, adv, adp, punct };

struct Entry {
  const char* en;
  Cat cat;
  const char* de;
  const char* fr;
  const char* es;
};

// clang-format off
constexpr std::array<Entry, 60> kLexicon{{
    {"the", Cat::det, "der", "le", "el"},
    {"a", Cat::det, "ein", "un", "un"},
    {"this", Cat::det, "dieser", "ce", "este"},
    {"my", Cat::det, "mein", "mon", "mi"},
    {"your", Cat::det, "dein", "ton", "tu"},
    {"every", Cat::det, "jeder", "chaque", "cada"},
    {"big", Cat::adj, "groß", "grand", "grande"},
    {"small", Cat::adj, "klein", "petit", "pequeño"},
    {"old", Cat::adj, "alt", "vieux", "viejo"},
    {"young", Cat::adj, "jung", "jeune", "joven"},
    {"red", Cat::adj, "rot", "rouge", "rojo"},
    {"happy", Cat::adj, "froh", "heureux", "feliz"},
    {"tall", Cat::adj, "lang", "haut", "alto"},
    {"quiet", Cat::adj, "still", "calme", "tranquilo"},
    {"hungry", Cat::adj, "hungrig", "affamé", "hambriento"},
    {"tired", Cat::adj, "müde", "fatigué", "cansado"},
    {"new", Cat::adj, "neu", "neuf", "nuevo"},
    {"black", Cat::adj, "schwarz", "noir", "negro"},
    {"cat", Cat::noun, "katze", "chat", "gato"},
    {"dog", Cat::noun, "hund", "chien", "perro"},
    {"man", Cat::noun, "mann", "homme", "hombre"},
    {"woman", Cat::noun, "frau", "femme", "mujer"},
    {"child", Cat::noun, "kind", "enfant", "niño"},
    {"house", Cat::noun, "haus", "maison", "casa"},
    {"car", Cat::noun, "auto", "voiture", "coche"},
    {"book", Cat::noun, "buch", "livre", "libro"},
    {"bird", Cat::noun, "vogel", "oiseau", "pájaro"},
    {"horse", Cat::noun, "pferd", "cheval", "caballo"},
    {"teacher", Cat::noun, "lehrer", "professeur", "maestro"},
    {"doctor", Cat::noun, "arzt", "médecin", "médico"},
    {"apple", Cat::noun, "apfel", "pomme", "manzana"},
    {"letter", Cat::noun, "brief", "lettre", "carta"},
    {"garden", Cat::noun, "garten", "jardin", "jardín"},
    {"city", Cat::noun, "stadt", "ville", "ciudad"},
    {"friend", Cat::noun, "freund", "ami", "amigo"},
    {"king", Cat::noun, "könig", "roi", "rey"},
    {"sees", Cat::verb, "sieht", "voit", "ve"},
    {"likes", Cat::verb, "mag", "aime", "gusta"},
    {"has", Cat::verb, "hat", "a", "tiene"},
    {"takes", Cat::verb, "nimmt", "prend", "toma"},
    {"wants", Cat::verb, "will", "veut", "quiere"},
    {"finds", Cat::verb, "findet", "trouve", "encuentra"},
    {"buys", Cat::verb, "kauft", "achète", "compra"},
    {"reads", Cat::verb, "liest", "lit", "lee"},
    {"loves", Cat::verb, "liebt", "adore", "ama"},
    {"helps", Cat::verb, "hilft", "aide", "ayuda"},
    {"hears", Cat::verb, "hört", "entend", "oye"},
    {"knows", Cat::verb, "kennt", "connaît", "conoce"},
    {"often", Cat::adv, "oft", "souvent", "frecuentemente"},
    {"never", Cat::adv, "nie", "jamais", "nunca"},
    {"always", Cat::adv, "immer", "toujours", "siempre"},
    {"today", Cat::adv, "heute", "aujourd'hui", "hoy"},
    {"now", Cat::adv, "jetzt", "maintenant", "ahora"},
    {"again", Cat::adv, "wieder", "encore", "nuevamente"},
    {"in", Cat::adp, "in", "dans", "en"},
    {"near", Cat::adp, "bei", "près", "cerca"},
    {"with", Cat::adp, "mit", "avec", "con"},
    {"behind", Cat::adp, "hinter", "derrière", "detrás"},
    {".", Cat::punct, ".", ".", "."},
    {"!", Cat::punct, "!", "!", "!"},
}};
// clang-format on

const std::vector<const Entry*>& by_cat(Cat c) {
  static const std::map<Cat, std::vector<const Entry*>> table = [] {
    std::map<Cat, std::vector<const Entry*>> m;
    for (const auto& e : kLexicon) m[e.cat].push_back(&e);
    return m;
  }();
  return table.at(c);
}

const Entry& lookup(const std::string& word) {
  static const std::map<std::string, const Entry*, std::less<>> index = [] {
    std::map<std::string, const Entry*, std::less<>> m;
    for (const auto& e : kLexicon) m.emplace(e.en, &e);
    return m;
  }();
  auto it = index.find(word);
  if (it == index.end()) throw std::invalid_argument("word outside the synthetic lexicon: " + word);
  return *it->second;
}

const char* pick(Cat c, Rng& rng) {
  const auto& v = by_cat(c);
  return v[rng.below(v.size())]->en;
}

void noun_phrase(Tokens& out, Rng& rng, const GrammarOptions& o) {
  out.emplace_back(pick(Cat::det, rng));
  if (rng.bernoulli(o.adjective_rate)) out.emplace_back(pick(Cat::adj, rng));
  out.emplace_back(pick(Cat::noun, rng));
}

Tokens sentence(Rng& rng, const GrammarOptions& o) {
  Tokens s;
  noun_phrase(s, rng, o);
  s.emplace_back(pick(Cat::verb, rng));
  noun_phrase(s, rng, o);
  if (rng.bernoulli(o.phrase_rate)) {
    s.emplace_back(pick(Cat::adp, rng));
    noun_phrase(s, rng, o);
  }
  if (rng.bernoulli(o.adverb_rate)) s.emplace_back(pick(Cat::adv, rng));
  s.emplace_back(pick(Cat::punct, rng));
  return s;
}

}  // namespace

std::vector<Tokens> english_sentences(std::size_t n, Rng& rng, const GrammarOptions& options) {
  std::vector<Tokens> out;
  std::set<Tokens> seen;
  std::size_t attempts = 0;
  while (out.size() < n) {
    if (++attempts > 50 * n + 1000) {
      throw std::runtime_error("synthetic grammar cannot produce " + std::to_string(n) +
                               " distinct sentences");
    }
    Tokens s = sentence(rng, options);
    if (seen.insert(s).second) out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::string> english_lexicon() {
  std::vector<std::string> out;
  for (const auto& e : kLexicon) out.emplace_back(e.en);
  return out;
}

bool supports_language(std::string_view lang) {
  return lang == "en" || lang == "de" || lang == "fr" || lang == "es";
}

Tokens translate(std::span<const std::string> english, std::string_view lang) {
  if (!supports_language(lang)) {
    throw std::invalid_argument("no synthetic dictionary for language '" + std::string(lang) + "'");
  }
  std::vector<const Entry*> entries;
  for (const auto& w : english) entries.push_back(&lookup(w));
  if (lang == "fr" || lang == "es") {
    for (std::size_t i = 0; i + 1 < entries.size(); ++i) {
      if (entries[i]->cat == Cat::adj && entries[i + 1]->cat == Cat::noun) {
        std::swap(entries[i], entries[i + 1]);
        ++i;
      }
    }
  } else if (lang == "de") {
    std::size_t verb = entries.size();
    std::size_t adv = entries.size();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i]->cat == Cat::verb && verb == entries.size()) verb = i;
      if (entries[i]->cat == Cat::adv) adv = i;
    }
    if (verb < entries.size() && adv < entries.size() && adv > verb + 1) {
      const Entry* a = entries[adv];
      entries.erase(entries.begin() + static_cast<std::ptrdiff_t>(adv));
      entries.insert(entries.begin() + static_cast<std::ptrdiff_t>(verb + 1), a);
    }
  }
  Tokens out;
  for (const Entry* e : entries) {
    out.emplace_back(lang == "en" ? e->en : lang == "de" ? e->de : lang == "fr" ? e->fr : e->es);
  }
  return out;
}

Splits make_splits(const std::vector<Tokens>& english, std::string_view lang, double valid_fraction,
                   double test_fraction, Rng& rng) {
  std::vector<std::size_t> order(english.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  const auto n_test = static_cast<std::size_t>(test_fraction * static_cast<double>(order.size()));
  const auto n_valid = static_cast<std::size_t>(valid_fraction * static_cast<double>(order.size()));
  if (n_test + n_valid >= order.size()) throw std::invalid_argument("splits leave no training data");
  Splits s;
  for (auto* c : {&s.train, &s.valid, &s.test}) {
    c->source_lang = "en";
    c->target_lang = std::string(lang);
  }
  s.train.split = Split::train;
  s.valid.split = Split::valid;
  s.test.split = Split::test;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& src = english[order[i]];
    SentencePair p{src, translate(src, lang)};
    if (i < n_test) {
      s.test.pairs.push_back(std::move(p));
    } else if (i < n_test + n_valid) {
      s.valid.pairs.push_back(std::move(p));
    } else {
      s.train.pairs.push_back(std::move(p));
    }
  }
  return s;
}

}  // namespace lrmt::synthetic
