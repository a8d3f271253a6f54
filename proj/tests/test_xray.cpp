#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "lrmt/synthetic.hpp"
#include "lrmt/xray.hpp"
#include "support/gradcheck.hpp"

using namespace lrmt;
namespace fs = std::filesystem;

namespace {

ActivationDataset dataset(std::size_t width, const std::vector<std::vector<double>>& rows, std::vector<std::string> tokens = {}) {
  ActivationDataset ds;
  ds.width = width;
  ActivationSentence s;
  s.activations = Tensor::matrix(rows.size(), width);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    s.tokens.push_back(tokens.empty() ? "tok" + std::to_string(t) : tokens[t]);
    for (std::size_t k = 0; k < width; ++k) s.activations(t, k) = rows[t][k];
  }
  s.tags = pos_tag(s.tokens);
  ds.sentences.push_back(std::move(s));
  return ds;
}

MassActivationMatrix with_magnitude(std::vector<double> mag) {
  MassActivationMatrix m;
  m.width = mag.size();
  m.magnitude_mass = std::move(mag);
  m.signed_mass.assign(m.width, 0.0);
  m.max_mass.assign(m.width, 0.0);
  m.hit_count.assign(m.width, 1);
  return m;
}

}  // namespace

TEST(Mass, SingleRow) {
  const auto m = mass_matrices(dataset(2, {{0.5, -0.9}}));
  EXPECT_EQ(m.max_mass, (std::vector<double>{0.0, -0.9}));
  EXPECT_EQ(m.hit_count, (std::vector<std::uint64_t>{0, 1}));
  EXPECT_EQ(m.signed_mass, (std::vector<double>{0.5, -0.9}));
  EXPECT_EQ(m.magnitude_mass, (std::vector<double>{0.5, 0.9}));
  EXPECT_EQ(m.rows, 1u);
}

TEST(Mass, AllZeroTiesGoToIndexZero) {
  const auto m = mass_matrices(dataset(3, {{0, 0, 0}, {0, 0, 0}}));
  EXPECT_EQ(m.hit_count, (std::vector<std::uint64_t>{2, 0, 0}));
  for (double x : m.signed_mass) EXPECT_EQ(x, 0.0);
  for (double x : m.max_mass) EXPECT_EQ(x, 0.0);
}

TEST(Mass, EmptyDatasetRejected) {
  ActivationDataset ds;
  ds.width = 4;
  EXPECT_THROW(mass_matrices(ds), std::invalid_argument);
}

TEST(Mass, RandomMatchesDoubleLoop) {
  Rng rng(5);
  std::vector<std::vector<double>> rows(50, std::vector<double>(8));
  for (auto& r : rows) {
    for (double& x : r) x = rng.uniform(-1, 1);
  }
  const auto m = mass_matrices(dataset(8, rows));
  for (std::size_t k = 0; k < 8; ++k) {
    double s = 0, a = 0, mx = 0;
    std::uint64_t hits = 0;
    for (const auto& r : rows) {
      s += r[k];
      a += std::fabs(r[k]);
      std::size_t arg = 0;
      for (std::size_t j = 1; j < 8; ++j) {
        if (std::fabs(r[j]) > std::fabs(r[arg])) arg = j;
      }
      if (arg == k) {
        mx += r[k];
        ++hits;
      }
    }
    EXPECT_NEAR(m.signed_mass[k], s, 1e-12);
    EXPECT_NEAR(m.magnitude_mass[k], a, 1e-12);
    EXPECT_NEAR(m.max_mass[k], mx, 1e-12);
    EXPECT_EQ(m.hit_count[k], hits);
  }
}

TEST(Dead, CountBased) {
  EXPECT_EQ(dead_neurons(mass_matrices(dataset(4, {{0, 0, 0, 1}, {0.1, 0, 0, -2}}))), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_TRUE(dead_neurons(mass_matrices(dataset(2, {{1, 0}, {0, 1}}))).empty());
  // Neuron 1 wins twice with opposite signs: max mass cancels but it is alive.
  const auto m = mass_matrices(dataset(2, {{0.1, 0.7}, {0.2, -0.7}, {0.9, 0.0}}));
  EXPECT_EQ(m.max_mass[1], 0.0);
  EXPECT_TRUE(dead_neurons(m).empty());
}

TEST(Prune, CountsFollowFloorRule) {
  EXPECT_EQ(prune_count(512, 1), 5u);
  EXPECT_EQ(prune_count(512, 5), 25u);
  EXPECT_EQ(prune_count(512, 10), 51u);
  EXPECT_EQ(prune_count(100, 7), 7u);
  EXPECT_EQ(prune_count(3, 34), 1u);
  EXPECT_THROW(prune_count(10, 101), std::invalid_argument);
  EXPECT_THROW(prune_count(10, -1), std::invalid_argument);
}

TEST(Prune, Selection) {
  const auto m = with_magnitude({3, 1, 2});
  EXPECT_EQ(select_prune_set(m, PruneMode::most_n, 34), (std::vector<std::size_t>{0}));
  EXPECT_EQ(select_prune_set(m, PruneMode::least_n, 34), (std::vector<std::size_t>{1}));
  EXPECT_EQ(select_prune_set(m, PruneMode::most_n, 67), (std::vector<std::size_t>{0, 2}));
  EXPECT_TRUE(select_prune_set(m, PruneMode::none, 50).empty());
  const auto ties = with_magnitude({1, 2, 2, 1});
  EXPECT_EQ(select_prune_set(ties, PruneMode::most_n, 25), (std::vector<std::size_t>{1}));
  EXPECT_EQ(select_prune_set(ties, PruneMode::least_n, 25), (std::vector<std::size_t>{0}));
}

TEST(Prune, MostNIsPrefixMonotone) {
  Rng rng(8);
  std::vector<double> mag(64);
  for (double& x : mag) x = std::floor(rng.uniform(0, 10));
  const auto m = with_magnitude(mag);
  for (PruneMode mode : {PruneMode::most_n, PruneMode::least_n}) {
    std::vector<std::size_t> prev;
    for (double p = 0; p <= 100; p += 2.5) {
      auto cur = select_prune_set(m, mode, p);
      EXPECT_EQ(cur.size(), prune_count(64, p));
      EXPECT_TRUE(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
      prev = cur;
    }
  }
}

TEST(Prune, ModeNames) {
  for (PruneMode m : {PruneMode::none, PruneMode::dead, PruneMode::most_n, PruneMode::least_n}) {
    EXPECT_EQ(prune_mode_from_name(prune_mode_name(m)), m);
  }
  EXPECT_THROW(prune_mode_from_name("max"), std::invalid_argument);
}

TEST(Knowledge, Examples) {
  MassActivationMatrix m;
  m.signed_mass = {2, -3, 1};
  auto k = knowledge_abstraction(m);
  EXPECT_EQ(k.positive, 3.0);
  EXPECT_EQ(k.negative, -3.0);
  EXPECT_EQ(k.overall, 0.0);
  m.signed_mass = {0.5, 1.5};
  k = knowledge_abstraction(m);
  EXPECT_EQ(k.negative, 0.0);
  EXPECT_EQ(k.overall, k.positive);
}

TEST(Change, Examples) {
  MassActivationMatrix a, b;
  a.width = b.width = 2;
  a.signed_mass = {1, 2};
  b.signed_mass = {0, 5};
  const auto c = change_in_mass(a, b);
  EXPECT_EQ(c.delta, (std::vector<double>{-1, 3}));
  EXPECT_EQ(c.most_changed.front(), 1u);
  EXPECT_EQ(c.least_changed.front(), 0u);
  for (double d : change_in_mass(a, a).delta) EXPECT_EQ(d, 0.0);
  const auto back = change_in_mass(b, a);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(back.delta[k], -c.delta[k]);
  MassActivationMatrix w;
  w.width = 3;
  w.signed_mass = {0, 0, 0};
  EXPECT_THROW(change_in_mass(a, w), std::invalid_argument);
}

TEST(PosDistribution, MeanOfDuplicates) {
  const auto ds = dataset(1, {{0.2}, {-1.0}, {0.4}}, {"the", "cat", "the"});
  const auto d = pos_token_distribution(ds, 0, 5);
  ASSERT_EQ(d.entries.size(), 2u);
  EXPECT_EQ(d.entries[0].token, "the");
  EXPECT_NEAR(d.entries[0].mean, 0.3, 1e-15);
  EXPECT_EQ(d.entries[0].count, 2u);
  EXPECT_EQ(d.entries[1].normalized, -1.0);
  EXPECT_EQ(d.top.front(), 1u);
}

TEST(PosDistribution, SingleTokenNormalizesToOne) {
  const auto d = pos_token_distribution(dataset(1, {{0.25}}, {"the"}), 0, 5);
  ASSERT_EQ(d.entries.size(), 1u);
  EXPECT_EQ(d.entries[0].normalized, 1.0);
  EXPECT_EQ(d.entries[0].tag, PosTag::DET);
  EXPECT_EQ(d.density[static_cast<std::size_t>(PosTag::DET)], 1.0);
  const auto neg = pos_token_distribution(dataset(1, {{-0.25}}, {"the"}), 0, 5);
  EXPECT_EQ(neg.entries[0].normalized, -1.0);
}

TEST(PosDistribution, MajorityTagWithFirstSeenTieBreak) {
  ActivationDataset ds = dataset(1, {{0.1}, {0.2}, {0.3}}, {"run", "run", "run"});
  ds.sentences[0].tags = {PosTag::NOUN, PosTag::VERB, PosTag::VERB};
  EXPECT_EQ(pos_token_distribution(ds, 0, 1).entries[0].tag, PosTag::VERB);
  ds.sentences[0].tags = {PosTag::NOUN, PosTag::VERB, PosTag::X};
  EXPECT_EQ(pos_token_distribution(ds, 0, 1).entries[0].tag, PosTag::NOUN);
}

TEST(PosDistribution, TopKMatchesGroupByOracle) {
  Rng rng(13);
  const std::vector<std::string> words{"the", "a", "dog", "cat", "runs", "sees", "big", "red", "quickly", "."};
  std::vector<std::string> toks;
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 30; ++i) {
    toks.push_back(words[rng.below(words.size())]);
    rows.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1)});
  }
  const auto ds = dataset(2, rows, toks);
  const auto d = pos_token_distribution(ds, 1, 5);
  // Oracle: sort (token, value) pairs, group equal tokens, average.
  std::vector<std::pair<std::string, double>> pairs;
  for (std::size_t i = 0; i < toks.size(); ++i) pairs.emplace_back(toks[i], rows[i][1]);
  std::sort(pairs.begin(), pairs.end(), [](auto& x, auto& y) { return x.first < y.first; });
  std::vector<std::pair<std::string, double>> means;
  for (std::size_t i = 0; i < pairs.size();) {
    std::size_t j = i;
    double s = 0;
    while (j < pairs.size() && pairs[j].first == pairs[i].first) s += pairs[j++].second;
    means.emplace_back(pairs[i].first, s / static_cast<double>(j - i));
    i = j;
  }
  std::sort(means.begin(), means.end(), [](auto& x, auto& y) { return std::fabs(x.second) > std::fabs(y.second); });
  ASSERT_EQ(d.top.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(d.entries[d.top[i]].token, means[i].first);
    EXPECT_NEAR(d.entries[d.top[i]].mean, means[i].second, 1e-12);
  }
  EXPECT_THROW(pos_token_distribution(ds, 2, 5), std::out_of_range);
  EXPECT_THROW(pos_token_distribution(ds, 0, 0), std::invalid_argument);
}

namespace {

struct Fixture {
  ParallelCorpus corpus;
  Vocabulary vocab;
  Seq2SeqModel model;
};

Fixture make_fixture(Arch arch) {
  Rng rng(3);
  Fixture s;
  for (const auto& t : synthetic::english_sentences(20, rng)) s.corpus.pairs.push_back({t, t});
  const ParallelCorpus cs[] = {s.corpus};
  s.vocab = build_vocab(cs, Side::source);
  ModelDims d{.arch = arch, .source_vocab = s.vocab.size(), .target_vocab = s.vocab.size(), .embedding = 6,
              .hidden = 5, .attention = 5, .dropout = 0.0};
  s.model = Seq2SeqModel(d, 3);
  return s;
}

}  // namespace

TEST(Capture, ShapesTokensAndDeterminism) {
  Fixture s = make_fixture(Arch::abgru);
  ParallelCorpus five;
  five.pairs.push_back({{"the", "dog", "sees", "a", "cat"}, {"x"}});
  const auto ds = capture_activations(s.model, five, s.vocab);
  ASSERT_EQ(ds.sentences.size(), 1u);
  EXPECT_EQ(ds.sentences[0].activations.rows(), 5u);
  EXPECT_EQ(ds.sentences[0].activations.cols(), 10u);
  EXPECT_EQ(ds.sentences[0].tags.size(), 5u);
  const auto all = capture_activations(s.model, s.corpus, s.vocab);
  EXPECT_EQ(all, capture_activations(s.model, s.corpus, s.vocab));
  std::size_t tokens = 0;
  for (const auto& p : s.corpus.pairs) tokens += p.source.size();
  EXPECT_EQ(all.rows(), tokens);
}

TEST(Capture, VocabularyMismatchRejected) {
  Fixture s = make_fixture(Arch::gru);
  Vocabulary other = s.vocab;
  other.add("extra-token");
  EXPECT_THROW(capture_activations(s.model, s.corpus, other), std::invalid_argument);
}

TEST(Capture, PrunedColumnIsExactlyZero) {
  for (Arch arch : {Arch::lstm, Arch::gru, Arch::abgru}) {
    Fixture s = make_fixture(arch);
    Rng rng(4);
    for (Parameter* p : s.model.parameters()) p->value = check::random_tensor(p->value.shape(), rng, -0.5, 0.5);
    const std::size_t k[] = {2};
    prune_neuron_knowledge(s.model, k);
    const auto ds = capture_activations(s.model, s.corpus, s.vocab);
    for (const auto& sent : ds.sentences) {
      for (std::size_t t = 0; t < sent.tokens.size(); ++t) EXPECT_EQ(sent.activations(t, 2), 0.0);
    }
  }
}

TEST(Dump, RoundTripAndCorruption) {
  Fixture s = make_fixture(Arch::abgru);
  const auto ds = capture_activations(s.model, s.corpus, s.vocab, 50, "stage 0");
  const fs::path dir = fs::temp_directory_path() / "lrmt_xray_dump";
  fs::create_directories(dir);
  const fs::path p = dir / "acts.lrma";
  save_activations(p, ds);
  EXPECT_EQ(load_activations(p), ds);
  std::vector<char> bytes;
  {
    std::ifstream in(p, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::vector<char>& b) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  auto kind_of = [&]() {
    try {
      load_activations(p);
    } catch (const FormatError& e) {
      return e.kind();
    }
    return FormatError::Kind::io;
  };
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  write(flipped);
  EXPECT_EQ(kind_of(), FormatError::Kind::checksum);
  write(std::vector<char>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 3)));
  EXPECT_EQ(kind_of(), FormatError::Kind::truncated);
  auto magic = bytes;
  magic[0] = 'X';
  write(magic);
  EXPECT_EQ(kind_of(), FormatError::Kind::bad_magic);
  const auto json = nlohmann::json::parse(activations_to_json(ds));
  EXPECT_EQ(json.at("sentences").size(), ds.sentences.size());
  EXPECT_EQ(json.at("width").get<std::size_t>(), ds.width);
}

TEST(AnalysisJson, SchemaFields) {
  const auto m = mass_matrices(dataset(2, {{0.5, -0.9}, {0.25, 0.1}}));
  const auto c = change_in_mass(m, m);
  const auto j = nlohmann::json::parse(analysis_to_json("en-de", m, &c, 1));
  for (const char* key : {"stage", "width", "signed_mass", "magnitude_mass", "max_mass", "hit_count", "knowledge", "top_changed"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["top_changed"].size(), 1u);
  EXPECT_EQ(j["signed_mass"][0].get<double>(), 0.75);
  EXPECT_EQ(j["knowledge"]["overall"].get<double>(), j["knowledge"]["positive"].get<double>() + j["knowledge"]["negative"].get<double>());
}
