#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include <gtest/gtest.h>

#include "lrmt/synthetic.hpp"
#include "lrmt/training.hpp"

using namespace lrmt;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny(Arch arch = Arch::abgru) {
  TrainConfig c;
  c.arch = arch;
  c.embedding = 8;
  c.hidden = 12;
  c.max_epochs = 3;
  c.patience = 2;
  c.dropout = 0.0;
  c.batch_size = 8;
  c.seed = 11;
  return c;
}

struct Languages {
  std::map<std::string, StageData> data;
  Vocabulary source;
};

StageData to_stage(const synthetic::Splits& s) { return StageData{s.train, s.valid, s.test}; }

Languages languages(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const auto en = synthetic::english_sentences(n, rng);
  Languages out;
  std::vector<ParallelCorpus> all;
  std::vector<std::string> langs;
  for (const char* lang : {"en", "de", "fr", "es"}) {
    Rng r(derive_seed(seed, lang));
    auto splits = synthetic::make_splits(en, lang, 0.1, 0.1, r);
    all.push_back(splits.train);
    all.push_back(splits.valid);
    all.push_back(splits.test);
    out.data[std::string("en-") + lang] = to_stage(splits);
    langs.emplace_back(lang);
  }
  out.source = shared_source_vocab(all, 1, langs);
  return out;
}

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "lrmt_training_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<Tensor> forward_logits(const Seq2SeqModel& m, const Batch& b) {
  Graph g;
  Rng rng(5);
  const Var logits = m.forward_teacher_forced(g, b, 1.0, rng, Mode::eval);
  return {g.value(logits)};
}

}  // namespace

// --- config ------------------------------------------------------------------

TEST(TrainConfig, DefaultsMatchReferenceSetup) {
  const TrainConfig c;
  EXPECT_EQ(c.embedding, 300u);
  EXPECT_EQ(c.layers, 1u);
  EXPECT_EQ(c.hidden, 512u);
  EXPECT_EQ(c.max_epochs, 50u);
  EXPECT_EQ(c.dropout, 0.5);
  EXPECT_EQ(c.lr, 0.001);
  EXPECT_EQ(c.batch_size, 40u);
  EXPECT_EQ(c.clip_norm, 5.0);
  EXPECT_EQ(c.patience, 5u);
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.dims(10, 20).attention, 512u);
}

TEST(TrainConfig, JsonRoundTrip) {
  TrainConfig c = tiny(Arch::gru);
  c.tf_ratio = 0.25;
  c.seed = 0xffffffffffffull;
  EXPECT_EQ(TrainConfig::from_json(c.to_json()), c);
}

TEST(TrainConfig, UnknownKeyNamed) {
  try {
    TrainConfig::from_json(nlohmann::json{{"hiden", 3}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "hiden");
  }
}

TEST(TrainConfig, BadValues) {
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json{{"hidden", "big"}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json{{"hidden", -3}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json{{"arch", "rnn"}}), ConfigError);
  TrainConfig c;
  c.layers = 2;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "layers");
  }
  c = TrainConfig{};
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.tf_ratio = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

// --- early stopping -------------------------------------------------------------

TEST(EarlyStopping, InjectedSequence) {
  EarlyStopping s(2);
  const std::vector<double> losses{3, 2, 2.5, 2.4, 2.6};
  std::size_t stopped_after = 0;
  for (double l : losses) {
    s.observe(l);
    if (s.should_stop()) {
      stopped_after = s.epochs();
      break;
    }
  }
  EXPECT_EQ(stopped_after, 4u);
  EXPECT_EQ(s.best_epoch(), 2u);
  EXPECT_EQ(s.best_loss(), 2.0);
}

TEST(EarlyStopping, FlatLoss) {
  EarlyStopping s(3);
  std::size_t e = 0;
  while (!s.should_stop()) {
    s.observe(1.0);
    ++e;
  }
  EXPECT_EQ(e, 4u);
  EXPECT_EQ(s.best_epoch(), 1u);
}

TEST(EarlyStopping, StrictlyDecreasingNeverStops) {
  EarlyStopping s(5);
  for (int i = 0; i < 50; ++i) {
    EXPECT_TRUE(s.observe(100.0 - i));
    EXPECT_FALSE(s.should_stop());
  }
  EXPECT_EQ(s.best_epoch(), 50u);
}

TEST(EarlyStopping, FrozenModelStopsAfterPatienceWithInitialWeights) {
  auto langs = languages(80, 3);
  const StageData& de = langs.data.at("en-de");
  TrainConfig c = tiny();
  c.patience = 3;
  c.max_epochs = 50;
  const Vocabulary tv = build_vocab(std::span(&de.train, 1), Side::target);
  Seq2SeqModel m(c.dims(langs.source.size(), tv.size()), 1);
  for (Parameter* p : m.parameters()) p->frozen = true;
  const auto before = parameter_digest(m.parameters());
  Rng rng(1);
  const auto train = encode_for(de.train, langs.source, tv, c.max_len);
  const auto valid = encode_for(de.valid, langs.source, tv, c.max_len);
  const FitResult r = fit_with_early_stopping(m, train, valid, c, rng, "flat");
  EXPECT_EQ(r.epochs_run, 4u);
  EXPECT_EQ(r.best_epoch, 1u);
  EXPECT_EQ(parameter_digest(m.parameters()), before);
}

// Property: the returned model is the best validation epoch seen.
TEST(EarlyStopping, ReturnsBestValidationModel) {
  auto langs = languages(120, 4);
  const StageData& fr = langs.data.at("en-fr");
  TrainConfig c = tiny(Arch::gru);
  c.max_epochs = 6;
  c.patience = 2;
  c.lr = 0.02;
  const Vocabulary tv = build_vocab(std::span(&fr.train, 1), Side::target);
  Seq2SeqModel m(c.dims(langs.source.size(), tv.size()), 2);
  Rng rng(2);
  const auto train = encode_for(fr.train, langs.source, tv, c.max_len);
  const auto valid = encode_for(fr.valid, langs.source, tv, c.max_len);
  const FitResult r = fit_with_early_stopping(m, train, valid, c, rng, "best");
  double best = INFINITY;
  for (const auto& rec : r.history) best = std::min(best, rec.valid_loss);
  EXPECT_EQ(r.best_valid_loss, best);
  const auto batches = make_batches(valid, BatchOptions{c.batch_size, true, false}, rng);
  EXPECT_EQ(validation_loss(m, batches), best);
}

// --- train_epoch -------------------------------------------------------------

class Overfit : public ::testing::TestWithParam<Arch> {};

TEST_P(Overfit, OnePairConverges) {
  const Tokens src{"the", "small", "dog", "runs", "."};
  const Tokens tgt{"der", "kleine", "hund", "laeuft", "."};
  ParallelCorpus c;
  c.target_lang = "de";
  c.pairs.push_back({src, tgt});
  const Vocabulary sv = build_vocab(std::span(&c, 1), Side::source);
  const Vocabulary tv = build_vocab(std::span(&c, 1), Side::target);
  TrainConfig cfg = tiny(GetParam());
  cfg.tf_ratio = 1.0;
  cfg.embedding = 16;
  cfg.hidden = 32;
  cfg.lr = 0.01;
  Seq2SeqModel m(cfg.dims(sv.size(), tv.size()), 3);
  Adam opt(AdamConfig{.lr = cfg.lr, .l2 = 0.0});
  auto params = m.parameters();
  opt.bind(params);
  const auto pairs = encode_for(c, sv, tv, cfg.max_len);
  Rng rng(9);
  const auto batches = make_batches(pairs, BatchOptions{1, true, false}, rng);
  double loss = 0.0;
  for (int e = 0; e < 200; ++e) loss = train_epoch(m, batches, cfg, opt, rng);
  EXPECT_LT(loss, 0.01);
  const auto out = m.greedy_decode(batches[0], 20);
  EXPECT_EQ(decode_ids(out[0], tv), tgt);
}

INSTANTIATE_TEST_SUITE_P(AllArchs, Overfit, ::testing::Values(Arch::lstm, Arch::gru, Arch::abgru),
                         [](const auto& info) { return std::string(arch_name(info.param)); });

TEST(TrainEpoch, DeterministicTrajectory) {
  auto langs = languages(60, 5);
  const StageData& es = langs.data.at("en-es");
  const TrainConfig c = tiny();
  const Vocabulary tv = build_vocab(std::span(&es.train, 1), Side::target);
  auto run = [&] {
    Seq2SeqModel m(c.dims(langs.source.size(), tv.size()), 4);
    Adam opt(AdamConfig{.lr = c.lr, .l2 = c.l2});
    auto params = m.parameters();
    opt.bind(params);
    Rng rng(4);
    const auto pairs = encode_for(es.train, langs.source, tv, c.max_len);
    std::vector<double> losses;
    for (int e = 0; e < 3; ++e) {
      const auto batches = make_batches(pairs, BatchOptions{c.batch_size, true, true}, rng);
      losses.push_back(train_epoch(m, batches, c, opt, rng));
    }
    return losses;
  };
  EXPECT_EQ(run(), run());
}

TEST(TrainEpoch, NonFiniteLossAbortsWithoutUpdating) {
  ParallelCorpus c;
  c.pairs.push_back({{"a", "b"}, {"c"}});
  const Vocabulary sv = build_vocab(std::span(&c, 1), Side::source);
  const Vocabulary tv = build_vocab(std::span(&c, 1), Side::target);
  const TrainConfig cfg = tiny(Arch::lstm);
  Seq2SeqModel m(cfg.dims(sv.size(), tv.size()), 1);
  m.find("out.weight")->value[0] = std::numeric_limits<double>::infinity();
  const auto before = parameter_digest(m.parameters());
  Adam opt(AdamConfig{});
  auto params = m.parameters();
  opt.bind(params);
  Rng rng(1);
  const auto pairs = encode_for(c, sv, tv, cfg.max_len);
  const auto batches = make_batches(pairs, BatchOptions{1, true, false}, rng);
  EXPECT_THROW(train_epoch(m, batches, cfg, opt, rng), NonFiniteLoss);
  EXPECT_EQ(parameter_digest(m.parameters()), before);
}

TEST(TrainEpoch, EmptyTargetsScoreOnlyEos) {
  ParallelCorpus c;
  c.pairs.push_back({{"a"}, {}});
  const Vocabulary sv = build_vocab(std::span(&c, 1), Side::source);
  const Vocabulary tv;
  TrainConfig cfg = tiny(Arch::gru);
  cfg.tf_ratio = 1.0;
  Seq2SeqModel m(cfg.dims(sv.size(), tv.size()), 1);
  for (Parameter* p : m.parameters()) p->value.fill(0.0);
  Adam opt(AdamConfig{});
  auto params = m.parameters();
  opt.bind(params);
  Rng rng(1);
  const auto pairs = encode_for(c, sv, tv, cfg.max_len);
  const auto batches = make_batches(pairs, BatchOptions{1, true, false}, rng);
  // Uniform logits over 4 specials, one predicted position (eos).
  EXPECT_NEAR(train_epoch(m, batches, cfg, opt, rng), std::log(4.0), 1e-12);
}

// --- regimes -----------------------------------------------------------------

TEST(Regimes, CopyPretrainingUsesSourcesAsTargets) {
  auto langs = languages(60, 6);
  TrainConfig c = tiny();
  c.max_epochs = 1;
  const Checkpoint ck = pretrain_copy(langs.data.at("en-de"), langs.source, c);
  EXPECT_EQ(ck.provenance.regime, "copy");
  EXPECT_EQ(ck.provenance.target_languages, std::vector<std::string>{"en"});
  for (const auto& p : langs.data.at("en-de").train.pairs) {
    for (const auto& t : p.source) EXPECT_TRUE(ck.target_vocab.contains(t)) << t;
  }
  EXPECT_FALSE(ck.target_vocab.contains("hund"));
}

TEST(Regimes, OneHopFreezesEncoderAndTrainsDecoder) {
  auto langs = languages(80, 7);
  TrainConfig c = tiny();
  c.max_epochs = 2;
  const Checkpoint pre = pretrain_copy(langs.data.at("en-en"), langs.source, c);
  Checkpoint cp = pre;
  cp.model.freeze_encoder();
  const auto enc_before = parameter_digest(cp.model.encoder_parameters());
  const Checkpoint hop = transfer_1hop(pre, langs.data.at("en-de"), c);
  Checkpoint h = hop;
  EXPECT_EQ(parameter_digest(h.model.encoder_parameters()), enc_before);
  EXPECT_TRUE(h.model.encoder_frozen());
  Seq2SeqModel fresh = pre.model;
  fresh.rebind_decoder(hop.target_vocab.size(), derive_seed(c.seed, "decoder:en-de"));
  EXPECT_NE(parameter_digest(fresh.decoder_parameters()), parameter_digest(h.model.decoder_parameters()));
  EXPECT_TRUE(h.target_vocab.contains("hund"));
  EXPECT_EQ(hop.provenance.regime, "1-hop");
}

TEST(Regimes, OneHopRejectsVocabularyMismatch) {
  auto langs = languages(40, 8);
  TrainConfig c = tiny();
  c.max_epochs = 1;
  const Checkpoint pre = pretrain_copy(langs.data.at("en-en"), langs.source, c);
  StageData odd = langs.data.at("en-de");
  odd.train.pairs[0].source.push_back("zyzzyva");
  EXPECT_THROW(transfer_1hop(pre, odd, c), std::invalid_argument);
}

TEST(Regimes, MultitaskUnionVocabularyAndControlTokens) {
  auto langs = languages(80, 9);
  TrainConfig c = tiny();
  c.max_epochs = 1;
  const Checkpoint pre = pretrain_copy(langs.data.at("en-en"), langs.source, c);
  const std::vector<StageData> parts{langs.data.at("en-de"), langs.data.at("en-fr"), langs.data.at("en-es")};
  const Checkpoint mt = train_multitask_joint(pre, parts, c);
  EXPECT_TRUE(mt.target_vocab.contains("hund"));
  EXPECT_TRUE(mt.target_vocab.contains("chien"));
  EXPECT_TRUE(mt.target_vocab.contains("perro"));
  EXPECT_EQ(mt.provenance.target_languages, (std::vector<std::string>{"de", "fr", "es"}));
  Checkpoint m = mt;
  Checkpoint p = pre;
  p.model.freeze_encoder();
  EXPECT_EQ(parameter_digest(m.model.encoder_parameters()), parameter_digest(p.model.encoder_parameters()));
}

TEST(Regimes, MultitaskBatchCompositionTracksCorpusShares) {
  // Corpora of unequal size; every quarter of an epoch should mirror the mix.
  Rng data_rng(10);
  const auto en = synthetic::english_sentences(3000, data_rng);
  std::vector<EncodedPair> pairs;
  const std::vector<std::size_t> sizes{1500, 1000, 500};
  std::size_t at = 0;
  for (std::size_t lang = 0; lang < sizes.size(); ++lang) {
    for (std::size_t i = 0; i < sizes[lang]; ++i, ++at) {
      pairs.push_back(EncodedPair{{1, 4, 2}, {1, 5, 2}, 7, static_cast<int>(lang)});
    }
  }
  Rng rng(derive_seed(11, "train:multitask"));
  const auto batches = make_batches(pairs, BatchOptions{40, true, true}, rng);
  const std::size_t quarter = batches.size() / 4;
  for (std::size_t q = 0; q < 4; ++q) {
    std::vector<double> counts(3, 0.0);
    double rows = 0.0;
    for (std::size_t b = q * quarter; b < (q + 1) * quarter; ++b) {
      for (int o : batches[b].origin) counts[static_cast<std::size_t>(o)] += 1.0;
      rows += static_cast<double>(batches[b].rows);
    }
    for (std::size_t l = 0; l < 3; ++l) {
      EXPECT_NEAR(counts[l] / rows, static_cast<double>(sizes[l]) / 3000.0, 0.05) << "quarter " << q << " lang " << l;
    }
  }
}

TEST(Regimes, SharedPreprocessingAcrossRegimes) {
  auto langs = languages(40, 12);
  const StageData& de = langs.data.at("en-de");
  const Vocabulary tv = build_vocab(std::span(&de.train, 1), Side::target);
  const auto plain = encode_for(de.train, langs.source, tv, 50);
  const auto tagged = encode_for(de.train, langs.source, tv, 50, langs.source.id("<2de>"), 0);
  ASSERT_EQ(plain.size(), tagged.size());
  for (std::size_t i = 0; i < plain.size(); ++i) EXPECT_EQ(plain[i].source, tagged[i].source);
}

// --- sequential plan -------------------------------------------------------------

TEST(Plan, JsonRoundTripAndErrors) {
  const auto j = nlohmann::json::parse(R"({"stages":[{"dataset":"en-en"},
      {"dataset":"en-de","prune":"most_n","percent":10},
      {"dataset":"en-fr","freeze_encoder":false,"target_vocab":"en-fr"}]})");
  const TransferPlan p = TransferPlan::from_json(j);
  ASSERT_EQ(p.stages.size(), 3u);
  EXPECT_EQ(p.stages[1].prune.mode, PruneMode::most_n);
  EXPECT_FALSE(p.stages[2].freeze_encoder);
  EXPECT_EQ(TransferPlan::from_json(p.to_json()).to_json(), p.to_json());
  EXPECT_THROW(TransferPlan::from_json(nlohmann::json::parse(R"({"stages":[]})")), ConfigError);
  EXPECT_THROW(TransferPlan::from_json(nlohmann::json::parse(R"({"stages":[{"dataset":"a","prune":"dead"}]})")),
               ConfigError);
  EXPECT_THROW(TransferPlan::from_json(nlohmann::json::parse(R"({"stages":[{"dataset":"a","extra":1}]})")),
               ConfigError);
}

TEST(Plan, MissingCorpusFailsBeforeTraining) {
  auto langs = languages(40, 13);
  TransferPlan plan;
  plan.stages = {{"en-en", true, {}, ""}, {"en-xx", true, {}, ""}};
  bool trained = false;
  SequentialOptions o;
  o.metrics = [&](const EpochRecord&) { trained = true; };
  EXPECT_THROW(run_sequential_plan(plan, langs.data, langs.source, tiny(), o), std::invalid_argument);
  EXPECT_FALSE(trained);
}

TEST(Plan, FourStagesKeepEncoderBytesAndPrune) {
  auto langs = languages(80, 14);
  TrainConfig c = tiny();
  c.max_epochs = 2;
  TransferPlan plan;
  plan.stages = {{"en-en", true, {}, ""},
                 {"en-de", true, {PruneMode::most_n, 10.0}, ""},
                 {"en-fr", true, {PruneMode::least_n, 10.0}, ""},
                 {"en-es", true, {}, ""}};
  std::vector<std::uint64_t> encoder_digests;
  SequentialOptions o;
  o.on_stage = [&](std::size_t, const StageOutcome& s) {
    Checkpoint ck = s.checkpoint;
    encoder_digests.push_back(parameter_digest(ck.model.encoder_parameters()));
  };
  const auto out = run_sequential_plan(plan, langs.data, langs.source, c, o);
  ASSERT_EQ(out.size(), 4u);
  // Stage 1 and 2 prune 2 of 24 neurons; the digests change only there.
  EXPECT_EQ(out[1].pruned.size(), 2u);
  EXPECT_EQ(out[2].pruned.size(), 2u);
  EXPECT_EQ(encoder_digests[2 + 1], encoder_digests[2]);
  EXPECT_EQ(out[3].checkpoint.provenance.prunes.size(), 2u);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_TRUE(out[i].checkpoint.model.encoder_frozen());
  // Pruned columns stay silent in every later stage.
  for (std::size_t k : out[1].pruned) {
    for (std::size_t i = 1; i < 4; ++i) {
      for (const auto& s : out[i].activations.sentences) {
        for (std::size_t t = 0; t < s.activations.rows(); ++t) EXPECT_EQ(s.activations(t, k), 0.0);
      }
    }
  }
  EXPECT_EQ(out[3].checkpoint.provenance.dataset, "en-es");
  EXPECT_EQ(out[0].checkpoint.provenance.regime, "copy");
}

TEST(Plan, NoPruneEqualsVanillaRun) {
  auto langs = languages(60, 15);
  TrainConfig c = tiny(Arch::gru);
  c.max_epochs = 1;
  TransferPlan with_none;
  with_none.stages = {{"en-en", true, {}, ""}, {"en-de", true, {PruneMode::none, 10.0}, ""}};
  TransferPlan vanilla;
  vanilla.stages = {{"en-en", true, {}, ""}, {"en-de", true, {}, ""}};
  const auto a = run_sequential_plan(with_none, langs.data, langs.source, c);
  const auto b = run_sequential_plan(vanilla, langs.data, langs.source, c);
  const auto a2 = run_sequential_plan(with_none, langs.data, langs.source, c);
  save_checkpoint(a2[1].checkpoint, temp_file("none2.lrmt"));
  const fs::path pa = temp_file("none.lrmt");
  const fs::path pb = temp_file("vanilla.lrmt");
  save_checkpoint(a[1].checkpoint, pa);
  save_checkpoint(b[1].checkpoint, pb);
  EXPECT_EQ(slurp(pa), slurp(temp_file("none2.lrmt")));
  EXPECT_EQ(slurp(pa), slurp(pb));
}

// --- checkpoints ---------------------------------------------------------------

class CheckpointRoundTrip : public ::testing::TestWithParam<Arch> {};

TEST_P(CheckpointRoundTrip, ForwardIsBitIdentical) {
  auto langs = languages(60, 16);
  TrainConfig c = tiny(GetParam());
  c.max_epochs = 1;
  Checkpoint ck = pretrain_copy(langs.data.at("en-en"), langs.source, c);
  ck.model.freeze_encoder();
  const std::vector<std::size_t> prune{1, 3};
  ck.model.prune_neurons(prune);
  ck.provenance.prunes.push_back(PruneRecord{1, PruneMode::most_n, 10.0, prune});
  const fs::path p = temp_file(std::string("rt_") + std::string(arch_name(GetParam())) + ".lrmt");
  save_checkpoint(ck, p);
  const Checkpoint back = load_checkpoint(p);
  EXPECT_EQ(back.config, ck.config);
  EXPECT_EQ(back.source_vocab, ck.source_vocab);
  EXPECT_EQ(back.target_vocab, ck.target_vocab);
  EXPECT_EQ(back.rng_state, ck.rng_state);
  EXPECT_EQ(back.provenance.prunes.size(), 1u);
  EXPECT_EQ(back.provenance.prunes[0].neurons, prune);
  EXPECT_EQ(back.model.dims(), ck.model.dims());
  EXPECT_TRUE(back.model.encoder_frozen());
  EXPECT_EQ(back.model.encoder_cell().pruned, ck.model.encoder_cell().pruned);
  Checkpoint a = ck;
  Checkpoint b = back;
  EXPECT_EQ(parameter_digest(a.model.parameters()), parameter_digest(b.model.parameters()));

  const auto pairs = encode_for(langs.data.at("en-en").test, ck.source_vocab, ck.target_vocab, 50);
  for (std::size_t i = 0; i < 10 && i < pairs.size(); ++i) {
    const EncodedPair* one = &pairs[i];
    const Batch batch = make_batch(std::span(&one, 1), false);
    EXPECT_EQ(forward_logits(ck.model, batch), forward_logits(back.model, batch));
  }
  save_checkpoint(back, temp_file("rt_again.lrmt"));
  EXPECT_EQ(slurp(p), slurp(temp_file("rt_again.lrmt")));
}

INSTANTIATE_TEST_SUITE_P(AllArchs, CheckpointRoundTrip, ::testing::Values(Arch::lstm, Arch::gru, Arch::abgru),
                         [](const auto& info) { return std::string(arch_name(info.param)); });

TEST(CheckpointFile, CorruptionKinds) {
  auto langs = languages(30, 17);
  TrainConfig c = tiny();
  c.max_epochs = 1;
  const Checkpoint ck = pretrain_copy(langs.data.at("en-en"), langs.source, c);
  const fs::path p = temp_file("corrupt.lrmt");
  save_checkpoint(ck, p);
  const auto good = slurp(p);
  auto kind_of = [&](const std::vector<char>& bytes) {
    spit(p, bytes);
    try {
      load_checkpoint(p);
    } catch (const FormatError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "load succeeded";
    return FormatError::Kind::io;
  };
  auto flipped = good;
  flipped[good.size() / 2] ^= 0x10;
  EXPECT_EQ(kind_of(flipped), FormatError::Kind::checksum);
  EXPECT_EQ(kind_of(std::vector<char>(good.begin(), good.begin() + static_cast<long>(good.size() - 100))),
            FormatError::Kind::truncated);
  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(kind_of(magic), FormatError::Kind::bad_magic);
  auto version = good;
  version[4] = 9;
  EXPECT_EQ(kind_of(version), FormatError::Kind::version);
  EXPECT_THROW(load_checkpoint(temp_file("does_not_exist.lrmt")), FormatError);
}
