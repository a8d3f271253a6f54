#include "lrmt/xray.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"

namespace lrmt {

std::size_t ActivationDataset::rows() const {
  std::size_t n = 0;
  for (const auto& s : sentences) n += s.tokens.size();
  return n;
}

ActivationDataset capture_activations(const Seq2SeqModel& model, const ParallelCorpus& corpus,
                                      const Vocabulary& source_vocab, std::size_t max_len,
                                      std::string provenance) {
  if (source_vocab.size() != model.dims().source_vocab) {
    throw std::invalid_argument("capture_activations: source vocabulary has " + std::to_string(source_vocab.size()) +
                                " entries, model expects " + std::to_string(model.dims().source_vocab));
  }
  if (max_len == 0) throw std::invalid_argument("capture_activations: max_len must be positive");
  ActivationDataset ds;
  ds.width = model.analysis_width();
  ds.provenance = std::move(provenance);

  std::vector<Tokens> sources;
  for (const auto& p : corpus.pairs) {
    if (p.source.empty()) continue;
    sources.emplace_back(p.source.begin(), p.source.begin() + static_cast<std::ptrdiff_t>(std::min(max_len, p.source.size())));
  }
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < sources.size(); start += kChunk) {
    const std::size_t end = std::min(sources.size(), start + kChunk);
    std::vector<EncodedPair> enc(end - start);
    std::vector<const EncodedPair*> rows;
    for (std::size_t i = start; i < end; ++i) {
      enc[i - start].source = encode(sources[i], source_vocab);
      enc[i - start].target = {Vocabulary::kSos, Vocabulary::kEos};
      rows.push_back(&enc[i - start]);
    }
    const auto acts = model.encoder_activations(make_batch(rows, false));
    for (std::size_t i = start; i < end; ++i) {
      const Tensor& full = acts[i - start];
      ActivationSentence s;
      s.tokens = sources[i];
      s.tags = pos_tag(s.tokens);
      s.activations = Tensor::matrix(s.tokens.size(), ds.width);
      // Row 0 of the encoder output is sos; real tokens follow.
      for (std::size_t t = 0; t < s.tokens.size(); ++t) {
        auto src = full.row(t + 1);
        std::copy(src.begin(), src.end(), s.activations.row(t).begin());
      }
      ds.sentences.push_back(std::move(s));
    }
  }
  return ds;
}

MassActivationMatrix mass_matrices(const ActivationDataset& acts) {
  if (acts.width == 0 || acts.rows() == 0) throw std::invalid_argument("mass_matrices: empty activation dataset");
  const std::size_t N = acts.width;
  MassActivationMatrix m;
  m.width = N;
  m.signed_mass.assign(N, 0.0);
  m.magnitude_mass.assign(N, 0.0);
  m.max_mass.assign(N, 0.0);
  m.hit_count.assign(N, 0);
  for (const auto& s : acts.sentences) {
    if (s.activations.cols() != N || s.activations.rows() != s.tokens.size()) {
      throw std::invalid_argument("mass_matrices: sentence block does not match the dataset width");
    }
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
      auto row = s.activations.row(t);
      std::size_t best = 0;
      for (std::size_t k = 0; k < N; ++k) {
        m.signed_mass[k] += row[k];
        m.magnitude_mass[k] += std::abs(row[k]);
        if (std::abs(row[k]) > std::abs(row[best])) best = k;
      }
      m.max_mass[best] += row[best];
      ++m.hit_count[best];
      ++m.rows;
    }
  }
  return m;
}

std::vector<std::size_t> dead_neurons(const MassActivationMatrix& mass) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < mass.width; ++k) {
    if (mass.hit_count[k] == 0) out.push_back(k);
  }
  return out;
}

std::string_view prune_mode_name(PruneMode m) {
  switch (m) {
    case PruneMode::none: return "none";
    case PruneMode::dead: return "dead";
    case PruneMode::most_n: return "most_n";
    case PruneMode::least_n: return "least_n";
  }
  return "?";
}

PruneMode prune_mode_from_name(std::string_view name) {
  for (PruneMode m : {PruneMode::none, PruneMode::dead, PruneMode::most_n, PruneMode::least_n}) {
    if (prune_mode_name(m) == name) return m;
  }
  throw std::invalid_argument("unknown prune mode '" + std::string(name) + "' (expected none, dead, most_n or least_n)");
}

std::size_t prune_count(std::size_t width, double percent) {
  if (!(percent >= 0.0 && percent <= 100.0)) throw std::invalid_argument("prune percent must be in [0, 100]");
  // The epsilon only absorbs binary rounding of exact products such as 7 * 100 / 100.
  return static_cast<std::size_t>(std::floor(percent * static_cast<double>(width) / 100.0 + 1e-9));
}

std::vector<std::size_t> select_prune_set(const MassActivationMatrix& mass, PruneMode mode, double percent) {
  switch (mode) {
    case PruneMode::none: return {};
    case PruneMode::dead: return dead_neurons(mass);
    case PruneMode::most_n:
    case PruneMode::least_n: break;
  }
  const std::size_t n = prune_count(mass.width, percent);
  std::vector<std::size_t> order(mass.width);
  std::iota(order.begin(), order.end(), 0);
  const auto& mag = mass.magnitude_mass;
  if (mode == PruneMode::most_n) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mag[a] > mag[b]; });
  } else {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mag[a] < mag[b]; });
  }
  order.resize(n);
  std::sort(order.begin(), order.end());
  return order;
}

void prune_neuron_knowledge(Seq2SeqModel& model, std::span<const std::size_t> neurons) {
  model.prune_neurons(neurons);
}

KnowledgeAbstraction knowledge_abstraction(const MassActivationMatrix& mass) {
  KnowledgeAbstraction k;
  for (double s : mass.signed_mass) {
    if (s > 0) {
      k.positive += s;
    } else {
      k.negative += s;
    }
  }
  k.overall = k.positive + k.negative;
  return k;
}

MassChange change_in_mass(const MassActivationMatrix& before, const MassActivationMatrix& after) {
  if (before.width != after.width) {
    throw std::invalid_argument("change_in_mass: widths differ (" + std::to_string(before.width) + " vs " +
                                std::to_string(after.width) + ")");
  }
  MassChange c;
  c.delta.resize(before.width);
  for (std::size_t k = 0; k < before.width; ++k) c.delta[k] = after.signed_mass[k] - before.signed_mass[k];
  c.most_changed.resize(before.width);
  std::iota(c.most_changed.begin(), c.most_changed.end(), 0);
  c.least_changed = c.most_changed;
  auto mag = [&](std::size_t k) { return std::abs(c.delta[k]); };
  std::stable_sort(c.most_changed.begin(), c.most_changed.end(), [&](auto a, auto b) { return mag(a) > mag(b); });
  std::stable_sort(c.least_changed.begin(), c.least_changed.end(), [&](auto a, auto b) { return mag(a) < mag(b); });
  return c;
}

PosTokenDistribution pos_token_distribution(const ActivationDataset& acts, std::size_t neuron, std::size_t k) {
  if (neuron >= acts.width) {
    throw std::out_of_range("pos_token_distribution: neuron " + std::to_string(neuron) + " >= width " +
                            std::to_string(acts.width));
  }
  if (k == 0) throw std::invalid_argument("pos_token_distribution: k must be at least 1");
  struct Acc {
    double sum = 0.0;
    std::size_t count = 0;
    std::vector<std::pair<PosTag, std::size_t>> tags;  // first-seen order
  };
  std::vector<std::string> order;
  std::map<std::string, Acc, std::less<>> acc;
  for (const auto& s : acts.sentences) {
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
      auto [it, fresh] = acc.try_emplace(s.tokens[t]);
      if (fresh) order.push_back(s.tokens[t]);
      Acc& a = it->second;
      a.sum += s.activations(t, neuron);
      ++a.count;
      auto tag = std::find_if(a.tags.begin(), a.tags.end(), [&](const auto& p) { return p.first == s.tags[t]; });
      if (tag == a.tags.end()) {
        a.tags.emplace_back(s.tags[t], 1);
      } else {
        ++tag->second;
      }
    }
  }
  PosTokenDistribution d;
  d.neuron = neuron;
  double max_abs = 0.0;
  for (const auto& tok : order) {
    const Acc& a = acc.find(tok)->second;
    PosTokenEntry e;
    e.token = tok;
    e.count = a.count;
    e.mean = a.sum / static_cast<double>(a.count);
    std::size_t best = 0;
    for (std::size_t i = 1; i < a.tags.size(); ++i) {
      if (a.tags[i].second > a.tags[best].second) best = i;
    }
    e.tag = a.tags[best].first;
    max_abs = std::max(max_abs, std::abs(e.mean));
    d.entries.push_back(std::move(e));
  }
  std::size_t positive = 0;
  for (auto& e : d.entries) {
    e.normalized = max_abs > 0.0 ? e.mean / max_abs : 0.0;
    if (e.mean > 0.0) {
      d.density[static_cast<std::size_t>(e.tag)] += 1.0;
      ++positive;
    }
  }
  if (positive > 0) {
    for (double& x : d.density) x /= static_cast<double>(positive);
  }
  d.top.resize(d.entries.size());
  std::iota(d.top.begin(), d.top.end(), 0);
  std::stable_sort(d.top.begin(), d.top.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(d.entries[a].normalized) > std::abs(d.entries[b].normalized);
  });
  if (d.top.size() > k) d.top.resize(k);
  return d;
}

// --- persistence -----------------------------------------------------------------

namespace {

constexpr std::string_view kActMagic = "LRMA";
constexpr std::uint32_t kActVersion = 1;

}  // namespace

void save_activations(const std::filesystem::path& path, const ActivationDataset& acts) {
  detail::Writer body;
  body.u64(acts.width);
  body.u64(acts.sentences.size());
  body.str(acts.provenance);
  for (const auto& s : acts.sentences) {
    body.u64(s.tokens.size());
    for (const auto& t : s.tokens) body.str(t);
    for (PosTag t : s.tags) body.u8(static_cast<std::uint8_t>(t));
    body.f64s(s.activations.storage().data(), s.activations.size());
  }
  detail::Writer w;
  w.bytes(kActMagic.data(), kActMagic.size());
  w.u32(kActVersion);
  // Total file size, so a short file can be told apart from a corrupted one.
  w.u64(kActMagic.size() + 4 + 8 + body.buffer().size() + 4);
  w.bytes(body.buffer().data(), body.buffer().size());
  w.seal();
  detail::write_file_atomic(path, w.buffer());
}

ActivationDataset load_activations(const std::filesystem::path& path) {
  const auto data = detail::read_file(path);
  const std::string what = "activation dump " + path.string();
  auto probe = [](const std::vector<char>& d) -> std::optional<std::size_t> {
    if (d.size() < 16) return std::nullopt;
    std::uint64_t total;
    std::memcpy(&total, d.data() + 8, 8);
    return static_cast<std::size_t>(total);
  };
  detail::Reader r = detail::open_sealed(data, kActMagic, kActVersion, what, probe);
  if (r.u64() != data.size()) throw FormatError(FormatError::Kind::malformed, what + ": size field mismatch");
  ActivationDataset ds;
  ds.width = r.u64();
  const std::uint64_t count = r.u64();
  ds.provenance = r.str();
  for (std::uint64_t i = 0; i < count; ++i) {
    ActivationSentence s;
    const std::uint64_t n = r.u64();
    if (n == 0 || ds.width == 0 || n > r.remaining()) throw FormatError(FormatError::Kind::malformed, what + ": bad sentence length");
    for (std::uint64_t t = 0; t < n; ++t) s.tokens.push_back(r.str());
    for (std::uint64_t t = 0; t < n; ++t) {
      const std::uint8_t tag = r.u8();
      if (tag >= kPosTagCount) throw FormatError(FormatError::Kind::malformed, what + ": bad POS tag");
      s.tags.push_back(static_cast<PosTag>(tag));
    }
    if (ds.width > r.remaining() / 8 / n) throw FormatError(FormatError::Kind::truncated, what + ": activation block overruns file");
    s.activations = Tensor::matrix(n, ds.width);
    r.f64s(s.activations.storage().data(), s.activations.size());
    ds.sentences.push_back(std::move(s));
  }
  if (r.remaining() != 0) throw FormatError(FormatError::Kind::malformed, what + ": trailing bytes");
  return ds;
}

std::string activations_to_json(const ActivationDataset& acts) {
  nlohmann::json j;
  j["width"] = acts.width;
  j["provenance"] = acts.provenance;
  j["sentences"] = nlohmann::json::array();
  for (const auto& s : acts.sentences) {
    nlohmann::json e;
    e["tokens"] = s.tokens;
    std::vector<std::string> tags;
    for (PosTag t : s.tags) tags.emplace_back(pos_name(t));
    e["tags"] = tags;
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
      auto row = s.activations.row(t);
      rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    e["activations"] = std::move(rows);
    j["sentences"].push_back(std::move(e));
  }
  return j.dump();
}

std::string analysis_to_json(std::string_view stage, const MassActivationMatrix& mass, const MassChange* change,
                             std::size_t top_k) {
  const KnowledgeAbstraction k = knowledge_abstraction(mass);
  nlohmann::json j;
  j["stage"] = stage;
  j["width"] = mass.width;
  j["signed_mass"] = mass.signed_mass;
  j["magnitude_mass"] = mass.magnitude_mass;
  j["max_mass"] = mass.max_mass;
  j["hit_count"] = mass.hit_count;
  j["knowledge"] = {{"positive", k.positive}, {"negative", k.negative}, {"overall", k.overall}};
  j["top_changed"] = nlohmann::json::array();
  if (change != nullptr) {
    for (std::size_t i = 0; i < std::min(top_k, change->most_changed.size()); ++i) {
      const std::size_t n = change->most_changed[i];
      j["top_changed"].push_back({{"neuron", n}, {"delta", change->delta[n]}});
    }
  }
  return j.dump(1);
}

}  // namespace lrmt
