#include <cstring>

#include "binary_io.hpp"
#include "lrmt/training.hpp"

namespace lrmt {

using nlohmann::json;

namespace {

constexpr std::string_view kMagic = "LRMT";
constexpr std::uint32_t kVersion = 1;

json dims_json(const ModelDims& d) {
  return json{{"arch", std::string(arch_name(d.arch))},
              {"source_vocab", d.source_vocab},
              {"target_vocab", d.target_vocab},
              {"embedding", d.embedding},
              {"hidden", d.hidden},
              {"attention", d.attention},
              {"dropout", d.dropout}};
}

ModelDims dims_from(const json& j) {
  ModelDims d;
  d.arch = arch_from_name(j.at("arch").get<std::string>());
  d.source_vocab = j.at("source_vocab").get<std::size_t>();
  d.target_vocab = j.at("target_vocab").get<std::size_t>();
  d.embedding = j.at("embedding").get<std::size_t>();
  d.hidden = j.at("hidden").get<std::size_t>();
  d.attention = j.at("attention").get<std::size_t>();
  d.dropout = j.at("dropout").get<double>();
  return d;
}

json provenance_json(const Provenance& p) {
  json prunes = json::array();
  for (const PruneRecord& r : p.prunes) {
    prunes.push_back(json{{"stage", r.stage},
                          {"mode", std::string(prune_mode_name(r.mode))},
                          {"percent", r.percent},
                          {"neurons", r.neurons}});
  }
  return json{{"regime", p.regime},
              {"stage", p.stage},
              {"dataset", p.dataset},
              {"target_languages", p.target_languages},
              {"epochs", p.epochs},
              {"best_epoch", p.best_epoch},
              {"best_valid_loss", p.best_valid_loss},
              {"prunes", prunes}};
}

Provenance provenance_from(const json& j) {
  Provenance p;
  p.regime = j.at("regime").get<std::string>();
  p.stage = j.at("stage").get<std::size_t>();
  p.dataset = j.at("dataset").get<std::string>();
  p.target_languages = j.at("target_languages").get<std::vector<std::string>>();
  p.epochs = j.at("epochs").get<std::size_t>();
  p.best_epoch = j.at("best_epoch").get<std::size_t>();
  // Infinity (no epoch ever improved) is stored as null.
  p.best_valid_loss = j.at("best_valid_loss").is_null() ? std::numeric_limits<double>::infinity()
                                                        : j.at("best_valid_loss").get<double>();
  for (const json& r : j.at("prunes")) {
    p.prunes.push_back(PruneRecord{r.at("stage").get<std::size_t>(),
                                   prune_mode_from_name(r.at("mode").get<std::string>()),
                                   r.at("percent").get<double>(), r.at("neurons").get<std::vector<std::size_t>>()});
  }
  return p;
}

std::vector<std::size_t> set_rows(const std::vector<std::uint8_t>& mask) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out.push_back(i);
  }
  return out;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const std::vector<const Parameter*> params = ck.model.parameters();
  json tensors = json::array();
  for (const Parameter* p : params) {
    tensors.push_back(json{{"name", p->name},
                           {"shape", p->value.shape()},
                           {"trainable", p->trainable},
                           {"frozen", p->frozen},
                           {"frozen_rows", set_rows(p->frozen_rows)}});
  }
  json header{{"config", ck.config.to_json()},
              {"dims", dims_json(ck.model.dims())},
              {"source_vocab", ck.source_vocab.tokens()},
              {"target_vocab", ck.target_vocab.tokens()},
              {"rng", ck.rng_state},
              {"provenance", provenance_json(ck.provenance)},
              {"tensors", tensors},
              {"pruned",
               {{"forward", ck.model.encoder_cell().pruned_units()},
                {"backward", ck.model.encoder_backward_cell().pruned_units()}}}};
  const std::string text = header.dump();

  std::size_t payload = 0;
  for (const Parameter* p : params) payload += p->value.size() * sizeof(double);

  detail::Writer w;
  w.bytes(kMagic.data(), kMagic.size());
  w.u32(kVersion);
  // Total file size, so a short file can be told apart from a corrupted one.
  w.u64(kMagic.size() + 4 + 8 + 8 + text.size() + payload + 4);
  w.str(text);
  for (const Parameter* p : params) w.f64s(p->value.storage().data(), p->value.size());
  w.seal();
  detail::write_file_atomic(path, w.buffer());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  using Kind = FormatError::Kind;
  const auto data = detail::read_file(path);
  const std::string what = "checkpoint " + path.string();
  auto probe = [](const std::vector<char>& d) -> std::optional<std::size_t> {
    if (d.size() < 16) return std::nullopt;
    std::uint64_t total;
    std::memcpy(&total, d.data() + 8, 8);
    return static_cast<std::size_t>(total);
  };
  detail::Reader r = detail::open_sealed(data, kMagic, kVersion, what, probe);
  if (r.u64() != data.size()) throw FormatError(Kind::malformed, what + ": size field mismatch");

  Checkpoint ck;
  json header;
  try {
    header = json::parse(r.str());
    ck.config = TrainConfig::from_json(header.at("config"));
    ck.source_vocab = Vocabulary::from_tokens(header.at("source_vocab").get<std::vector<std::string>>());
    ck.target_vocab = Vocabulary::from_tokens(header.at("target_vocab").get<std::vector<std::string>>());
    ck.rng_state = header.at("rng").get<std::string>();
    if (!ck.rng_state.empty()) Rng().set_state(ck.rng_state);
    ck.provenance = provenance_from(header.at("provenance"));
    const ModelDims dims = dims_from(header.at("dims"));
    if (dims.source_vocab != ck.source_vocab.size() || dims.target_vocab != ck.target_vocab.size()) {
      throw std::invalid_argument("vocabulary sizes disagree with model dimensions");
    }
    ck.model = Seq2SeqModel(dims, 0);
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(Kind::malformed, what + ": bad header: " + e.what());
  }

  ParameterRefs params = ck.model.parameters();
  const json& tensors = header.at("tensors");
  if (!tensors.is_array() || tensors.size() != params.size()) {
    throw FormatError(Kind::malformed, what + ": tensor manifest does not match the architecture");
  }
  try {
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      const json& t = tensors[i];
      if (t.at("name").get<std::string>() != p.name ||
          t.at("shape").get<std::vector<std::size_t>>() != p.value.shape()) {
        throw std::invalid_argument("tensor " + std::to_string(i) + " is not " + p.name + " " +
                                    shape_string(p.value.shape()));
      }
      p.trainable = t.at("trainable").get<bool>();
      p.frozen = t.at("frozen").get<bool>();
      p.frozen_rows.clear();
      for (std::size_t row : t.at("frozen_rows").get<std::vector<std::size_t>>()) p.freeze_row(row);
    }
    auto restore_pruned = [&](RecurrentCell& cell, const json& units) {
      for (std::size_t u : units.get<std::vector<std::size_t>>()) {
        if (u >= cell.pruned.size()) throw std::out_of_range("pruned unit out of range");
        cell.pruned[u] = 1;
      }
    };
    restore_pruned(ck.model.encoder_cell(), header.at("pruned").at("forward"));
    restore_pruned(ck.model.encoder_backward_cell(), header.at("pruned").at("backward"));
  } catch (const std::exception& e) {
    throw FormatError(Kind::malformed, what + ": " + e.what());
  }
  for (Parameter* p : params) r.f64s(p->value.storage().data(), p->value.size());
  if (r.remaining() != 0) throw FormatError(Kind::malformed, what + ": trailing bytes");
  return ck;
}

}  // namespace lrmt
