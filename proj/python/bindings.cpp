#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "lrmt/cli.hpp"
#include "lrmt/eval.hpp"
#include "lrmt/training.hpp"
#include "lrmt/xray.hpp"

namespace py = pybind11;
using namespace lrmt;

namespace {

py::dict bleu_dict(const BleuReport& b) {
  py::dict d;
  d["score"] = b.score;
  d["precisions"] = std::vector<double>(b.precisions.begin(), b.precisions.end());
  d["brevity_penalty"] = b.brevity_penalty;
  d["candidate_length"] = b.candidate_length;
  d["reference_length"] = b.reference_length;
  return d;
}

py::array_t<double> to_array(const std::vector<double>& v) { return py::array_t<double>(v.size(), v.data()); }

// Activations given as a list of [tokens x width] float arrays.
ActivationDataset dataset_from(const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& blocks) {
  ActivationDataset ds;
  for (const auto& b : blocks) {
    if (b.ndim() != 2) throw std::invalid_argument("activation blocks must be 2-D");
    const auto rows = static_cast<std::size_t>(b.shape(0));
    const auto cols = static_cast<std::size_t>(b.shape(1));
    if (ds.sentences.empty()) ds.width = cols;
    if (cols != ds.width) throw std::invalid_argument("activation blocks differ in width");
    ActivationSentence s;
    s.tokens.assign(rows, "_");
    s.tags.assign(rows, PosTag::X);
    s.activations = Tensor::matrix(rows, cols);
    std::copy(b.data(), b.data() + rows * cols, s.activations.storage().begin());
    ds.sentences.push_back(std::move(s));
  }
  return ds;
}

py::dict mass_dict(const MassActivationMatrix& m) {
  const KnowledgeAbstraction k = knowledge_abstraction(m);
  py::dict d;
  d["width"] = m.width;
  d["rows"] = m.rows;
  d["signed"] = to_array(m.signed_mass);
  d["magnitude"] = to_array(m.magnitude_mass);
  d["max"] = to_array(m.max_mass);
  d["hit_count"] = py::array_t<std::uint64_t>(m.hit_count.size(), m.hit_count.data());
  d["positive"] = k.positive;
  d["negative"] = k.negative;
  d["overall"] = k.overall;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Low-resource NMT workbench core";

  m.def("preprocess", [](const std::string& raw, bool expand) { return preprocess(raw, PreprocessOptions{expand}); },
        py::arg("raw"), py::arg("expand_contractions") = true);
  m.def("tokenize", &tokenize);

  m.def(
      "bleu4",
      [](const std::vector<Tokens>& candidates, const std::vector<Tokens>& references) {
        return bleu_dict(bleu4(candidates, references));
      },
      py::arg("candidates"), py::arg("references"));

  m.def("prune_count", &prune_count, py::arg("width"), py::arg("percent"));

  m.def(
      "mass_matrices", [](const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& blocks) {
        return mass_dict(mass_matrices(dataset_from(blocks)));
      },
      py::arg("blocks"));

  m.def(
      "select_prune_set",
      [](const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& blocks,
         const std::string& mode, double percent) {
        return select_prune_set(mass_matrices(dataset_from(blocks)), prune_mode_from_name(mode), percent);
      },
      py::arg("blocks"), py::arg("mode"), py::arg("percent"));

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_property_readonly("arch", [](const Checkpoint& c) { return std::string(arch_name(c.config.arch)); })
      .def_property_readonly("config", [](const Checkpoint& c) { return c.config.to_json().dump(); })
      .def_property_readonly("regime", [](const Checkpoint& c) { return c.provenance.regime; })
      .def_property_readonly("stage", [](const Checkpoint& c) { return c.provenance.stage; })
      .def_property_readonly("target_languages", [](const Checkpoint& c) { return c.provenance.target_languages; })
      .def_property_readonly("analysis_width", [](const Checkpoint& c) { return c.model.analysis_width(); })
      .def_property_readonly("pruned",
                             [](const Checkpoint& c) {
                               std::vector<std::size_t> out;
                               for (const auto& p : c.provenance.prunes) out.insert(out.end(), p.neurons.begin(), p.neurons.end());
                               return out;
                             })
      .def(
          "translate",
          [](const Checkpoint& c, const std::vector<std::string>& sentences, int control) {
            std::vector<std::string> out;
            for (const auto& s : sentences) {
              EncodedPair p;
              Tokens toks = tokenize(preprocess(s));
              if (toks.size() > c.config.max_len) toks.resize(c.config.max_len);
              p.source = encode(toks, c.source_vocab);
              p.target = {Vocabulary::kSos, Vocabulary::kEos};
              p.control = control;
              const EncodedPair* rows[] = {&p};
              const auto ids = c.model.greedy_decode(make_batch(rows, control >= 0), c.config.max_len).front();
              out.push_back(join_tokens(decode_ids(ids, c.target_vocab)));
            }
            return out;
          },
          py::arg("sentences"), py::arg("control") = -1)
      .def("save", [](const Checkpoint& c, const std::filesystem::path& p) { save_checkpoint(c, p); });

  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> full{"lrmt"};
        full.insert(full.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : full) argv.push_back(a.c_str());
        std::ostringstream out;
        std::ostringstream err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
