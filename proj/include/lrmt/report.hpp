#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lrmt/eval.hpp"
#include "lrmt/xray.hpp"

namespace lrmt {

struct StageAnalysis {
  std::string label;
  MassActivationMatrix mass;
  KnowledgeAbstraction knowledge;
  BleuReport bleu;
  std::vector<Translation> samples;
  std::vector<PosTokenDistribution> pos;
};

/// Per-stage analysis results, in plan order.
struct AnalysisBundle {
  std::vector<StageAnalysis> stages;

  /// Throws std::invalid_argument on duplicate labels or mixed widths.
  void validate() const;
  /// Adds a stage, deriving `knowledge` from `mass`.
  StageAnalysis& add(std::string label, MassActivationMatrix mass);
};

/// Shortest round-trip decimal form; the JSON exports use the same spelling,
/// so a number shown in a plot can be found verbatim in the export.
std::string format_number(double v);

/// Signed mass per neuron, one panel per stage. Positive parts are the blue
/// series, negative parts the red one; each series has one mark per neuron.
/// `stages` selects panels by label (empty = all).
std::string render_knowledge_plot(const AnalysisBundle& bundle, std::span<const std::string> stages = {});

/// Bars: share of each POS class among positively activated tokens. Points:
/// the top tokens at their normalised activation, placed in their POS column.
std::string render_pos_distribution(const PosTokenDistribution& dist, const std::string& title = "");

struct Artifact {
  std::string path;  // relative to the export directory
  std::string kind;
  std::size_t bytes = 0;
  std::uint32_t crc32 = 0;
};

/// Writes analysis.json, bleu.csv, per-stage translations and SVGs, then the
/// report.json index. An empty bundle writes only the index.
std::vector<Artifact> export_analysis(const AnalysisBundle& bundle, const std::filesystem::path& dir);

}  // namespace lrmt
