#include "lrmt/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "lrmt/checksum.hpp"

namespace lrmt {

using nlohmann::json;

namespace {

constexpr const char* kBlue = "#1f4fd1";
constexpr const char* kRed = "#d12a1f";

std::string coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string file_stem(std::string_view label) {
  std::string out;
  for (char c : label) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
    out += ok ? c : '_';
  }
  return out.empty() ? "stage" : out;
}

std::string text(double x, double y, const std::string& body, const char* anchor = "start", int size = 11) {
  return "<text x=\"" + coord(x) + "\" y=\"" + coord(y) + "\" font-size=\"" + std::to_string(size) +
         "\" text-anchor=\"" + anchor + "\">" + body + "</text>\n";
}

std::string line(double x1, double y1, double x2, double y2, const char* stroke = "#888") {
  return "<line x1=\"" + coord(x1) + "\" y1=\"" + coord(y1) + "\" x2=\"" + coord(x2) + "\" y2=\"" + coord(y2) +
         "\" stroke=\"" + stroke + "\" stroke-width=\"1\"/>\n";
}

std::string svg_open(double w, double h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + coord(w) + "\" height=\"" + coord(h) +
         "\" viewBox=\"0 0 " + coord(w) + " " + coord(h) + "\" font-family=\"sans-serif\">\n";
}

json pos_json(const PosTokenDistribution& d) {
  json entries = json::array();
  for (const auto& e : d.entries) {
    entries.push_back(json{{"token", e.token},
                           {"tag", std::string(pos_name(e.tag))},
                           {"mean", e.mean},
                           {"normalized", e.normalized},
                           {"count", e.count}});
  }
  json density = json::object();
  for (std::size_t t = 0; t < kPosTagCount; ++t) density[std::string(pos_name(static_cast<PosTag>(t)))] = d.density[t];
  return json{{"neuron", d.neuron}, {"entries", entries}, {"top", d.top}, {"density", density}};
}

std::vector<char> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

}  // namespace

std::string format_number(double v) { return json(v).dump(); }

void AnalysisBundle::validate() const {
  std::set<std::string> seen;
  for (const auto& s : stages) {
    if (!seen.insert(s.label).second) throw std::invalid_argument("duplicate stage label '" + s.label + "'");
    if (s.mass.width != stages.front().mass.width) {
      throw std::invalid_argument("stage '" + s.label + "' has width " + std::to_string(s.mass.width) + ", expected " +
                                  std::to_string(stages.front().mass.width));
    }
  }
}

StageAnalysis& AnalysisBundle::add(std::string label, MassActivationMatrix mass) {
  StageAnalysis s;
  s.label = std::move(label);
  s.knowledge = knowledge_abstraction(mass);
  s.mass = std::move(mass);
  stages.push_back(std::move(s));
  return stages.back();
}

std::string render_knowledge_plot(const AnalysisBundle& bundle, std::span<const std::string> select) {
  bundle.validate();
  std::vector<const StageAnalysis*> panels;
  if (select.empty()) {
    for (const auto& s : bundle.stages) panels.push_back(&s);
  } else {
    for (const auto& name : select) {
      auto it = std::find_if(bundle.stages.begin(), bundle.stages.end(), [&](const auto& s) { return s.label == name; });
      if (it == bundle.stages.end()) throw std::invalid_argument("no stage labelled '" + name + "'");
      panels.push_back(&*it);
    }
  }
  if (panels.empty()) throw std::invalid_argument("knowledge plot needs at least one stage");

  const double panel_w = 720.0;
  const double panel_h = 220.0;
  const double left = 90.0;
  const double top = 30.0;
  const double plot_w = panel_w - left - 20.0;
  const double plot_h = panel_h - top - 40.0;
  std::string out = svg_open(panel_w, panel_h * static_cast<double>(panels.size()));
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const StageAnalysis& s = *panels[p];
    const std::size_t n = s.mass.width;
    const double y0 = panel_h * static_cast<double>(p);
    double hi = 0.0;
    double lo = 0.0;
    for (double v : s.mass.signed_mass) {
      hi = std::max(hi, v);
      lo = std::min(lo, v);
    }
    // Symmetric axis around zero.
    double extent = std::max(hi, -lo);
    if (extent == 0.0) extent = 1.0;
    auto ymap = [&](double v) { return y0 + top + plot_h / 2.0 - v / extent * (plot_h / 2.0); };
    auto xmap = [&](std::size_t k) {
      return left + (n <= 1 ? plot_w / 2.0 : plot_w * static_cast<double>(k) / static_cast<double>(n - 1));
    };

    out += "<g class=\"panel\" data-stage=\"" + xml_escape(s.label) + "\">\n";
    out += text(left, y0 + 18.0,
                xml_escape(s.label) + "  positive " + format_number(s.knowledge.positive) + "  negative " +
                    format_number(s.knowledge.negative) + "  overall " + format_number(s.knowledge.overall),
                "start", 12);
    out += line(left, ymap(0.0), left + plot_w, ymap(0.0));
    out += line(left, y0 + top, left, y0 + top + plot_h);
    if (hi > 0.0) out += text(left - 6.0, ymap(hi) + 4.0, format_number(hi), "end", 10);
    if (lo < 0.0) out += text(left - 6.0, ymap(lo) + 4.0, format_number(lo), "end", 10);
    out += text(left + plot_w / 2.0, y0 + top + plot_h + 28.0, "neuron (width " + std::to_string(n) + ")", "middle", 11);

    for (int series = 0; series < 2; ++series) {
      const bool positive = series == 0;
      const char* colour = positive ? kBlue : kRed;
      std::string pts;
      std::string marks;
      for (std::size_t k = 0; k < n; ++k) {
        const double v = positive ? std::max(s.mass.signed_mass[k], 0.0) : std::min(s.mass.signed_mass[k], 0.0);
        const std::string x = coord(xmap(k));
        const std::string y = coord(ymap(v));
        pts += (k ? " " : "") + x + "," + y;
        marks += "<circle class=\"mark " + std::string(positive ? "positive" : "negative") + "\" cx=\"" + x +
                 "\" cy=\"" + y + "\" r=\"2\" fill=\"" + colour + "\"/>\n";
      }
      out += "<polyline class=\"series " + std::string(positive ? "positive" : "negative") +
             "\" fill=\"none\" stroke=\"" + colour + "\" stroke-width=\"1\" points=\"" + pts + "\"/>\n";
      out += marks;
    }
    out += "</g>\n";
  }
  out += "</svg>\n";
  return out;
}

std::string render_pos_distribution(const PosTokenDistribution& dist, const std::string& title) {
  if (dist.entries.empty()) throw std::invalid_argument("POS distribution is empty");
  const double width = 860.0;
  const double height = 420.0;
  const double left = 60.0;
  const double top = 40.0;
  const double plot_w = width - left - 20.0;
  const double plot_h = height - top - 70.0;
  const double col = plot_w / static_cast<double>(kPosTagCount);
  const double mid = top + plot_h / 2.0;

  std::string out = svg_open(width, height);
  out += text(left, 22.0, xml_escape(title.empty() ? "neuron " + std::to_string(dist.neuron) : title), "start", 13);
  out += line(left, mid, left + plot_w, mid);
  out += line(left, top, left, top + plot_h);

  // Bar layer: density on the upper half.
  out += "<g class=\"bars\">\n";
  for (std::size_t t = 0; t < kPosTagCount; ++t) {
    const double d = dist.density[t];
    const double x = left + col * static_cast<double>(t);
    out += text(x + col / 2.0, top + plot_h + 18.0, std::string(pos_name(static_cast<PosTag>(t))), "middle", 9);
    if (d <= 0.0) continue;
    const double h = d * (plot_h / 2.0);
    out += "<rect class=\"bar\" data-tag=\"" + std::string(pos_name(static_cast<PosTag>(t))) + "\" x=\"" +
           coord(x + col * 0.15) + "\" y=\"" + coord(mid - h) + "\" width=\"" + coord(col * 0.7) + "\" height=\"" +
           coord(h) + "\" fill=\"#9db8e8\"/>\n";
    out += text(x + col / 2.0, mid - h - 3.0, format_number(d), "middle", 8);
  }
  out += "</g>\n";

  // Scatter layer: normalised activation in [-1, 1] over the full height.
  out += "<g class=\"points\">\n";
  for (std::size_t idx : dist.top) {
    const PosTokenEntry& e = dist.entries.at(idx);
    const double x = left + col * (static_cast<double>(static_cast<std::size_t>(e.tag)) + 0.5);
    const double y = mid - e.normalized * (plot_h / 2.0);
    const char* colour = e.normalized >= 0.0 ? kBlue : kRed;
    out += "<circle class=\"point\" cx=\"" + coord(x) + "\" cy=\"" + coord(y) + "\" r=\"3\" fill=\"" + colour + "\"/>\n";
    out += "<text class=\"label\" x=\"" + coord(x + 5.0) + "\" y=\"" + coord(y - 4.0) +
           "\" font-size=\"10\">" + xml_escape(e.token) + "</text>\n";
  }
  out += "</g>\n</svg>\n";
  return out;
}

std::vector<Artifact> export_analysis(const AnalysisBundle& bundle, const std::filesystem::path& dir) {
  bundle.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());

  // Render everything first; files are only written once all content exists.
  std::vector<std::pair<Artifact, std::string>> files;
  auto add = [&](std::string path, std::string kind, std::string content) {
    Artifact a;
    a.path = std::move(path);
    a.kind = std::move(kind);
    a.bytes = content.size();
    a.crc32 = detail::crc32_of(content.data(), content.size());
    files.emplace_back(std::move(a), std::move(content));
  };

  if (!bundle.stages.empty()) {
    json stages = json::array();
    for (std::size_t i = 0; i < bundle.stages.size(); ++i) {
      const StageAnalysis& s = bundle.stages[i];
      MassChange change;
      const MassChange* cp = nullptr;
      if (i > 0) {
        change = change_in_mass(bundle.stages[i - 1].mass, s.mass);
        cp = &change;
      }
      json j = json::parse(analysis_to_json(s.label, s.mass, cp));
      j["pos"] = json::array();
      for (const auto& d : s.pos) j["pos"].push_back(pos_json(d));
      stages.push_back(std::move(j));
    }
    add("analysis.json", "analysis", json{{"stages", stages}}.dump(1) + "\n");

    std::string csv = "stage,label,score,p1,p2,p3,p4,bp\n";
    for (std::size_t i = 0; i < bundle.stages.size(); ++i) {
      const BleuReport& b = bundle.stages[i].bleu;
      csv += std::to_string(i) + "," + bundle.stages[i].label + "," + format_number(b.score);
      for (double p : b.precisions) csv += "," + format_number(p);
      csv += "," + format_number(b.brevity_penalty) + "\n";
    }
    add("bleu.csv", "bleu", csv);

    add("knowledge.svg", "knowledge_plot", render_knowledge_plot(bundle));
    for (std::size_t i = 0; i < bundle.stages.size(); ++i) {
      const StageAnalysis& s = bundle.stages[i];
      const std::string stem = std::to_string(i) + "_" + file_stem(s.label);
      if (!s.samples.empty()) add("translations_" + stem + ".tsv", "translations", translations_tsv(s.samples));
      for (const auto& d : s.pos) {
        add("pos_" + stem + "_n" + std::to_string(d.neuron) + ".svg", "pos_plot",
            render_pos_distribution(d, s.label + " neuron " + std::to_string(d.neuron)));
      }
    }
  }

  std::vector<Artifact> index;
  for (const auto& [a, content] : files) {
    detail::write_file_atomic(dir / a.path, bytes_of(content));
    index.push_back(a);
  }
  std::sort(index.begin(), index.end(), [](const Artifact& a, const Artifact& b) { return a.path < b.path; });
  json arr = json::array();
  for (const Artifact& a : index) {
    arr.push_back(json{{"path", a.path}, {"kind", a.kind}, {"bytes", a.bytes}, {"crc32", crc32_hex(a.crc32)}});
  }
  detail::write_file_atomic(dir / "report.json", bytes_of(json{{"artifacts", arr}}.dump(1) + "\n"));
  return index;
}

}  // namespace lrmt
