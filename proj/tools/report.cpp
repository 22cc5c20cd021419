#include "report.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "fracopt/optimize.hpp"
#include "fracopt/recommend.hpp"
#include "fracopt/welldata.hpp"
#include "fracopt/welldata_io.hpp"

namespace {

using nlohmann::json;
using fracopt::format_double;

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

// CSV text to a markdown table.
std::string csv_table(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::ostringstream out;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = fracopt::split_csv_line(line);
    out << '|';
    for (const auto& c : cells) out << ' ' << c << " |";
    out << '\n';
    if (header) {
      out << '|';
      for (std::size_t i = 0; i < cells.size(); ++i) out << " --- |";
      out << '\n';
      header = false;
    }
  }
  return out.str();
}

}  // namespace

std::string percent_bars_svg(const json& optimize) {
  const auto& results = optimize.at("results");
  const auto& lower = optimize.at("lower");
  const auto& upper = optimize.at("upper");
  const double w = 720, h = 320, left = 50, bottom = 60, top = 20;
  const double group = (w - left - 10) / static_cast<double>(fracopt::kDesignDim);
  const double bar = results.empty() ? 0 : (group - 12) / static_cast<double>(results.size());
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const double plot_h = h - bottom - top;
  for (int pct : {0, 50, 100}) {
    const double y = top + plot_h * (1 - pct / 100.0);
    s << "<line x1=\"" << left << "\" x2=\"" << w - 10 << "\" y1=\"" << y << "\" y2=\"" << y
      << "\" stroke=\"#ccc\"/><text x=\"" << left - 6 << "\" y=\"" << y + 4
      << "\" font-size=\"11\" text-anchor=\"end\">" << pct << "%</text>\n";
  }
  for (std::size_t p = 0; p < fracopt::kDesignDim; ++p) {
    const double x0 = left + group * static_cast<double>(p) + 6;
    const std::string name(fracopt::kDesignNames[p]);
    for (std::size_t m = 0; m < results.size(); ++m) {
      const auto& d = results[m].at("best_design");
      if (!d.contains(name)) continue;
      const double pct = std::clamp(
          fracopt::percent_of_bounds(d[name].get<double>(), lower[p].get<double>(), upper[p].get<double>()), 0.0,
          100.0);
      const double bh = plot_h * pct / 100.0;
      s << "<rect x=\"" << x0 + bar * static_cast<double>(m) << "\" y=\"" << top + plot_h - bh << "\" width=\""
        << bar * 0.9 << "\" height=\"" << bh << "\" fill=\"" << kPalette[m % 6] << "\"/>\n";
    }
    s << "<text x=\"" << x0 + (group - 12) / 2 << "\" y=\"" << h - bottom + 16
      << "\" font-size=\"11\" text-anchor=\"middle\">" << name << "</text>\n";
  }
  for (std::size_t m = 0; m < results.size(); ++m) {
    const double x = left + 110.0 * static_cast<double>(m);
    s << "<rect x=\"" << x << "\" y=\"" << h - 22 << "\" width=\"12\" height=\"12\" fill=\"" << kPalette[m % 6]
      << "\"/><text x=\"" << x + 16 << "\" y=\"" << h - 12 << "\" font-size=\"12\">"
      << results[m].at("method").get<std::string>() << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string trace_svg(const json& optimize) {
  const auto& results = optimize.at("results");
  std::vector<std::vector<double>> curves;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t longest = 1;
  for (const auto& r : results) {
    std::vector<double> c;
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& e : r.at("trace")) {
      if (e.at("feasible").get<bool>()) best = std::max(best, e.at("value").get<double>());
      c.push_back(best);
      if (std::isfinite(best)) {
        lo = std::min(lo, best);
        hi = std::max(hi, best);
      }
    }
    longest = std::max(longest, c.size());
    curves.push_back(std::move(c));
  }
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  if (hi <= lo) hi = lo + 1;
  const double w = 720, h = 320, left = 70, right = 10, top = 20, bottom = 50;
  auto px = [&](std::size_t i) { return left + (w - left - right) * static_cast<double>(i) / static_cast<double>(longest); };
  auto py = [&](double v) { return top + (h - top - bottom) * (1 - (v - lo) / (hi - lo)); };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left - 6 << "\" y=\"" << py(hi) + 4 << "\" font-size=\"11\" text-anchor=\"end\">" << fmt(hi)
    << "</text><text x=\"" << left - 6 << "\" y=\"" << py(lo) + 4 << "\" font-size=\"11\" text-anchor=\"end\">"
    << fmt(lo) << "</text>\n";
  s << "<text x=\"" << (w + left) / 2 << "\" y=\"" << h - 28
    << "\" font-size=\"11\" text-anchor=\"middle\">evaluations</text>\n";
  for (std::size_t m = 0; m < curves.size(); ++m) {
    std::ostringstream pts;
    for (std::size_t i = 0; i < curves[m].size(); ++i)
      if (std::isfinite(curves[m][i])) pts << px(i + 1) << ',' << py(curves[m][i]) << ' ';
    s << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << kPalette[m % 6] << "\" points=\"" << pts.str()
      << "\"/>\n";
    const double x = left + 110.0 * static_cast<double>(m);
    s << "<rect x=\"" << x << "\" y=\"" << h - 18 << "\" width=\"12\" height=\"12\" fill=\"" << kPalette[m % 6]
      << "\"/><text x=\"" << x + 16 << "\" y=\"" << h - 8 << "\" font-size=\"12\">"
      << results[m].at("method").get<std::string>() << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

ReportBundle build_report(const ReportInputs& in) {
  ReportBundle b;
  std::ostringstream md;
  md << "# Run report\n\n";
  if (in.manifest) {
    md << "fracopt " << in.manifest->value("version", std::string("?")) << ". Steps run:";
    for (const auto& [step, info] : in.manifest->at("steps").items()) md << ' ' << step;
    md << ".\n\n";
  }
  if (in.metrics_csv) md << "## Forecast quality\n\n" << csv_table(*in.metrics_csv) << '\n';
  if (in.features) {
    md << "## Features\n\n";
    md << in.features->at("retained").size() << " retained, " << in.features->at("dropped").size() << " dropped.\n\n";
    const auto& rows = in.features->at("report");
    if (rows.is_array() && !rows.empty()) {
      md << "| feature | sensitivity | mean abs attribution |\n| --- | --- | --- |\n";
      std::size_t shown = 0;
      for (const auto& r : rows) {
        if (++shown > 15) break;
        auto cell = [&](const char* k) { return r.contains(k) && !r[k].is_null() ? fmt(r[k].get<double>()) : "-"; };
        md << "| " << r.value("name", std::string()) << " | " << cell("sobol_first_order") << " | "
           << cell("mean_abs_shap") << " |\n";
      }
      md << '\n';
    }
  }
  if (in.offsets) {
    const auto& cl = in.offsets->at("cluster");
    md << "## Offset wells\n\n";
    md << "Pilot " << in.offsets->value("pilot_id", std::string()) << ": cluster of " << cl.at("members").size()
       << " wells";
    const auto& sil = cl.at("clustering").at("silhouette");
    if (!sil.is_null()) md << ", silhouette " << fmt(sil.get<double>(), 3);
    if (cl.at("clustering").at("fallback").get<bool>()) md << " (fallback: no acceptable clustering)";
    md << ".\n\n| parameter | lower | upper | mean |\n| --- | --- | --- | --- |\n";
    for (const auto& [name, bnd] : cl.at("bounds").items())
      md << "| " << name << " | " << fmt(bnd["lower"].get<double>()) << " | " << fmt(bnd["upper"].get<double>())
         << " | " << fmt(bnd["mean"].get<double>()) << " |\n";
    md << '\n';
    if (in.has_offsets_svg) md << "![offset wells](offsets.svg)\n\n";
  }
  if (in.comparison_csv) md << "## Optimiser comparison\n\n" << csv_table(*in.comparison_csv) << '\n';
  if (in.optimize) {
    b.files.emplace_back("percent.svg", percent_bars_svg(*in.optimize));
    b.files.emplace_back("trace.svg", trace_svg(*in.optimize));
    md << "Recommended values as a share of the offset-well range (0% is the lower bound):\n\n"
       << "![percent of bounds](percent.svg)\n\n![best so far](trace.svg)\n\n";
  }
  if (in.retro) {
    md << "## Retrospective\n\n";
    md << "Actual design " << fmt(in.retro->at("actual_value").get<double>(), 6) << " m3, optimised "
       << fmt(in.retro->at("optimized_value").get<double>(), 6) << " m3: uplift "
       << fmt(in.retro->at("uplift_pct").get<double>(), 4) << "%.";
    if (in.retro->at("relaxed_bounds").get<bool>()) md << " Bounds were widened to contain the actual design.";
    md << "\n\n";
  }
  b.markdown = md.str();
  return b;
}
