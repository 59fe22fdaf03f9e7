#ifndef MDPCHECK_REPORT_HPP_
#define MDPCHECK_REPORT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdpcheck/analysis.hpp"
#include "mdpcheck/env.hpp"

namespace mdpcheck {

inline std::string format_number(double v, const char* fmt = "%.9g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

/// Row per feature, column per (model, batch) sample.
inline std::string population_to_csv(const StatPopulation& pop) {
  std::string out = "feature";
  for (std::size_t j = 0; j < pop.num_models; ++j)
    for (std::size_t b = 0; b < pop.num_batches; ++b)
      out += ",m" + std::to_string(j) + "_b" + std::to_string(b);
  out += '\n';
  for (int i = 0; i < pop.d(); ++i) {
    out += std::to_string(i);
    for (Eigen::Index c = 0; c < pop.values.cols(); ++c) {
      out += ',';
      out += format_number(pop.values(i, c));
    }
    out += '\n';
  }
  return out;
}

inline nlohmann::json to_json(const StatPopulation& pop) {
  nlohmann::json j;
  j["kind"] = to_string(pop.kind);
  j["num_models"] = pop.num_models;
  j["num_batches"] = pop.num_batches;
  j["values"] = nlohmann::json::array();
  for (int i = 0; i < pop.d(); ++i) j["values"].push_back(pop.feature(i));
  return j;
}

inline nlohmann::json to_json(const SignificanceReport& r) {
  nlohmann::json j;
  j["kind"] = to_string(r.kind);
  j["convention"] = to_string(r.convention);
  j["level"] = r.level;
  j["percentile_value"] = r.percentile_value;
  j["significant"] = r.significant;
  j["significant_features"] = r.significant_features();
  return j;
}

inline nlohmann::json to_json(const Verdict& v) {
  return {{"outcome", to_string(v.outcome)},
          {"reward_features", v.reward_features},
          {"action_features", v.action_features},
          {"actionable_features", v.actionable_features}};
}

inline nlohmann::json to_json(const ExpectedPattern& p) {
  auto encode = [](const std::vector<Expect>& e) {
    std::vector<std::string> out;
    for (Expect x : e) out.push_back(x == Expect::yes ? "yes" : x == Expect::no ? "no" : "any");
    return out;
  };
  return {{"env_id", p.env_id},
          {"reward", encode(p.reward)},
          {"action", encode(p.action)},
          {"reward_nonempty", p.reward_nonempty},
          {"verdict", to_string(p.verdict)}};
}

/// Five-number summary with Tukey fences (1.5 IQR); quartiles by linear
/// interpolation.
struct BoxStats {
  double q1 = 0, median = 0, q3 = 0;
  double whisker_lo = 0, whisker_hi = 0;
  std::vector<double> outliers;
};

inline BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) throw AnalysisError("box_stats: empty sample");
  std::sort(values.begin(), values.end());
  BoxStats s;
  s.q1 = quantile_sorted(values, 0.25);
  s.median = quantile_sorted(values, 0.5);
  s.q3 = quantile_sorted(values, 0.75);
  const double iqr = s.q3 - s.q1;
  const double lo_fence = s.q1 - 1.5 * iqr, hi_fence = s.q3 + 1.5 * iqr;
  s.whisker_lo = s.q1;
  s.whisker_hi = s.q3;
  for (double v : values) {
    if (v < lo_fence || v > hi_fence) {
      s.outliers.push_back(v);
    } else {
      s.whisker_lo = std::min(s.whisker_lo, v);
      s.whisker_hi = std::max(s.whisker_hi, v);
    }
  }
  return s;
}

/// One panel of the plot: a population and the report whose percentile is marked.
struct PlotPanel {
  std::string title;
  const StatPopulation* population = nullptr;
  const SignificanceReport* report = nullptr;  // optional
  const std::vector<Expect>* expected = nullptr;  // optional overlay
};

namespace detail {

inline std::string svg_num(double v) { return format_number(v, "%.2f"); }

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

/// Box plot per feature for each panel, stacked vertically. Each panel has a
/// dashed zero line and, when a report is given, a red tick at the feature's
/// percentile value. Output depends only on the inputs.
inline std::string render_boxplots(const std::vector<PlotPanel>& panels) {
  if (panels.empty()) throw AnalysisError("render_boxplots: no panels");
  constexpr double kLeft = 70, kRight = 20, kSlot = 56, kPanelH = 240, kTop = 40, kBottom = 40;
  int max_d = 0;
  for (const auto& p : panels) {
    if (!p.population || p.population->samples() == 0) {
      throw AnalysisError("render_boxplots: empty population");
    }
    max_d = std::max(max_d, p.population->d());
  }
  const double width = kLeft + kRight + kSlot * max_d;
  const double panel_total = kTop + kPanelH + kBottom;
  const double height = panel_total * static_cast<double>(panels.size());
  using detail::svg_num;

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + svg_num(width) +
         "\" height=\"" + svg_num(height) + "\" viewBox=\"0 0 " + svg_num(width) + " " +
         svg_num(height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  for (std::size_t pi = 0; pi < panels.size(); ++pi) {
    const auto& panel = panels[pi];
    const auto& pop = *panel.population;
    const double y0 = panel_total * static_cast<double>(pi) + kTop;

    std::vector<BoxStats> stats;
    double lo = 0.0, hi = 0.0;
    for (int i = 0; i < pop.d(); ++i) {
      stats.push_back(box_stats(pop.feature(i)));
      const auto& s = stats.back();
      lo = std::min({lo, s.whisker_lo});
      hi = std::max({hi, s.whisker_hi});
      for (double o : s.outliers) {
        lo = std::min(lo, o);
        hi = std::max(hi, o);
      }
      if (panel.report) {
        lo = std::min(lo, panel.report->percentile_value[static_cast<std::size_t>(i)]);
        hi = std::max(hi, panel.report->percentile_value[static_cast<std::size_t>(i)]);
      }
    }
    if (hi - lo < 1e-12) {
      lo -= 1.0;
      hi += 1.0;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    auto ypos = [&](double v) { return y0 + kPanelH * (hi - v) / (hi - lo); };

    svg += "<g class=\"panel\" data-kind=\"" + std::string(to_string(pop.kind)) + "\">\n";
    svg += "<text x=\"" + svg_num(kLeft) + "\" y=\"" + svg_num(y0 - 14) +
           "\" font-size=\"13\" font-weight=\"bold\">" + detail::svg_escape(panel.title) +
           "</text>\n";
    svg += "<rect x=\"" + svg_num(kLeft) + "\" y=\"" + svg_num(y0) + "\" width=\"" +
           svg_num(kSlot * pop.d()) + "\" height=\"" + svg_num(kPanelH) +
           "\" fill=\"none\" stroke=\"#888\"/>\n";
    for (double tick : {lo + pad, 0.0, hi - pad}) {
      svg += "<text x=\"" + svg_num(kLeft - 6) + "\" y=\"" + svg_num(ypos(tick) + 4) +
             "\" text-anchor=\"end\">" + format_number(tick, "%.3g") + "</text>\n";
    }
    svg += "<line class=\"zero\" x1=\"" + svg_num(kLeft) + "\" y1=\"" + svg_num(ypos(0)) +
           "\" x2=\"" + svg_num(kLeft + kSlot * pop.d()) + "\" y2=\"" + svg_num(ypos(0)) +
           "\" stroke=\"#444\" stroke-dasharray=\"4 3\"/>\n";

    for (int i = 0; i < pop.d(); ++i) {
      const auto& s = stats[static_cast<std::size_t>(i)];
      const double cx = kLeft + kSlot * (i + 0.5);
      const double half = kSlot * 0.3;
      const bool sig = panel.report && panel.report->significant[static_cast<std::size_t>(i)];
      const std::string fill = sig ? "#9ecae1" : "#e0e0e0";
      svg += "<line x1=\"" + svg_num(cx) + "\" y1=\"" + svg_num(ypos(s.whisker_hi)) +
             "\" x2=\"" + svg_num(cx) + "\" y2=\"" + svg_num(ypos(s.q3)) +
             "\" stroke=\"black\"/>\n";
      svg += "<line x1=\"" + svg_num(cx) + "\" y1=\"" + svg_num(ypos(s.q1)) + "\" x2=\"" +
             svg_num(cx) + "\" y2=\"" + svg_num(ypos(s.whisker_lo)) + "\" stroke=\"black\"/>\n";
      for (double wv : {s.whisker_lo, s.whisker_hi}) {
        svg += "<line x1=\"" + svg_num(cx - half / 2) + "\" y1=\"" + svg_num(ypos(wv)) +
               "\" x2=\"" + svg_num(cx + half / 2) + "\" y2=\"" + svg_num(ypos(wv)) +
               "\" stroke=\"black\"/>\n";
      }
      svg += "<rect class=\"box\" x=\"" + svg_num(cx - half) + "\" y=\"" + svg_num(ypos(s.q3)) +
             "\" width=\"" + svg_num(2 * half) + "\" height=\"" +
             svg_num(std::max(0.0, ypos(s.q1) - ypos(s.q3))) + "\" fill=\"" + fill +
             "\" stroke=\"black\"/>\n";
      svg += "<line class=\"median\" x1=\"" + svg_num(cx - half) + "\" y1=\"" +
             svg_num(ypos(s.median)) + "\" x2=\"" + svg_num(cx + half) + "\" y2=\"" +
             svg_num(ypos(s.median)) + "\" stroke=\"black\" stroke-width=\"2\"/>\n";
      for (double o : s.outliers) {
        svg += "<circle class=\"outlier\" cx=\"" + svg_num(cx) + "\" cy=\"" + svg_num(ypos(o)) +
               "\" r=\"1.5\" fill=\"none\" stroke=\"#555\"/>\n";
      }
      if (panel.report) {
        const double pv = panel.report->percentile_value[static_cast<std::size_t>(i)];
        svg += "<line class=\"percentile\" x1=\"" + svg_num(cx - half - 4) + "\" y1=\"" +
               svg_num(ypos(pv)) + "\" x2=\"" + svg_num(cx + half + 4) + "\" y2=\"" +
               svg_num(ypos(pv)) + "\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
      }
      svg += "<text x=\"" + svg_num(cx) + "\" y=\"" + svg_num(y0 + kPanelH + 14) +
             "\" text-anchor=\"middle\">f" + std::to_string(i) + "</text>\n";
      if (panel.expected && static_cast<std::size_t>(i) < panel.expected->size()) {
        const Expect e = (*panel.expected)[static_cast<std::size_t>(i)];
        const char* label = e == Expect::yes ? "exp:sig" : e == Expect::no ? "exp:-" : "exp:?";
        svg += "<text class=\"expected\" x=\"" + svg_num(cx) + "\" y=\"" +
               svg_num(y0 + kPanelH + 28) + "\" text-anchor=\"middle\" font-size=\"9\">" +
               label + "</text>\n";
      }
    }
    if (panel.report) {
      const std::string level_text =
          format_number(panel.report->level.empty() ? 0.0 : panel.report->level[0], "%g");
      svg += "<text x=\"" + svg_num(kLeft + kSlot * pop.d()) + "\" y=\"" + svg_num(y0 - 14) +
             "\" text-anchor=\"end\" fill=\"#d62728\">" +
             (panel.report->convention == PercentileConvention::exceeded_by
                  ? "red: level exceeded by " + level_text + "% of samples"
                  : "red: " + level_text + "th percentile") +
             "</text>\n";
    }
    svg += "</g>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace mdpcheck

#endif  // MDPCHECK_REPORT_HPP_
