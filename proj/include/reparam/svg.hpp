#pragma once

// Hand-rolled SVG emitters for the two report figures: the partial-centring
// heatmap (one greyscale cell per lambda element) and the conditioning
// crossover curve (log-x line plot).  SVG is presentation only; the JSON and
// CSV outputs stay the record of truth.
//
// Invariant relied on by tests: a heatmap contains exactly one <rect> per
// lambda element and no other rect elements.  Everything else (labels, axes)
// uses <text> and <line>.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "reparam/errors.hpp"

namespace reparam {

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
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

inline std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace detail

struct HeatmapRow {
  std::string label;
  std::vector<double> lambda;  // each element in [0, 1]
};

// Grid of partial-centring coefficients: white = fully centred (lambda 1),
// black = fully non-centred (lambda 0).  One run per row.
inline std::string heatmap_svg(const std::vector<HeatmapRow>& rows) {
  if (rows.empty()) throw SchemaError("heatmap needs at least one row");
  size_t max_cells = 0, max_label = 0;
  for (const HeatmapRow& r : rows) {
    if (r.lambda.empty()) throw SchemaError("heatmap row '" + r.label + "' has no lambda values");
    for (double v : r.lambda)
      if (!(v >= 0.0 && v <= 1.0))
        throw SchemaError("heatmap row '" + r.label + "' has a lambda outside [0, 1]");
    max_cells = std::max(max_cells, r.lambda.size());
    max_label = std::max(max_label, r.label.size());
  }
  const double cell = 22.0, gap = 2.0, pad = 10.0;
  const double gutter = pad + 7.2 * static_cast<double>(max_label) + 12.0;
  const double width = gutter + static_cast<double>(max_cells) * (cell + gap) + pad;
  const double height = pad + static_cast<double>(rows.size()) * (cell + gap) + pad;

  std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::svg_num(width) +
         "\" height=\"" + detail::svg_num(height) + "\" viewBox=\"0 0 " + detail::svg_num(width) +
         " " + detail::svg_num(height) + "\">\n";
  for (size_t r = 0; r < rows.size(); ++r) {
    const double y = pad + static_cast<double>(r) * (cell + gap);
    svg += "  <text x=\"" + detail::svg_num(pad) + "\" y=\"" + detail::svg_num(y + cell * 0.72) +
           "\" font-family=\"monospace\" font-size=\"12\">" + detail::xml_escape(rows[r].label) +
           "</text>\n";
    for (size_t c = 0; c < rows[r].lambda.size(); ++c) {
      const int v = static_cast<int>(std::lround(255.0 * rows[r].lambda[c]));
      const std::string grey = std::to_string(v);
      const double x = gutter + static_cast<double>(c) * (cell + gap);
      svg += "  <rect x=\"" + detail::svg_num(x) + "\" y=\"" + detail::svg_num(y) + "\" width=\"" +
             detail::svg_num(cell) + "\" height=\"" + detail::svg_num(cell) + "\" fill=\"rgb(" +
             grey + "," + grey + "," + grey + ")\" stroke=\"rgb(120,120,120)\" stroke-width=\"0.5\"/>\n";
    }
  }
  svg += "</svg>\n";
  return svg;
}

struct CurvePoint {
  double q = 0.0;  // evidence precision, plotted on a log axis
  double kappa_cp = 0.0;
  double kappa_ncp = 0.0;
};

// Conditioning of the two parameterisations against evidence precision.
// x is log10(q); both curves share the linear kappa axis.
inline std::string crossover_svg(const std::vector<CurvePoint>& points) {
  if (points.size() < 2) throw SchemaError("crossover plot needs at least two points");
  const double width = 640.0, height = 420.0;
  const double ml = 64.0, mr = 20.0, mt = 24.0, mb = 48.0;

  double x_lo = std::log10(points.front().q), x_hi = std::log10(points.back().q);
  if (!(x_hi > x_lo)) throw SchemaError("crossover plot needs increasing q");
  double y_lo = 1e300, y_hi = -1e300;
  for (const CurvePoint& p : points) {
    y_lo = std::min({y_lo, p.kappa_cp, p.kappa_ncp});
    y_hi = std::max({y_hi, p.kappa_cp, p.kappa_ncp});
  }
  const double y_pad = 0.05 * (y_hi - y_lo + 1e-12);
  y_lo -= y_pad;
  y_hi += y_pad;

  auto X = [&](double q) {
    return ml + (std::log10(q) - x_lo) / (x_hi - x_lo) * (width - ml - mr);
  };
  auto Y = [&](double k) { return height - mb - (k - y_lo) / (y_hi - y_lo) * (height - mt - mb); };

  auto polyline = [&](auto get, const std::string& style) {
    std::string s = "  <polyline fill=\"none\" " + style + " points=\"";
    for (size_t i = 0; i < points.size(); ++i) {
      if (i) s += ' ';
      s += detail::svg_num(X(points[i].q)) + "," + detail::svg_num(Y(get(points[i])));
    }
    s += "\"/>\n";
    return s;
  };

  std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::svg_num(width) +
         "\" height=\"" + detail::svg_num(height) + "\" viewBox=\"0 0 " + detail::svg_num(width) +
         " " + detail::svg_num(height) + "\">\n";
  // axes
  svg += "  <line x1=\"" + detail::svg_num(ml) + "\" y1=\"" + detail::svg_num(height - mb) +
         "\" x2=\"" + detail::svg_num(width - mr) + "\" y2=\"" + detail::svg_num(height - mb) +
         "\" stroke=\"black\"/>\n";
  svg += "  <line x1=\"" + detail::svg_num(ml) + "\" y1=\"" + detail::svg_num(mt) + "\" x2=\"" +
         detail::svg_num(ml) + "\" y2=\"" + detail::svg_num(height - mb) +
         "\" stroke=\"black\"/>\n";
  // decade ticks on x
  for (int d = static_cast<int>(std::ceil(x_lo)); d <= static_cast<int>(std::floor(x_hi)); ++d) {
    const double x = X(std::pow(10.0, d));
    svg += "  <line x1=\"" + detail::svg_num(x) + "\" y1=\"" + detail::svg_num(height - mb) +
           "\" x2=\"" + detail::svg_num(x) + "\" y2=\"" + detail::svg_num(height - mb + 5) +
           "\" stroke=\"black\"/>\n";
    char lab[32];
    std::snprintf(lab, sizeof(lab), "1e%d", d);
    svg += "  <text x=\"" + detail::svg_num(x) + "\" y=\"" + detail::svg_num(height - mb + 20) +
           "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" + lab +
           "</text>\n";
  }
  // five round ticks on y
  for (int i = 0; i <= 4; ++i) {
    const double k = y_lo + (y_hi - y_lo) * i / 4.0;
    const double y = Y(k);
    svg += "  <line x1=\"" + detail::svg_num(ml - 5) + "\" y1=\"" + detail::svg_num(y) +
           "\" x2=\"" + detail::svg_num(ml) + "\" y2=\"" + detail::svg_num(y) +
           "\" stroke=\"black\"/>\n";
    char lab[32];
    std::snprintf(lab, sizeof(lab), "%.3g", k);
    svg += "  <text x=\"" + detail::svg_num(ml - 8) + "\" y=\"" + detail::svg_num(y + 4) +
           "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" + lab +
           "</text>\n";
  }
  svg += polyline([](const CurvePoint& p) { return p.kappa_cp; }, "stroke=\"black\" stroke-width=\"1.5\"");
  svg += polyline([](const CurvePoint& p) { return p.kappa_ncp; },
                  "stroke=\"rgb(110,110,110)\" stroke-width=\"1.5\" stroke-dasharray=\"6,4\"");
  // legend
  const double lx = width - mr - 150.0, ly = mt + 10.0;
  svg += "  <line x1=\"" + detail::svg_num(lx) + "\" y1=\"" + detail::svg_num(ly) + "\" x2=\"" +
         detail::svg_num(lx + 28) + "\" y2=\"" + detail::svg_num(ly) +
         "\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
  svg += "  <text x=\"" + detail::svg_num(lx + 34) + "\" y=\"" + detail::svg_num(ly + 4) +
         "\" font-family=\"sans-serif\" font-size=\"12\">centred</text>\n";
  svg += "  <line x1=\"" + detail::svg_num(lx) + "\" y1=\"" + detail::svg_num(ly + 18) +
         "\" x2=\"" + detail::svg_num(lx + 28) + "\" y2=\"" + detail::svg_num(ly + 18) +
         "\" stroke=\"rgb(110,110,110)\" stroke-width=\"1.5\" stroke-dasharray=\"6,4\"/>\n";
  svg += "  <text x=\"" + detail::svg_num(lx + 34) + "\" y=\"" + detail::svg_num(ly + 22) +
         "\" font-family=\"sans-serif\" font-size=\"12\">non-centred</text>\n";
  // axis titles
  svg += "  <text x=\"" + detail::svg_num((ml + width - mr) / 2) + "\" y=\"" +
         detail::svg_num(height - 10) +
         "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">evidence precision q</text>\n";
  svg += "  <text x=\"16\" y=\"" + detail::svg_num((mt + height - mb) / 2) +
         "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         detail::svg_num((mt + height - mb) / 2) + ")\">condition number</text>\n";
  svg += "</svg>\n";
  return svg;
}

}  // namespace reparam
