#include "lre/svg_chart.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace lre::run {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

}  // namespace

std::string render_line_chart(const std::string& title, const std::string& x_label,
                              const std::string& y_label,
                              const std::vector<LineSeries>& series) {
  if (series.empty()) throw std::invalid_argument("line chart: no series");
  const double w = 640, h = 420, ml = 60, mr = 140, mt = 40, mb = 50;
  const double pw = w - ml - mr, ph = h - mt - mb;

  std::size_t n = 0;
  double lo = 1e300, hi = -1e300;
  for (const auto& s : series) {
    n = std::max(n, s.mean.size());
    for (std::size_t i = 0; i < s.mean.size(); ++i) {
      const double band = i < s.stddev.size() ? s.stddev[i] : 0.0;
      lo = std::min(lo, s.mean[i] - band);
      hi = std::max(hi, s.mean[i] + band);
    }
  }
  if (n < 1) throw std::invalid_argument("line chart: empty series");
  if (hi <= lo) {
    hi = lo + 1;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;

  auto px = [&](double i) { return ml + (n > 1 ? pw * i / static_cast<double>(n - 1) : pw / 2); };
  auto py = [&](double v) { return mt + ph * (1.0 - (v - lo) / (hi - lo)); };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" +
         num(h) + "\" viewBox=\"0 0 " + num(w) + " " + num(h) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + num(w / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" +
         title + "</text>\n";
  // axes
  svg += "<line x1=\"" + num(ml) + "\" y1=\"" + num(mt) + "\" x2=\"" + num(ml) + "\" y2=\"" +
         num(mt + ph) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + num(ml) + "\" y1=\"" + num(mt + ph) + "\" x2=\"" + num(ml + pw) +
         "\" y2=\"" + num(mt + ph) + "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    svg += "<text x=\"" + num(ml - 6) + "\" y=\"" + num(py(v) + 4) +
           "\" text-anchor=\"end\" font-size=\"10\">" + num(v) + "</text>\n";
    svg += "<line x1=\"" + num(ml - 3) + "\" y1=\"" + num(py(v)) + "\" x2=\"" + num(ml) +
           "\" y2=\"" + num(py(v)) + "\" stroke=\"black\"/>\n";
  }
  for (std::size_t i = 0; i < n; ++i) {
    svg += "<text x=\"" + num(px(static_cast<double>(i))) + "\" y=\"" + num(mt + ph + 16) +
           "\" text-anchor=\"middle\" font-size=\"10\">" + std::to_string(i + 1) + "</text>\n";
  }
  svg += "<text x=\"" + num(ml + pw / 2) + "\" y=\"" + num(h - 12) +
         "\" text-anchor=\"middle\" font-size=\"12\">" + x_label + "</text>\n";
  svg += "<text x=\"16\" y=\"" + num(mt + ph / 2) + "\" font-size=\"12\" transform=\"rotate(-90 16 " +
         num(mt + ph / 2) + ")\" text-anchor=\"middle\">" + y_label + "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kPalette[si % 8];
    if (!s.stddev.empty()) {
      std::string band = "<path d=\"M";
      for (std::size_t i = 0; i < s.mean.size(); ++i) {
        band += num(px(static_cast<double>(i))) + " " + num(py(s.mean[i] + s.stddev[i])) + " L";
      }
      for (std::size_t i = s.mean.size(); i-- > 0;) {
        band += num(px(static_cast<double>(i))) + " " + num(py(s.mean[i] - s.stddev[i]));
        if (i > 0) band += " L";
      }
      band += " Z\" fill=\"" + std::string(color) + "\" opacity=\"0.15\" stroke=\"none\"/>\n";
      svg += band;
    }
    std::string line = "<polyline fill=\"none\" stroke=\"" + std::string(color) +
                       "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.mean.size(); ++i) {
      line += num(px(static_cast<double>(i))) + "," + num(py(s.mean[i])) + " ";
    }
    line += "\"/>\n";
    svg += line;
    const double ly = mt + 16 + 18 * static_cast<double>(si);
    svg += "<rect x=\"" + num(ml + pw + 12) + "\" y=\"" + num(ly - 9) +
           "\" width=\"12\" height=\"12\" fill=\"" + color + "\"/>\n";
    svg += "<text x=\"" + num(ml + pw + 30) + "\" y=\"" + num(ly + 1) +
           "\" font-size=\"11\">" + s.label + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

std::string render_heatmap(const std::string& title, const std::vector<std::string>& row_labels,
                           const std::vector<std::string>& col_labels,
                           const std::vector<std::vector<double>>& values) {
  if (values.empty()) throw std::invalid_argument("heatmap: empty matrix");
  const std::size_t rows = values.size(), cols = values[0].size();
  const double cell = 64, ml = 90, mt = 70, w = ml + cell * static_cast<double>(cols) + 30,
               h = mt + cell * static_cast<double>(rows) + 30;
  double hi = 0;
  for (const auto& r : values) {
    for (double v : r) hi = std::max(hi, v);
  }
  if (hi <= 0) hi = 1;

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" +
         num(h) + "\" viewBox=\"0 0 " + num(w) + " " + num(h) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + num(w / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" +
         title + "</text>\n";
  for (std::size_t c = 0; c < cols; ++c) {
    svg += "<text x=\"" + num(ml + cell * (static_cast<double>(c) + 0.5)) + "\" y=\"" +
           num(mt - 10) + "\" text-anchor=\"middle\" font-size=\"12\">" + col_labels[c] +
           "</text>\n";
  }
  for (std::size_t r = 0; r < rows; ++r) {
    svg += "<text x=\"" + num(ml - 10) + "\" y=\"" +
           num(mt + cell * (static_cast<double>(r) + 0.55)) +
           "\" text-anchor=\"end\" font-size=\"12\">" + row_labels[r] + "</text>\n";
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = values[r][c];
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - 0.85 * v / hi)));
      char color[8];
      std::snprintf(color, sizeof(color), "#%02x%02xff", shade, shade);
      svg += "<rect x=\"" + num(ml + cell * static_cast<double>(c)) + "\" y=\"" +
             num(mt + cell * static_cast<double>(r)) + "\" width=\"" + num(cell) +
             "\" height=\"" + num(cell) + "\" fill=\"" + color +
             "\" stroke=\"#cccccc\"/>\n";
      svg += "<text x=\"" + num(ml + cell * (static_cast<double>(c) + 0.5)) + "\" y=\"" +
             num(mt + cell * (static_cast<double>(r) + 0.55)) +
             "\" text-anchor=\"middle\" font-size=\"12\">" + num(v) + "</text>\n";
    }
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace lre::run
