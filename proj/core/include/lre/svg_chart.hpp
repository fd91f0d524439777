#pragma once

#include <string>
#include <vector>

namespace lre::run {

// Minimal deterministic SVG rendering: same table in, same bytes out.

struct LineSeries {
  std::string label;
  std::vector<double> mean;
  std::vector<double> stddev;  // optional band; empty = no band
};

std::string render_line_chart(const std::string& title, const std::string& x_label,
                              const std::string& y_label,
                              const std::vector<LineSeries>& series);

std::string render_heatmap(const std::string& title, const std::vector<std::string>& row_labels,
                           const std::vector<std::string>& col_labels,
                           const std::vector<std::vector<double>>& values);

}  // namespace lre::run
