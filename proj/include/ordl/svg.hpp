#pragma once

// Minimal deterministic SVG line charts.

#include <string>
#include <vector>

namespace ordl::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> error;  // symmetric bar half-heights; empty for none, NaN to skip a point
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  int width = 720;
  int height = 440;
};

/// Same chart in, same bytes out. Non-finite points are skipped.
std::string render(const Chart& chart);

}  // namespace ordl::svg
