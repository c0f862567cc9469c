#include "ordl/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace ordl::svg {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#2ca02c", "#d62728", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace

std::string render(const Chart& chart) {
  const double left = 70, right = 170, top = 40, bottom = 55;
  const double pw = chart.width - left - right;
  const double ph = chart.height - top - bottom;

  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : chart.series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      const double e = (i < s.error.size() && std::isfinite(s.error[i])) ? s.error[i] : 0.0;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i] - e);
      ymax = std::max(ymax, s.y[i] + e);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(chart.width) + "\" height=\"" +
         std::to_string(chart.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + fmt(left + pw / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
         xml_escape(chart.title) + "</text>\n";
  out += "<rect x=\"" + fmt(left) + "\" y=\"" + fmt(top) + "\" width=\"" + fmt(pw) + "\" height=\"" + fmt(ph) +
         "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = xmin + (xmax - xmin) * k / 4.0;
    const double yv = ymin + (ymax - ymin) * k / 4.0;
    out += "<text x=\"" + fmt(px(xv)) + "\" y=\"" + fmt(top + ph + 16) + "\" text-anchor=\"middle\">" +
           tick_label(xv) + "</text>\n";
    out += "<text x=\"" + fmt(left - 6) + "\" y=\"" + fmt(py(yv) + 4) + "\" text-anchor=\"end\">" +
           tick_label(yv) + "</text>\n";
  }
  out += "<text x=\"" + fmt(left + pw / 2) + "\" y=\"" + fmt(chart.height - 12.0) + "\" text-anchor=\"middle\">" +
         xml_escape(chart.x_label) + "</text>\n";
  out += "<text transform=\"translate(16," + fmt(top + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
         xml_escape(chart.y_label) + "</text>\n";

  for (std::size_t si = 0; si < chart.series.size(); ++si) {
    const auto& s = chart.series[si];
    const std::string color = kPalette[si % std::size(kPalette)];
    std::string points;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (!points.empty()) points.push_back(' ');
      points += fmt(px(s.x[i])) + "," + fmt(py(s.y[i]));
    }
    out += "<g class=\"series\" data-label=\"" + xml_escape(s.label) + "\">\n";
    for (std::size_t i = 0; i < s.error.size() && i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.error[i]) || !std::isfinite(s.y[i])) continue;
      const double x = px(s.x[i]);
      const double y0 = py(s.y[i] - s.error[i]);
      const double y1 = py(s.y[i] + s.error[i]);
      out += "<line class=\"errorbar\" x1=\"" + fmt(x) + "\" y1=\"" + fmt(y0) + "\" x2=\"" + fmt(x) + "\" y2=\"" +
             fmt(y1) + "\" stroke=\"grey\"/>\n";
    }
    out += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
    out += "</g>\n";
    const double ly = top + 14 + 18.0 * static_cast<double>(si);
    out += "<line x1=\"" + fmt(left + pw + 10) + "\" y1=\"" + fmt(ly) + "\" x2=\"" + fmt(left + pw + 30) +
           "\" y2=\"" + fmt(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + fmt(left + pw + 35) + "\" y=\"" + fmt(ly + 4) + "\">" + xml_escape(s.label) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace ordl::svg
