#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace srfc {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

// Static SVG line chart; enough to eyeball reward curves.
inline void write_line_plot(const std::string& path, const std::string& title,
                            const std::vector<Series>& series) {
  constexpr double W = 640, H = 400, L = 60, R = 160, T = 40, B = 40;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << L << "\" y=\"24\" font-size=\"14\">" << title << "</text>\n"
      << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  char buf[32];
  for (double v : {y0, y1}) {
    std::snprintf(buf, sizeof buf, "%.4g", v);
    out << "<text x=\"4\" y=\"" << py(v) + 4 << "\">" << buf << "</text>\n";
  }
  for (double v : {x0, x1}) {
    std::snprintf(buf, sizeof buf, "%.4g", v);
    out << "<text x=\"" << px(v) - 8 << "\" y=\"" << H - B + 16 << "\">" << buf << "</text>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* c = colors[k % 6];
    out << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
      if (std::isfinite(s.y[i])) out << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    out << "\"/>\n<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (k + 1) << "\" fill=\"" << c
        << "\">" << s.name << "</text>\n";
  }
  out << "</svg>\n";
}

// Horizontal bar chart for a metric table.
inline void write_bar_plot(const std::string& path, const std::string& title,
                           const std::vector<std::pair<std::string, double>>& bars) {
  constexpr double W = 480, row = 28, L = 100, T = 40;
  const double H = T + row * static_cast<double>(bars.size()) + 20;
  double vmax = 0.0;
  for (const auto& b : bars) vmax = std::max(vmax, b.second);
  if (vmax <= 0.0) vmax = 1.0;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"10\" y=\"24\" font-size=\"14\">" << title << "</text>\n";
  char buf[32];
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double y = T + row * static_cast<double>(i);
    const double w = std::max(0.0, bars[i].second) / vmax * (W - L - 80);
    std::snprintf(buf, sizeof buf, "%.4f", bars[i].second);
    out << "<text x=\"10\" y=\"" << y + 16 << "\">" << bars[i].first << "</text>\n"
        << "<rect x=\"" << L << "\" y=\"" << y + 4 << "\" width=\"" << w
        << "\" height=\"18\" fill=\"#1f77b4\"/>\n"
        << "<text x=\"" << L + w + 6 << "\" y=\"" << y + 16 << "\">" << buf << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace srfc
