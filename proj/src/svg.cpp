#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>

#include "eqgnn/errors.hpp"
#include "eqgnn/evaluation.hpp"

namespace eqgnn {

namespace {

constexpr std::array<const char*, 6> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

// Blue to yellow through teal, t in [0, 1].
std::string ramp(double t) {
  static constexpr std::array<std::array<double, 3>, 4> stops{
      {{68, 1, 84}, {49, 104, 142}, {53, 183, 121}, {253, 231, 37}}};
  t = std::clamp(t, 0.0, 1.0) * 3.0;
  const int k = std::min(2, static_cast<int>(t));
  const double f = t - k;
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x",
                static_cast<int>(stops[k][0] + f * (stops[k + 1][0] - stops[k][0])),
                static_cast<int>(stops[k][1] + f * (stops[k + 1][1] - stops[k][1])),
                static_cast<int>(stops[k][2] + f * (stops[k + 1][2] - stops[k][2])));
  return buf;
}

}  // namespace

std::string svg_line_chart(const std::vector<Series>& series, const std::string& title, bool log_y) {
  constexpr double W = 640, H = 400, L = 70, R = 150, T = 40, B = 50;
  auto tf = [log_y](double y) { return log_y ? (y > 0 ? std::log10(y) : std::nan("")) : y; };
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t len = 1;
  for (const auto& s : series) {
    len = std::max(len, s.y.size());
    for (double y : s.y)
      if (const double v = tf(y); std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  }
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  if (hi - lo < 1e-12) hi = lo + 1;
  const double pw = W - L - R, ph = H - T - B;
  auto px = [&](double i) { return L + pw * i / std::max<double>(1.0, static_cast<double>(len - 1)); };
  auto py = [&](double v) { return T + ph * (1.0 - (v - lo) / (hi - lo)); };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(W) + "\" height=\"" + num(H) +
                  "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + escape(title) + "</text>\n";
  s += "<rect x=\"" + num(L) + "\" y=\"" + num(T) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
       "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    const std::string text = log_y ? "1e" + label(v) : label(v);
    s += "<text x=\"" + num(L - 6) + "\" y=\"" + num(py(v) + 4) + "\" text-anchor=\"end\">" + text + "</text>\n";
  }
  s += "<text x=\"" + num(L) + "\" y=\"" + num(H - B + 18) + "\">0</text>\n";
  s += "<text x=\"" + num(L + pw) + "\" y=\"" + num(H - B + 18) + "\" text-anchor=\"end\">" +
       std::to_string(len - 1) + "</text>\n";
  s += "<text x=\"" + num(L + pw / 2) + "\" y=\"" + num(H - 12) + "\" text-anchor=\"middle\">iteration</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kPalette[k % kPalette.size()];
    std::string pts;
    for (std::size_t i = 0; i < series[k].y.size(); ++i) {
      const double v = tf(series[k].y[i]);
      if (!std::isfinite(v)) continue;
      pts += num(px(static_cast<double>(i))) + "," + num(py(v)) + " ";
    }
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + pts +
         "\"/>\n";
    const double ly = T + 16.0 * static_cast<double>(k + 1);
    s += "<line x1=\"" + num(W - R + 10) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" + num(W - R + 30) + "\" y2=\"" +
         num(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + num(W - R + 36) + "\" y=\"" + num(ly) + "\">" + escape(series[k].label) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

std::string svg_field(const TriMesh& mesh, std::span<const double> values, const std::string& title) {
  if (values.size() != mesh.nodes.size()) throw DimensionMismatch("svg_field: one value per node expected");
  constexpr double S = 560, M = 20, T = 40, Bar = 60;
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0, x1 = -x0, y1 = -x0;
  for (const auto& p : mesh.nodes) {
    x0 = std::min(x0, p.x), x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
  }
  const double scale = S / std::max({x1 - x0, y1 - y0, 1e-12});
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : values)
    if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  const double span = hi - lo > 0 ? hi - lo : 1.0;

  const double width = 2 * M + S + Bar, height = T + S + M;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" + num(height) +
                  "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(M + S / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" + escape(title) +
       "</text>\n";
  for (const auto& tri : mesh.triangles) {
    double mean = 0;
    std::string pts;
    for (std::size_t v : tri) {
      mean += values[v] / 3.0;
      const auto& p = mesh.nodes[v];
      pts += num(M + (p.x - x0) * scale) + "," + num(T + (y1 - p.y) * scale) + " ";
    }
    const std::string color = ramp((mean - lo) / span);
    s += "<polygon points=\"" + pts + "\" fill=\"" + color + "\" stroke=\"" + color + "\" stroke-width=\"0.3\"/>\n";
  }
  const double bx = M + S + 20;
  for (int k = 0; k < 20; ++k) {
    const double t = (19 - k) / 19.0;
    s += "<rect x=\"" + num(bx) + "\" y=\"" + num(T + S * k / 20.0) + "\" width=\"14\" height=\"" + num(S / 20.0 + 0.5) +
         "\" fill=\"" + ramp(t) + "\"/>\n";
  }
  s += "<text x=\"" + num(bx) + "\" y=\"" + num(T - 4) + "\">" + label(hi) + "</text>\n";
  s += "<text x=\"" + num(bx) + "\" y=\"" + num(T + S + 14) + "\">" + label(lo) + "</text>\n";
  s += "</svg>\n";
  return s;
}

}  // namespace eqgnn
