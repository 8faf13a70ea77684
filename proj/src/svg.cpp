#include "sdeid/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>

namespace sdeid {

namespace {

constexpr double kPanelWidth = 360.0;
constexpr double kPanelHeight = 300.0;
constexpr double kMargin = 30.0;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string projection_svg(const std::vector<Panel>& panels, std::size_t max_points) {
  const double width = kPanelWidth * static_cast<double>(std::max<std::size_t>(panels.size(), 1));
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width) + "\" height=\"" +
                    fmt(kPanelHeight) + "\" viewBox=\"0 0 " + fmt(width) + " " + fmt(kPanelHeight) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const Trajectory* traj = panels[p].trajectory;
    const double x0 = kPanelWidth * static_cast<double>(p);
    svg += "<g>\n<text x=\"" + fmt(x0 + kPanelWidth / 2) + "\" y=\"18\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"13\">" + escape(panels[p].title) + "</text>\n";
    svg += "<rect x=\"" + fmt(x0 + kMargin) + "\" y=\"" + fmt(kMargin) + "\" width=\"" +
           fmt(kPanelWidth - 2 * kMargin) + "\" height=\"" + fmt(kPanelHeight - 2 * kMargin) +
           "\" fill=\"none\" stroke=\"#999\"/>\n";
    if (traj == nullptr || traj->size() == 0) {
      svg += "</g>\n";
      continue;
    }
    const std::size_t n = traj->size();
    const std::size_t stride = std::max<std::size_t>(1, (n + max_points - 1) / std::max<std::size_t>(max_points, 1));
    auto hcoord = [&](std::size_t k) { return traj->dim >= 3 ? traj->state(k)[0] : traj->time(k); };
    auto vcoord = [&](std::size_t k) { return traj->dim >= 3 ? traj->state(k)[2] : traj->state(k)[0]; };
    double hmin = std::numeric_limits<double>::infinity(), hmax = -hmin, vmin = hmin, vmax = -hmin;
    for (std::size_t k = 0; k < n; k += stride) {
      hmin = std::min(hmin, hcoord(k));
      hmax = std::max(hmax, hcoord(k));
      vmin = std::min(vmin, vcoord(k));
      vmax = std::max(vmax, vcoord(k));
    }
    if (!(hmax > hmin)) hmax = hmin + 1.0;
    if (!(vmax > vmin)) vmax = vmin + 1.0;
    const double w = kPanelWidth - 2 * kMargin, h = kPanelHeight - 2 * kMargin;
    svg += "<polyline fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"0.6\" points=\"";
    for (std::size_t k = 0; k < n; k += stride) {
      const double px = x0 + kMargin + (hcoord(k) - hmin) / (hmax - hmin) * w;
      const double py = kMargin + h - (vcoord(k) - vmin) / (vmax - vmin) * h;
      svg += fmt(px) + "," + fmt(py) + " ";
    }
    svg += "\"/>\n";
    const std::string hlabel = traj->dim >= 3 ? "x" : "t";
    const std::string vlabel = traj->dim >= 3 ? "z" : "x";
    svg += "<text x=\"" + fmt(x0 + kPanelWidth / 2) + "\" y=\"" + fmt(kPanelHeight - 8) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + hlabel + "</text>\n";
    svg += "<text x=\"" + fmt(x0 + 12) + "\" y=\"" + fmt(kPanelHeight / 2) +
           "\" font-family=\"sans-serif\" font-size=\"11\">" + vlabel + "</text>\n</g>\n";
  }
  svg += "</svg>\n";
  return svg;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path);
}

}  // namespace sdeid
