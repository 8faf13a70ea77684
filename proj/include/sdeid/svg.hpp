#pragma once

// Minimal SVG line plots of trajectory projections.

#include <string>
#include <utility>
#include <vector>

#include "sdeid/integrate.hpp"

namespace sdeid {

struct Panel {
  std::string title;
  const Trajectory* trajectory = nullptr;
};

/// Side-by-side panels, each a polyline of the (x, z) projection (components
/// 0 and 2, or 0 against time for one-dimensional paths). Paths longer than
/// max_points are thinned by a fixed stride.
std::string projection_svg(const std::vector<Panel>& panels, std::size_t max_points = 5000);

void write_text_file(const std::string& path, const std::string& text);

}  // namespace sdeid
