#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "vga/grounding.hpp"
#include "vga/model.hpp"

namespace vga {

// Min-max scaled 8-bit pixels; a constant map becomes all 128.
inline std::vector<std::uint8_t> heatmap_pixels(std::span<const float> values) {
  std::vector<std::uint8_t> px(values.size(), 128);
  if (values.empty()) return px;
  require_finite(values, "heatmap");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double span = static_cast<double>(*hi) - *lo;
  if (span <= 0.0) return px;
  for (std::size_t i = 0; i < values.size(); ++i)
    px[i] = static_cast<std::uint8_t>(std::lround(255.0 * (values[i] - *lo) / span));
  return px;
}

// Binary PGM (P5), one pixel per patch.
inline void export_heatmap(std::span<const float> values, GridShape grid, const std::string& path) {
  if (values.size() != grid.patches())
    throw ShapeError("heatmap: " + std::to_string(values.size()) + " values for a " +
                     std::to_string(grid.rows) + "x" + std::to_string(grid.cols) + " grid");
  const auto px = heatmap_pixels(values);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "P5\n" << grid.cols << ' ' << grid.rows << "\n255\n";
  f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!f) throw IoError("write to '" + path + "' failed");
}

inline void export_heatmap(const Grounding& g, GridShape grid, const std::string& path) {
  export_heatmap(g.weights, grid, path);
}

}  // namespace vga
