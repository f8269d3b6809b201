#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mame {

struct RenderSpec {
  int grid_side = 8;
  int cell_px = 16;
  std::uint64_t palette_seed = 0;

  void validate() const {
    if (cell_px < 1) throw std::invalid_argument("cell size must be >= 1 px");
    if (grid_side < 1) throw std::invalid_argument("grid side must be >= 1");
  }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline void hsv_to_rgb(double h, double s, double v, int& r, int& g, int& b) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double rr = 0, gg = 0, bb = 0;
  if (hp < 1)      { rr = c; gg = x; }
  else if (hp < 2) { rr = x; gg = c; }
  else if (hp < 3) { gg = c; bb = x; }
  else if (hp < 4) { gg = x; bb = c; }
  else if (hp < 5) { rr = x; bb = c; }
  else             { rr = c; bb = x; }
  const double m = v - c;
  r = int((rr + m) * 255.0 + 0.5);
  g = int((gg + m) * 255.0 + 0.5);
  b = int((bb + m) * 255.0 + 0.5);
}

inline std::string group_color(std::uint64_t seed, std::size_t group) {
  const std::uint64_t h = splitmix64(seed * 0x100000001b3ULL + group + 1);
  const double hue = double(h % 3600) / 3600.0;
  int r, g, b;
  hsv_to_rgb(hue, 0.85, 0.9, r, g, b);
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

// Small viridis-like ramp, dark blue to bright yellow.
inline void heat_color(double v, std::uint8_t rgb[3]) {
  static const double stops[8][3] = {
      {0.267, 0.005, 0.329}, {0.283, 0.141, 0.458}, {0.254, 0.265, 0.530},
      {0.207, 0.372, 0.553}, {0.164, 0.471, 0.558}, {0.128, 0.567, 0.551},
      {0.267, 0.749, 0.441}, {0.993, 0.906, 0.144}};
  v = std::clamp(v, 0.0, 1.0);
  const double pos = v * 7.0;
  const int i = std::min(6, int(pos));
  const double f = pos - i;
  for (int c = 0; c < 3; ++c) {
    const double x = stops[i][c] + f * (stops[i + 1][c] - stops[i][c]);
    rgb[c] = std::uint8_t(x * 255.0 + 0.5);
  }
}

}  // namespace detail

// Merge map: one rect per original grid cell; cells of the same partition
// group share a stroke color, singleton groups are unstroked. `partition`
// lists groups of original sequence indices; cls (if given) is skipped.
inline std::string render_merge_map(const std::vector<std::vector<int>>& partition,
                                    const RenderSpec& spec,
                                    std::optional<int> cls_index = {}) {
  spec.validate();
  const int p = spec.grid_side;
  const int px = spec.cell_px;
  std::vector<int> group_of(p * p, -1);
  std::vector<bool> stroked;
  int gid = 0;
  for (const auto& cell : partition) {
    bool has_grid_token = false;
    for (int idx : cell) {
      if (cls_index && idx == *cls_index) continue;
      int g = idx;
      if (cls_index && idx > *cls_index) g = idx - 1;
      if (g < 0 || g >= p * p) throw std::invalid_argument("partition index out of grid");
      group_of[g] = gid;
      has_grid_token = true;
    }
    if (!has_grid_token) continue;
    int n_grid = 0;
    for (int idx : cell)
      if (!cls_index || idx != *cls_index) ++n_grid;
    stroked.push_back(n_grid > 1);
    ++gid;
  }
  for (int g : group_of)
    if (g < 0) throw std::invalid_argument("partition does not cover the grid");

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << p * px
     << "\" height=\"" << p * px << "\" viewBox=\"0 0 " << p * px << " " << p * px
     << "\">\n";
  for (int row = 0; row < p; ++row) {
    for (int col = 0; col < p; ++col) {
      const int cell = row * p + col;
      const int g = group_of[cell];
      os << "  <rect x=\"" << col * px << "\" y=\"" << row * px << "\" width=\""
         << px << "\" height=\"" << px << "\" fill=\"#e8e8e8\"";
      if (stroked[g])
        os << " stroke=\"" << detail::group_color(spec.palette_seed, std::size_t(g))
           << "\" stroke-width=\"2\"";
      os << "/>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

// Binary PPM (P6, maxval 255) heatmap; min-max normalized, brighter = higher.
inline std::string render_heatmap(const std::vector<double>& values,
                                  const RenderSpec& spec) {
  spec.validate();
  const int p = spec.grid_side;
  if (int(values.size()) != p * p)
    throw std::invalid_argument("heatmap expects grid_side^2 values");
  double lo = values[0], hi = values[0];
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo;

  const int px = spec.cell_px;
  const int w = p * px, h = p * px;
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + std::size_t(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int cell = (y / px) * p + (x / px);
      const double v = span > 0 ? (values[cell] - lo) / span : 0.0;
      std::uint8_t rgb[3];
      detail::heat_color(v, rgb);
      out.push_back(char(rgb[0]));
      out.push_back(char(rgb[1]));
      out.push_back(char(rgb[2]));
    }
  }
  return out;
}

}  // namespace mame
