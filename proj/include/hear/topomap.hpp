// Scalp-map export: orthographic (x, y) projection of electrode
// positions onto the unit disc, a per-channel score table, and a
// self-contained SVG rendering with color-mapped scores.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "hear/errors.hpp"

namespace hear {

struct TopomapChannel {
  std::string name;
  std::array<double, 3> position{};  // head frame, meters
  double score = 0.0;
};

// Drops z and rescales so the farthest electrode sits on the unit
// circle. A spread of zero (every electrode on the z axis) keeps all
// points at the origin.
inline std::vector<std::array<double, 2>> unit_disc_projection(
    const std::vector<TopomapChannel>& channels) {
  if (channels.empty()) {
    throw EmptyLayout("unit_disc_projection: no channels");
  }
  double max_r = 0.0;
  for (const TopomapChannel& ch : channels) {
    max_r = std::max(max_r, std::hypot(ch.position[0], ch.position[1]));
  }
  const double scale = max_r > 0.0 ? 1.0 / max_r : 0.0;
  std::vector<std::array<double, 2>> out(channels.size());
  for (std::size_t i = 0; i < channels.size(); ++i) {
    out[i] = {channels[i].position[0] * scale,
              channels[i].position[1] * scale};
  }
  return out;
}

namespace detail {

// Blue-white-red diverging map over t in [0, 1].
inline std::array<int, 3> diverging_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const double lo[3] = {33.0, 102.0, 172.0};
  const double mid[3] = {247.0, 247.0, 247.0};
  const double hi[3] = {178.0, 24.0, 43.0};
  std::array<int, 3> rgb{};
  for (int k = 0; k < 3; ++k) {
    const double v = t < 0.5 ? lo[k] + (mid[k] - lo[k]) * (t / 0.5)
                             : mid[k] + (hi[k] - mid[k]) * ((t - 0.5) / 0.5);
    rgb[k] = static_cast<int>(std::lround(v));
  }
  return rgb;
}

// Normalizes scores to [0, 1] for the colormap; a flat set of scores
// maps to the midpoint.
inline std::vector<double> color_positions(
    const std::vector<TopomapChannel>& channels) {
  double lo = channels[0].score;
  double hi = channels[0].score;
  for (const TopomapChannel& ch : channels) {
    lo = std::min(lo, ch.score);
    hi = std::max(hi, ch.score);
  }
  std::vector<double> t(channels.size(), 0.5);
  if (hi > lo) {
    for (std::size_t i = 0; i < channels.size(); ++i) {
      t[i] = (channels[i].score - lo) / (hi - lo);
    }
  }
  return t;
}

inline std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace detail

// One `name, x, y, score` row per channel, with unit-disc coordinates.
inline void write_topomap_csv(const std::string& path,
                              const std::vector<TopomapChannel>& channels) {
  const auto proj = unit_disc_projection(channels);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ParseError("cannot open topomap csv: " + path);
  for (std::size_t i = 0; i < channels.size(); ++i) {
    out << channels[i].name << ", " << detail::fixed(proj[i][0]) << ", "
        << detail::fixed(proj[i][1]) << ", "
        << detail::fixed(channels[i].score) << "\n";
  }
  if (!out) throw ParseError("topomap csv write failed: " + path);
}

// Static SVG scalp plot: head outline, nose marker, one filled disc
// per electrode colored by score, with the channel name underneath.
inline void write_topomap_svg(const std::string& path,
                              const std::vector<TopomapChannel>& channels) {
  const auto proj = unit_disc_projection(channels);
  const auto tpos = detail::color_positions(channels);

  const double size = 440.0;
  const double cx = size / 2.0;
  const double cy = size / 2.0;
  const double head_r = 180.0;
  // Electrodes stay inside the head outline.
  const double plot_r = head_r * 0.82;

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ParseError("cannot open topomap svg: " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size
      << "\" height=\"" << size << "\" viewBox=\"0 0 " << size << " " << size
      << "\">\n";
  out << "  <rect width=\"" << size << "\" height=\"" << size
      << "\" fill=\"#ffffff\"/>\n";
  // Nose points along +y, which is up in head coordinates.
  out << "  <polygon points=\"" << detail::fixed(cx - 14.0, 1) << ","
      << detail::fixed(cy - head_r + 4.0, 1) << " "
      << detail::fixed(cx + 14.0, 1) << ","
      << detail::fixed(cy - head_r + 4.0, 1) << " " << detail::fixed(cx, 1)
      << "," << detail::fixed(cy - head_r - 22.0, 1)
      << "\" fill=\"none\" stroke=\"#444444\" stroke-width=\"2\"/>\n";
  out << "  <circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"" << head_r
      << "\" fill=\"#fbfbfb\" stroke=\"#444444\" stroke-width=\"2\"/>\n";

  for (std::size_t i = 0; i < channels.size(); ++i) {
    const double px = cx + proj[i][0] * plot_r;
    const double py = cy - proj[i][1] * plot_r;  // SVG y grows downward
    const auto rgb = detail::diverging_color(tpos[i]);
    char fill[16];
    std::snprintf(fill, sizeof(fill), "#%02x%02x%02x", rgb[0], rgb[1],
                  rgb[2]);
    out << "  <circle cx=\"" << detail::fixed(px, 1) << "\" cy=\""
        << detail::fixed(py, 1) << "\" r=\"13\" fill=\"" << fill
        << "\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
    out << "  <text x=\"" << detail::fixed(px, 1) << "\" y=\""
        << detail::fixed(py + 26.0, 1)
        << "\" font-family=\"sans-serif\" font-size=\"11\""
           " text-anchor=\"middle\" fill=\"#222222\">"
        << channels[i].name << "</text>\n";
  }
  out << "</svg>\n";
  if (!out) throw ParseError("topomap svg write failed: " + path);
}

}  // namespace hear
