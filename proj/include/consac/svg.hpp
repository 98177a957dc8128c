#pragma once

// SVG rendering of a fit: observations coloured by assignment, then one
// row of sampling-weight heat maps and one row of states per instance step.

#include <algorithm>
#include <array>
#include <cstdio>
#include <string>

#include "consac/pipeline.hpp"

namespace consac {

namespace detail {

inline std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string cluster_colour(int label) {
  static constexpr std::array<const char*, 10> palette{"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                                       "#8c564b", "#e377c2", "#bcbd22", "#17becf", "#7f7f7f"};
  if (label < 0) return "#c8c8c8";
  return palette[static_cast<std::size_t>(label) % palette.size()];
}

/// Blue (low) to white (high).
inline std::string heat_colour(double v) {
  v = std::clamp(v, 0.0, 1.0);
  char buf[8];
  const int r = static_cast<int>(std::lround(20 + 235 * v));
  const int g = static_cast<int>(std::lround(40 + 215 * v));
  std::snprintf(buf, sizeof buf, "#%02x%02xff", r, g);
  return buf;
}

struct Frame {
  double x0, y0, x1, y1;  // data bounds
  bool flip_y;
};

}  // namespace detail

inline std::string render_svg(const Scene& scene, const FitResult& r) {
  constexpr double panel = 200.0, pad = 10.0;
  const auto& y = scene.observations;
  detail::Frame f{0, 0, 1, 1, scene.kind == ModelKind::line};
  if (scene.kind != ModelKind::line && !y.empty()) {
    f = {y[0][0], y[0][1], y[0][0], y[0][1], true};
    for (const auto& o : y) {
      const int pts = scene.kind == ModelKind::vp ? 2 : 1;
      for (int k = 0; k < pts; ++k) {
        f.x0 = std::min(f.x0, o[2 * k]);
        f.x1 = std::max(f.x1, o[2 * k]);
        f.y0 = std::min(f.y0, o[2 * k + 1]);
        f.y1 = std::max(f.y1, o[2 * k + 1]);
      }
    }
    f.flip_y = false;
  }
  const double sx = (f.x1 - f.x0) > 0 ? (panel - 2 * pad) / (f.x1 - f.x0) : 1.0;
  const double sy = (f.y1 - f.y0) > 0 ? (panel - 2 * pad) / (f.y1 - f.y0) : 1.0;
  auto px = [&](double ox, double x) { return ox + pad + (x - f.x0) * sx; };
  auto py = [&](double oy, double v) { return oy + pad + (f.flip_y ? (f.y1 - v) : (v - f.y0)) * sy; };

  const std::size_t steps = r.weights.size();
  const std::size_t cols = std::max<std::size_t>(1, steps);
  const double width = panel * static_cast<double>(cols);
  const double height = panel * (steps > 0 ? 3.0 : 1.0);
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt2(width) + "\" height=\"" +
                    detail::fmt2(height) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  auto mark = [&](double ox, double oy, std::size_t i, const std::string& colour) {
    const auto& o = y[i];
    if (scene.kind == ModelKind::vp)
      out += "<line x1=\"" + detail::fmt2(px(ox, o[0])) + "\" y1=\"" + detail::fmt2(py(oy, o[1])) + "\" x2=\"" +
             detail::fmt2(px(ox, o[2])) + "\" y2=\"" + detail::fmt2(py(oy, o[3])) + "\" stroke=\"" + colour +
             "\" stroke-width=\"1.5\"/>\n";
    else
      out += "<circle cx=\"" + detail::fmt2(px(ox, o[0])) + "\" cy=\"" + detail::fmt2(py(oy, o[1])) +
             "\" r=\"1.8\" fill=\"" + colour + "\"/>\n";
  };

  // assignments
  for (std::size_t i = 0; i < y.size(); ++i)
    mark(0, 0, i, detail::cluster_colour(i < r.assignments.size() ? r.assignments[i] : -1));
  if (scene.kind == ModelKind::line) {
    const auto sel = r.selected();
    for (std::size_t k = 0; k < sel.size(); ++k) {
      const auto ends = clip_to_unit_square(sel[k]);
      if (ends.size() < 2) continue;
      out += "<line x1=\"" + detail::fmt2(px(0, ends[0].x())) + "\" y1=\"" + detail::fmt2(py(0, ends[0].y())) +
             "\" x2=\"" + detail::fmt2(px(0, ends[1].x())) + "\" y2=\"" + detail::fmt2(py(0, ends[1].y())) +
             "\" stroke=\"" + detail::cluster_colour(static_cast<int>(k)) + "\" stroke-width=\"1\"/>\n";
    }
  }

  // weights and states per instance step
  for (std::size_t m = 0; m < steps; ++m) {
    const double ox = panel * static_cast<double>(m);
    out += "<rect x=\"" + detail::fmt2(ox) + "\" y=\"" + detail::fmt2(panel) + "\" width=\"" + detail::fmt2(panel) +
           "\" height=\"" + detail::fmt2(2 * panel) + "\" fill=\"#202020\"/>\n";
    const auto& w = r.weights[m];
    const double mx = w.empty() ? 1.0 : std::max(*std::max_element(w.begin(), w.end()), 1e-300);
    for (std::size_t i = 0; i < y.size() && i < w.size(); ++i) mark(ox, panel, i, detail::heat_colour(w[i] / mx));
    if (m < r.states.size())
      for (std::size_t i = 0; i < y.size() && i < r.states[m].size(); ++i)
        mark(ox, 2 * panel, i, detail::heat_colour(r.states[m][i]));
  }
  out += "</svg>\n";
  return out;
}

}  // namespace consac
