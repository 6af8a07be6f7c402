/**
 * @file plotting.hpp
 * @brief Deterministic SVG writers used by evaluation and the CLI: line
 *        charts (metric curves), top-down root-trajectory plots, and
 *        skeleton strips (a row of projected stick-figure frames).  Files
 *        are self-contained SVG 1.1 with no timestamps, so identical calls
 *        produce byte-identical output.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "moreact/common.hpp"
#include "moreact/kinematics.hpp"
#include "moreact/skeleton.hpp"

namespace moreact {

/// One named curve of a line chart; x and y must have equal size.
struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

namespace detail {

/// Fixed qualitative palette, cycled when a plot has many series.
inline const char* plot_color(size_t i) {
  static constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                             "#9467bd", "#ff7f0e", "#8c564b"};
  return kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
}

/// Shortest-round-trip number formatting ("%.6g") for SVG attributes.
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& body) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec)
      throw IoError("cannot create plot directory " +
                    path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write plot " + path.string());
  out << body;
  if (!out) throw IoError("failed writing plot " + path.string());
}

/// Inclusive data range with a small pad so curves stay off the frame.
struct AxisRange {
  double lo = 0.0, hi = 1.0;

  static AxisRange of(double mn, double mx, double pad_frac = 0.05) {
    AxisRange r;
    if (mx - mn < 1e-12) {  // degenerate: center a unit window on the value
      r.lo = mn - 1.0;
      r.hi = mx + 1.0;
    } else {
      const double pad = (mx - mn) * pad_frac;
      r.lo = mn - pad;
      r.hi = mx + pad;
    }
    return r;
  }

  double map(double v, double px_lo, double px_hi) const {
    return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo);
  }
};

}  // namespace detail

/**
 * Writes a multi-series line chart with axes, ticks, and a legend.  Throws
 * ConfigError on an empty chart, mismatched series lengths, or non-finite
 * data, IoError when the file cannot be written.
 */
inline void write_line_plot_svg(const std::filesystem::path& path,
                                const std::string& title,
                                const std::string& x_label,
                                const std::string& y_label,
                                const std::vector<PlotSeries>& series) {
  if (series.empty()) throw ConfigError("line plot needs at least one series");
  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
  bool first = true;
  for (const auto& s : series) {
    if (s.x.empty() || s.x.size() != s.y.size())
      throw ConfigError("line plot series '" + s.name +
                        "' needs equal-size non-empty x and y");
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]))
        throw ConfigError("line plot series '" + s.name +
                          "' contains non-finite values");
      if (first) {
        xmin = xmax = s.x[i];
        ymin = ymax = s.y[i];
        first = false;
      } else {
        xmin = std::min(xmin, s.x[i]);
        xmax = std::max(xmax, s.x[i]);
        ymin = std::min(ymin, s.y[i]);
        ymax = std::max(ymax, s.y[i]);
      }
    }
  }
  const detail::AxisRange rx = detail::AxisRange::of(xmin, xmax);
  const detail::AxisRange ry = detail::AxisRange::of(ymin, ymax);

  constexpr double kW = 760, kH = 460;
  constexpr double kLeft = 70, kRight = 740, kTop = 46, kBottom = 410;
  auto px = [&](double v) { return rx.map(v, kLeft, kRight); };
  auto py = [&](double v) { return ry.map(v, kBottom, kTop); };  // y grows up

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW
      << "\" height=\"" << kH << "\" viewBox=\"0 0 " << kW << " " << kH
      << "\">\n";
  svg << "<rect width=\"" << kW << "\" height=\"" << kH
      << "\" fill=\"#ffffff\"/>\n";
  svg << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"16\">"
      << detail::xml_escape(title) << "</text>\n";

  // Frame and ticks.
  svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\""
      << kRight - kLeft << "\" height=\"" << kBottom - kTop
      << "\" fill=\"none\" stroke=\"#444444\"/>\n";
  constexpr int kTicks = 5;
  for (int i = 0; i < kTicks; ++i) {
    const double fx = rx.lo + (rx.hi - rx.lo) * i / (kTicks - 1);
    const double fy = ry.lo + (ry.hi - ry.lo) * i / (kTicks - 1);
    const double tx = px(fx), ty = py(fy);
    svg << "<line x1=\"" << detail::fmt(tx) << "\" y1=\"" << kBottom
        << "\" x2=\"" << detail::fmt(tx) << "\" y2=\"" << kBottom + 5
        << "\" stroke=\"#444444\"/>\n";
    svg << "<text x=\"" << detail::fmt(tx) << "\" y=\"" << kBottom + 20
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << detail::fmt(fx) << "</text>\n";
    svg << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << detail::fmt(ty)
        << "\" x2=\"" << kLeft << "\" y2=\"" << detail::fmt(ty)
        << "\" stroke=\"#444444\"/>\n";
    svg << "<text x=\"" << kLeft - 9 << "\" y=\"" << detail::fmt(ty + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << detail::fmt(fy) << "</text>\n";
  }
  svg << "<text x=\"" << (kLeft + kRight) / 2 << "\" y=\"" << kH - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\">"
      << detail::xml_escape(x_label) << "</text>\n";
  svg << "<text x=\"18\" y=\"" << (kTop + kBottom) / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\" transform=\"rotate(-90 18 "
      << (kTop + kBottom) / 2 << ")\">" << detail::xml_escape(y_label)
      << "</text>\n";

  // Curves.
  for (size_t si = 0; si < series.size(); ++si) {
    svg << "<polyline fill=\"none\" stroke=\"" << detail::plot_color(si)
        << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < series[si].x.size(); ++i) {
      if (i) svg << " ";
      svg << detail::fmt(px(series[si].x[i])) << ","
          << detail::fmt(py(series[si].y[i]));
    }
    svg << "\"/>\n";
  }

  // Legend, top-right inside the frame.
  for (size_t si = 0; si < series.size(); ++si) {
    const double ly = kTop + 16 + 18 * static_cast<double>(si);
    svg << "<line x1=\"" << kRight - 150 << "\" y1=\"" << detail::fmt(ly)
        << "\" x2=\"" << kRight - 126 << "\" y2=\"" << detail::fmt(ly)
        << "\" stroke=\"" << detail::plot_color(si)
        << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << kRight - 120 << "\" y=\"" << detail::fmt(ly + 4)
        << "\" font-family=\"sans-serif\" font-size=\"12\">"
        << detail::xml_escape(series[si].name) << "</text>\n";
  }
  svg << "</svg>\n";
  detail::write_text_file(path, svg.str());
}

/**
 * Top-down (x/z plane) plot of root paths.  Each entry is a named feature
 * matrix whose columns 1..3 hold the root position (a full 263-wide feature
 * matrix and a bare T x 4 trajectory both qualify); a circle marks the first
 * frame of each path.  The two axes share one scale so shapes keep their
 * aspect ratio.
 */
inline void write_trajectory_plot_svg(
    const std::filesystem::path& path, const std::string& title,
    const std::vector<std::pair<std::string, Matd>>& paths) {
  if (paths.empty()) throw ConfigError("trajectory plot needs at least one path");
  for (const auto& [name, m] : paths) {
    if (m.rows() < 1 || m.cols() < kRootPosOffset + 3)
      throw ConfigError("trajectory '" + name +
                        "' needs rows and at least 4 columns");
    if (!all_finite(m))
      throw ConfigError("trajectory '" + name + "' contains non-finite values");
  }
  double xmin = paths[0].second(0, kRootPosOffset);
  double xmax = xmin;
  double zmin = paths[0].second(0, kRootPosOffset + 2);
  double zmax = zmin;
  for (const auto& [name, m] : paths)
    for (Eigen::Index k = 0; k < m.rows(); ++k) {
      xmin = std::min(xmin, m(k, kRootPosOffset));
      xmax = std::max(xmax, m(k, kRootPosOffset));
      zmin = std::min(zmin, m(k, kRootPosOffset + 2));
      zmax = std::max(zmax, m(k, kRootPosOffset + 2));
    }
  // One shared span keeps metres square on screen.
  const double span = std::max({xmax - xmin, zmax - zmin, 0.5});
  const double cx = 0.5 * (xmin + xmax), cz = 0.5 * (zmin + zmax);
  const double half = 0.55 * span;

  constexpr double kW = 560, kH = 560;
  constexpr double kLeft = 60, kRight = 540, kTop = 46, kBottom = 526;
  auto px = [&](double x) {
    return kLeft + (x - (cx - half)) / (2 * half) * (kRight - kLeft);
  };
  auto pz = [&](double z) {
    return kBottom - (z - (cz - half)) / (2 * half) * (kBottom - kTop);
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW
      << "\" height=\"" << kH << "\" viewBox=\"0 0 " << kW << " " << kH
      << "\">\n";
  svg << "<rect width=\"" << kW << "\" height=\"" << kH
      << "\" fill=\"#ffffff\"/>\n";
  svg << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"16\">"
      << detail::xml_escape(title) << "</text>\n";
  svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\""
      << kRight - kLeft << "\" height=\"" << kBottom - kTop
      << "\" fill=\"none\" stroke=\"#444444\"/>\n";

  for (size_t pi = 0; pi < paths.size(); ++pi) {
    const Matd& m = paths[pi].second;
    svg << "<polyline fill=\"none\" stroke=\"" << detail::plot_color(pi)
        << "\" stroke-width=\"1.5\" points=\"";
    for (Eigen::Index k = 0; k < m.rows(); ++k) {
      if (k) svg << " ";
      svg << detail::fmt(px(m(k, kRootPosOffset))) << ","
          << detail::fmt(pz(m(k, kRootPosOffset + 2)));
    }
    svg << "\"/>\n";
    svg << "<circle cx=\"" << detail::fmt(px(m(0, kRootPosOffset)))
        << "\" cy=\"" << detail::fmt(pz(m(0, kRootPosOffset + 2)))
        << "\" r=\"4\" fill=\"" << detail::plot_color(pi) << "\"/>\n";
    const double ly = kTop + 16 + 18 * static_cast<double>(pi);
    svg << "<line x1=\"" << kRight - 140 << "\" y1=\"" << detail::fmt(ly)
        << "\" x2=\"" << kRight - 116 << "\" y2=\"" << detail::fmt(ly)
        << "\" stroke=\"" << detail::plot_color(pi)
        << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << kRight - 110 << "\" y=\"" << detail::fmt(ly + 4)
        << "\" font-family=\"sans-serif\" font-size=\"12\">"
        << detail::xml_escape(paths[pi].first) << "</text>\n";
  }
  svg << "</svg>\n";
  detail::write_text_file(path, svg.str());
}

/**
 * A strip of stick-figure frames: `panels` evenly spaced frames drawn side
 * by side, every named agent overlaid per panel in its palette color.  The
 * profile projection maps world z rightward and y upward, so canonical
 * (+z-facing) motions read left to right.  All agents must share one frame
 * count.
 */
inline void write_skeleton_strip_svg(
    const std::filesystem::path& path, const std::string& title,
    const std::vector<std::pair<std::string, MotionSequence>>& agents,
    int panels = 6) {
  if (agents.empty()) throw ConfigError("skeleton strip needs at least one agent");
  if (panels < 1) throw ConfigError("skeleton strip needs at least one panel");
  const int frames = agents[0].second.frames();
  for (const auto& [name, m] : agents)
    if (m.frames() != frames)
      throw InvalidMotionError("skeleton strip agents must share a frame count");

  const Skeleton& skel = smpl22();
  std::vector<Matd> positions;  // per agent, T x 3J
  positions.reserve(agents.size());
  for (const auto& [name, m] : agents) positions.push_back(decode(m));

  std::vector<int> picks(static_cast<size_t>(panels));
  for (int p = 0; p < panels; ++p)
    picks[static_cast<size_t>(p)] =
        panels == 1 ? 0
                    : static_cast<int>(std::lround(
                          static_cast<double>(p) * (frames - 1) / (panels - 1)));

  // Shared bounds over the drawn frames keep every panel on one scale.
  double zmin = 0, zmax = 0, ymin = 0, ymax = 0;
  bool first = true;
  for (const Matd& pos : positions)
    for (const int k : picks)
      for (int j = 0; j < skel.joint_count(); ++j) {
        const double z = pos(k, 3 * j + 2), y = pos(k, 3 * j + 1);
        if (first) {
          zmin = zmax = z;
          ymin = ymax = y;
          first = false;
        } else {
          zmin = std::min(zmin, z);
          zmax = std::max(zmax, z);
          ymin = std::min(ymin, y);
          ymax = std::max(ymax, y);
        }
      }
  const double span = std::max({zmax - zmin, ymax - ymin, 1.0});
  const double cz = 0.5 * (zmin + zmax), cy = 0.5 * (ymin + ymax);
  const double half = 0.55 * span;

  constexpr double kPanelW = 190, kPanelH = 230, kTop = 40, kPad = 8;
  const double kW = kPad + (kPanelW + kPad) * panels;
  const double kH = kTop + kPanelH + 40;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW
      << "\" height=\"" << kH << "\" viewBox=\"0 0 " << kW << " " << kH
      << "\">\n";
  svg << "<rect width=\"" << kW << "\" height=\"" << kH
      << "\" fill=\"#ffffff\"/>\n";
  svg << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"15\">"
      << detail::xml_escape(title) << "</text>\n";

  for (int p = 0; p < panels; ++p) {
    const double x0 = kPad + (kPanelW + kPad) * p;
    const int k = picks[static_cast<size_t>(p)];
    svg << "<rect x=\"" << detail::fmt(x0) << "\" y=\"" << kTop
        << "\" width=\"" << kPanelW << "\" height=\"" << kPanelH
        << "\" fill=\"none\" stroke=\"#cccccc\"/>\n";
    svg << "<text x=\"" << detail::fmt(x0 + kPanelW / 2) << "\" y=\""
        << kTop + kPanelH + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"12\">frame "
        << k << "</text>\n";
    auto pz = [&](double z) {
      return x0 + (z - (cz - half)) / (2 * half) * kPanelW;
    };
    auto py = [&](double y) {
      return kTop + kPanelH - (y - (cy - half)) / (2 * half) * kPanelH;
    };
    for (size_t a = 0; a < positions.size(); ++a) {
      const Matd& pos = positions[a];
      for (int j = 1; j < skel.joint_count(); ++j) {
        const int par = skel.parents[static_cast<size_t>(j)];
        svg << "<line x1=\"" << detail::fmt(pz(pos(k, 3 * par + 2)))
            << "\" y1=\"" << detail::fmt(py(pos(k, 3 * par + 1)))
            << "\" x2=\"" << detail::fmt(pz(pos(k, 3 * j + 2))) << "\" y2=\""
            << detail::fmt(py(pos(k, 3 * j + 1))) << "\" stroke=\""
            << detail::plot_color(a) << "\" stroke-width=\"1.4\"/>\n";
      }
    }
  }
  for (size_t a = 0; a < agents.size(); ++a) {
    const double lx = kPad + 4 + 130 * static_cast<double>(a);
    svg << "<line x1=\"" << detail::fmt(lx) << "\" y1=\"" << kH - 10
        << "\" x2=\"" << detail::fmt(lx + 20) << "\" y2=\"" << kH - 10
        << "\" stroke=\"" << detail::plot_color(a)
        << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << detail::fmt(lx + 26) << "\" y=\"" << kH - 6
        << "\" font-family=\"sans-serif\" font-size=\"12\">"
        << detail::xml_escape(agents[a].first) << "</text>\n";
  }
  svg << "</svg>\n";
  detail::write_text_file(path, svg.str());
}

}  // namespace moreact
