#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "moreact/plotting.hpp"
#include "moreact/synthdata.hpp"

using namespace moreact;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "moreact_plot_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

size_t count_occurrences(const std::string& text, const std::string& needle) {
  size_t n = 0;
  for (size_t pos = text.find(needle); pos != std::string::npos;
       pos = text.find(needle, pos + needle.size()))
    ++n;
  return n;
}

PlotSeries ramp(const std::string& name, int points, double slope) {
  PlotSeries s;
  s.name = name;
  for (int i = 0; i < points; ++i) {
    s.x.push_back(i);
    s.y.push_back(slope * i);
  }
  return s;
}

}  // namespace

TEST_CASE("line plots hold one polyline per series plus labels") {
  const fs::path path = temp_dir() / "line.svg";
  write_line_plot_svg(path, "losses", "epoch", "loss",
                      {ramp("a", 8, 1.0), ramp("b", 8, -0.5)});
  const std::string svg = slurp(path);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(count_occurrences(svg, "<polyline") == 2);
  CHECK(svg.find("losses") != std::string::npos);
  CHECK(svg.find("epoch") != std::string::npos);
  CHECK(svg.find(">a<") != std::string::npos);
  CHECK(svg.find(">b<") != std::string::npos);
}

TEST_CASE("line plots reject bad input") {
  const fs::path path = temp_dir() / "bad.svg";
  CHECK_THROWS_AS(write_line_plot_svg(path, "t", "x", "y", {}), ConfigError);
  PlotSeries mism = ramp("m", 4, 1.0);
  mism.y.pop_back();
  CHECK_THROWS_AS(write_line_plot_svg(path, "t", "x", "y", {mism}), ConfigError);
  PlotSeries nan_series = ramp("n", 4, 1.0);
  nan_series.y[2] = std::nan("");
  CHECK_THROWS_AS(write_line_plot_svg(path, "t", "x", "y", {nan_series}),
                  ConfigError);
  CHECK_FALSE(fs::exists(path));
}

TEST_CASE("degenerate single-point series still render") {
  const fs::path path = temp_dir() / "point.svg";
  PlotSeries s;
  s.name = "dot";
  s.x = {2.0};
  s.y = {5.0};
  write_line_plot_svg(path, "one point", "x", "y", {s});
  const std::string svg = slurp(path);
  CHECK(count_occurrences(svg, "<polyline") == 1);
}

TEST_CASE("plot output is byte-identical across runs") {
  const fs::path p1 = temp_dir() / "det1.svg";
  const fs::path p2 = temp_dir() / "det2.svg";
  const std::vector<PlotSeries> series{ramp("a", 16, 0.3), ramp("b", 16, 2.0)};
  write_line_plot_svg(p1, "det", "x", "y", series);
  write_line_plot_svg(p2, "det", "x", "y", series);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("trajectory plots draw a start marker per path") {
  auto sample = generate(find_scenario("handshake"), 7, 48);
  const fs::path path = temp_dir() / "traj.svg";
  write_trajectory_plot_svg(path, "top-down",
                            {{"actor", sample.actor.features},
                             {"reactor", sample.reactor.features}});
  const std::string svg = slurp(path);
  CHECK(count_occurrences(svg, "<polyline") == 2);
  CHECK(count_occurrences(svg, "<circle") == 2);
  CHECK(svg.find("actor") != std::string::npos);

  Matd narrow(5, 3);
  narrow.setZero();
  CHECK_THROWS_AS(
      write_trajectory_plot_svg(temp_dir() / "x.svg", "t", {{"n", narrow}}),
      ConfigError);
}

TEST_CASE("skeleton strips draw every agent in every panel") {
  auto sample = generate(find_scenario("wave_response"), 3, 40);
  const fs::path path = temp_dir() / "strip.svg";
  const int panels = 4;
  write_skeleton_strip_svg(path, "strip",
                           {{"actor", sample.actor}, {"reactor", sample.reactor}},
                           panels);
  const std::string svg = slurp(path);
  CHECK(count_occurrences(svg, "frame ") == static_cast<size_t>(panels));
  // One segment per non-root joint, per agent, per panel, plus one legend
  // swatch per agent.
  const size_t bones = static_cast<size_t>(smpl22().joint_count() - 1);
  CHECK(count_occurrences(svg, "<line") == bones * 2 * panels + 2);

  auto other = generate(find_scenario("push_fall"), 4, 64);
  CHECK_THROWS_AS(
      write_skeleton_strip_svg(temp_dir() / "y.svg", "bad",
                               {{"a", sample.actor}, {"b", other.actor}}, 3),
      InvalidMotionError);
}

TEST_CASE("unwritable plot paths raise an io error") {
  CHECK_THROWS_AS(
      write_line_plot_svg("/proc/definitely/not/writable/plot.svg", "t", "x",
                          "y", {ramp("a", 3, 1.0)}),
      IoError);
}
