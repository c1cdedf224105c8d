#include "crossmap/render.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "crossmap/metrics.hpp"

namespace crossmap {

namespace {

struct Projector {
  double min_x = 0, min_y = 0, floor_offset = 0, z_split = 0;

  explicit Projector(const NavGraph& graph) {
    double max_x = -1e300, max_y = -1e300, min_z = 1e300, max_z = -1e300;
    min_x = min_y = 1e300;
    for (const auto& [id, node] : graph.nodes()) {
      min_x = std::min(min_x, node.position[0]);
      max_x = std::max(max_x, node.position[0]);
      min_y = std::min(min_y, node.position[1]);
      max_y = std::max(max_y, node.position[1]);
      min_z = std::min(min_z, node.position[2]);
      max_z = std::max(max_z, node.position[2]);
    }
    floor_offset = (max_x - min_x) + 8.0;
    z_split = (min_z + max_z) / 2.0;
  }

  std::pair<double, double> at(const NavNode& node) const {
    const bool upper = node.position[2] > z_split;
    return {node.position[0] - min_x + (upper ? floor_offset : 0.0) + 4.0,
            node.position[1] - min_y + 4.0};
  }
};

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(3);
  ss << std::fixed << v;
  return ss.str();
}

void polyline(std::ostringstream& svg, const NavGraph& graph, const Projector& proj,
              const std::vector<std::string>& path, const char* color, const char* dash,
              const char* cls) {
  if (path.size() < 2) return;
  svg << "<polyline class=\"" << cls << "\" fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"0.5\"";
  if (dash[0] != '\0') svg << " stroke-dasharray=\"" << dash << "\"";
  svg << " points=\"";
  for (size_t i = 0; i < path.size(); ++i) {
    auto [x, y] = proj.at(graph.node(path[i]));
    if (i) svg << ' ';
    svg << fmt(x) << ',' << fmt(y);
  }
  svg << "\"/>\n";
}

}  // namespace

std::string render_episode_svg(const World& world, const Episode& episode,
                               const std::vector<std::string>& generated_path) {
  const NavGraph& graph = world.graph;
  Projector proj(graph);

  double width = 0, height = 0;
  for (const auto& [id, node] : graph.nodes()) {
    auto [x, y] = proj.at(node);
    width = std::max(width, x + 4.0);
    height = std::max(height, y + 4.0);
  }

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << fmt(width) << ' '
      << fmt(height) << "\">\n";
  svg << "<!-- episode " << episode.id << " -->\n";

  // Undirected edges once.
  std::set<std::pair<std::string, std::string>> drawn;
  for (const auto& [id, node] : graph.nodes()) {
    for (const NavEdge& e : graph.edges_from(id)) {
      auto key = std::minmax(e.from, e.to);
      if (!drawn.insert({key.first, key.second}).second) continue;
      auto [x1, y1] = proj.at(graph.node(e.from));
      auto [x2, y2] = proj.at(graph.node(e.to));
      svg << "<line class=\"edge\" x1=\"" << fmt(x1) << "\" y1=\"" << fmt(y1) << "\" x2=\""
          << fmt(x2) << "\" y2=\"" << fmt(y2)
          << "\" stroke=\"#cccccc\" stroke-width=\"0.2\"/>\n";
    }
  }

  // Success radius around the goal.
  {
    auto [gx, gy] = proj.at(graph.node(episode.path.back()));
    svg << "<circle class=\"goal-radius\" cx=\"" << fmt(gx) << "\" cy=\"" << fmt(gy) << "\" r=\""
        << fmt(kSuccessRadius)
        << "\" fill=\"none\" stroke=\"#ff9900\" stroke-width=\"0.3\"/>\n";
  }

  polyline(svg, graph, proj, episode.path, "#2060c0", "", "gt-path");
  polyline(svg, graph, proj, generated_path, "#c02020", "1,1", "generated-path");

  for (const auto& [id, node] : graph.nodes()) {
    auto [x, y] = proj.at(node);
    svg << "<circle class=\"node\" cx=\"" << fmt(x) << "\" cy=\"" << fmt(y)
        << "\" r=\"0.6\" fill=\"#404040\"/>\n";
  }
  {
    auto [sx, sy] = proj.at(graph.node(episode.path.front()));
    svg << "<circle class=\"start\" cx=\"" << fmt(sx) << "\" cy=\"" << fmt(sy)
        << "\" r=\"0.9\" fill=\"none\" stroke=\"#209020\" stroke-width=\"0.4\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace crossmap
