#pragma once

#include <string>
#include <vector>

#include "crossmap/world.hpp"

namespace crossmap {

// SVG rendering of one episode: graph nodes and edges, the ground-truth path,
// the generated path, the start marker and the success radius around the
// goal. Floors are drawn side by side.
std::string render_episode_svg(const World& world, const Episode& episode,
                               const std::vector<std::string>& generated_path);

}  // namespace crossmap
