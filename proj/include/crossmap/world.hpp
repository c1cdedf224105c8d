#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crossmap/util.hpp"

namespace crossmap {

// 36 panoramic views per node: 3 elevation tiers x 12 azimuth sectors of 30
// degrees, ordered tier-major with tiers ascending.
constexpr int kViewTiers = 3;
constexpr int kViewAzimuths = 12;
constexpr int kViewsPerNode = kViewTiers * kViewAzimuths;
constexpr double kViewElevations[kViewTiers] = {-kPi / 6.0, 0.0, kPi / 6.0};

struct ViewFeature {
  std::vector<double> semantic;
  std::vector<double> visual;
  double azimuth = 0.0;    // world frame, [0, 2*pi)
  double elevation = 0.0;  // one of kViewElevations
};

struct NavNode {
  std::string id;
  std::array<double, 3> position{};  // meters
  std::vector<ViewFeature> views;    // exactly kViewsPerNode
  int room = -1;                     // index into World::room_labels
  int landmark = -1;                 // index into World::landmark_labels
};

struct NavEdge {
  std::string from;
  std::string to;
  double azimuth = 0.0;    // world frame direction from -> to
  double elevation = 0.0;
  double distance = 0.0;   // meters, > 0
};

class NavGraph {
 public:
  void add_node(NavNode node);
  void add_edge(NavEdge edge);  // one direction; callers add both

  bool has_node(const std::string& id) const { return nodes_.count(id) > 0; }
  const NavNode& node(const std::string& id) const;
  const std::map<std::string, NavNode>& nodes() const { return nodes_; }
  const std::vector<NavEdge>& edges_from(const std::string& id) const;
  size_t num_nodes() const { return nodes_.size(); }
  size_t num_edges() const;

  // Throws std::runtime_error describing the first violated invariant:
  // connectivity, adjacency symmetry, no self loops, edge distances matching
  // node positions, and exactly 36 canonically ordered views per node.
  void validate() const;

 private:
  std::map<std::string, NavNode> nodes_;
  std::map<std::string, std::vector<NavEdge>> adjacency_;
  static const std::vector<NavEdge> kNoEdges;
};

struct WorldSpec {
  int num_nodes = 30;
  int d_sem = 40;
  int d_vis = 128;
  double avg_degree = 3.0;
  std::vector<std::string> room_labels;      // defaults applied when empty
  std::vector<std::string> landmark_labels;  // defaults applied when empty

  OrderedJson to_json() const;
  static WorldSpec from_json(const Json& j);
};

struct World {
  std::string id;
  uint64_t seed = 0;
  WorldSpec spec;
  std::vector<std::string> room_labels;
  std::vector<std::string> landmark_labels;
  NavGraph graph;
};

struct Episode {
  std::string id;
  std::string graph_id;
  std::string instruction;        // empty for unlabeled paths
  std::vector<std::string> path;  // node ids, length >= 2
  double start_heading = 0.0;
};

struct Pose {
  std::string node_id;
  double heading = 0.0;    // [0, 2*pi)
  double elevation = 0.0;
};

struct ActionCandidate {
  bool is_stop = false;
  std::string to_node;              // empty for stop
  std::vector<double> feature;      // concat(semantic, visual) of the view toward the
                                    // destination; empty for stop (the model supplies a
                                    // learned stop feature)
  std::array<double, 5> positional{1.0, 0.0, 1.0, 0.0, 0.0};  // [cos az, sin az, cos el, sin el, dist]
  double rel_azimuth = 0.0;
  double rel_elevation = 0.0;
  double distance = 0.0;
};

// --- generation ---------------------------------------------------------------

// Deterministic synthetic world: a connected two-floor random geometric graph
// whose per-view semantic vectors are noisy one-hots over room/landmark
// categories visible in each direction and whose visual vectors are Gaussian
// fields correlated with the semantic category.
World generate_world(uint64_t seed, const WorldSpec& spec);

struct EpisodeGenOptions {
  int count = 16;
  int min_path_nodes = 3;
  int max_path_nodes = 6;
  bool with_instructions = true;
};

// Shortest-path episodes between sampled endpoints with template instructions
// mentioning landmarks along the path in order. Pure function of (seed, world,
// options).
std::vector<Episode> generate_episodes(uint64_t seed, const World& world,
                                       const EpisodeGenOptions& options);

// --- navigation ----------------------------------------------------------------

// Geodesic distance in meters along graph edges; nullopt when unreachable.
std::optional<double> shortest_path_length(const NavGraph& graph, const std::string& a,
                                           const std::string& b);

// Node sequence of a minimum-distance path (ties broken by node id), or empty
// when unreachable.
std::vector<std::string> shortest_path(const NavGraph& graph, const std::string& a,
                                       const std::string& b);

// All geodesic distances from src, for evaluation loops that score many
// queries against one goal.
std::map<std::string, double> geodesic_distances_from(const NavGraph& graph,
                                                      const std::string& src);

// One candidate per outgoing edge plus a final STOP candidate (always last).
std::vector<ActionCandidate> candidate_actions(const NavGraph& graph, const Pose& pose);

struct StepResult {
  bool terminal = false;
  Pose pose;  // valid when !terminal
};

// Applies a candidate from candidate_actions(graph, pose). Movement sets the
// heading to the traversed edge azimuth; STOP is terminal.
StepResult step(const NavGraph& graph, const Pose& pose, const ActionCandidate& action);

// --- io ------------------------------------------------------------------------

std::string world_to_json(const World& world);
World world_from_json(const std::string& text);
void save_world(const World& world, const std::string& path);
World load_world(const std::string& path);

std::string episodes_to_jsonl(const std::vector<Episode>& episodes);
std::vector<Episode> episodes_from_jsonl(const std::string& text);
void save_episodes(const std::vector<Episode>& episodes, const std::string& path);
std::vector<Episode> load_episodes(const std::string& path);

// R2R-style records: one Episode per instruction string.
std::vector<Episode> load_r2r_json(const std::string& path);
std::vector<Episode> episodes_from_r2r_json(const std::string& text);

// Throws std::runtime_error on the first violated episode invariant
// (adjacency, no immediate back-and-forth, heading range).
void validate_episode(const NavGraph& graph, const Episode& ep);

}  // namespace crossmap
