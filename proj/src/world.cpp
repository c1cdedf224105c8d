#include "crossmap/world.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>

#include "crossmap/rng.hpp"

namespace crossmap {

namespace {

const std::vector<std::string> kDefaultRooms = {
    "kitchen", "bedroom", "bathroom", "living room",
    "hallway", "office",  "stairwell", "balcony"};

const std::vector<std::string> kDefaultLandmarks = {
    "sofa",   "table", "sink",  "bed",    "bookshelf", "plant",  "mirror",   "lamp",
    "fridge", "desk",  "piano", "wardrobe", "rug",     "fireplace", "painting", "clock"};

double euclid(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

int elevation_tier(double elevation) {
  if (elevation < -kPi / 12.0) return 0;
  if (elevation > kPi / 12.0) return 2;
  return 1;
}

NavEdge make_edge(const NavNode& from, const NavNode& to) {
  NavEdge e;
  e.from = from.id;
  e.to = to.id;
  const double dx = to.position[0] - from.position[0];
  const double dy = to.position[1] - from.position[1];
  const double dz = to.position[2] - from.position[2];
  e.azimuth = wrap_angle(std::atan2(dy, dx));
  e.elevation = std::atan2(dz, std::sqrt(dx * dx + dy * dy));
  e.distance = euclid(from.position, to.position);
  return e;
}

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(size_t n) : parent(n) {
    for (size_t i = 0; i < n; ++i) parent[i] = static_cast<int>(i);
  }
  int find(int x) {
    while (parent[static_cast<size_t>(x)] != x) {
      parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
      x = parent[static_cast<size_t>(x)];
    }
    return x;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[static_cast<size_t>(a)] = b;
    return true;
  }
};

}  // namespace

// --- NavGraph -------------------------------------------------------------------

const std::vector<NavEdge> NavGraph::kNoEdges = {};

void NavGraph::add_node(NavNode node) {
  if (nodes_.count(node.id)) throw std::invalid_argument("NavGraph: duplicate node id " + node.id);
  nodes_.emplace(node.id, std::move(node));
}

void NavGraph::add_edge(NavEdge edge) {
  if (!nodes_.count(edge.from) || !nodes_.count(edge.to))
    throw std::invalid_argument("NavGraph: edge references unknown node " + edge.from + " -> " +
                                edge.to);
  if (edge.from == edge.to) throw std::invalid_argument("NavGraph: self loop at " + edge.from);
  if (edge.distance <= 0) throw std::invalid_argument("NavGraph: non-positive edge distance");
  adjacency_[edge.from].push_back(std::move(edge));
}

const NavNode& NavGraph::node(const std::string& id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw std::invalid_argument("NavGraph: unknown node " + id);
  return it->second;
}

const std::vector<NavEdge>& NavGraph::edges_from(const std::string& id) const {
  auto it = adjacency_.find(id);
  return it == adjacency_.end() ? kNoEdges : it->second;
}

size_t NavGraph::num_edges() const {
  size_t n = 0;
  for (const auto& [id, edges] : adjacency_) n += edges.size();
  return n;
}

void NavGraph::validate() const {
  if (nodes_.empty()) throw std::runtime_error("graph invariant: no nodes");
  size_t sem_len = 0, vis_len = 0;
  bool first = true;
  for (const auto& [id, node] : nodes_) {
    if (node.views.size() != kViewsPerNode)
      throw std::runtime_error("graph invariant: node " + id + " has " +
                               std::to_string(node.views.size()) + " views, expected 36");
    for (int t = 0; t < kViewTiers; ++t) {
      for (int a = 0; a < kViewAzimuths; ++a) {
        const ViewFeature& v = node.views[static_cast<size_t>(t * kViewAzimuths + a)];
        const double want_az = wrap_angle(a * (kTwoPi / kViewAzimuths));
        if (std::abs(v.azimuth - want_az) > 1e-9 ||
            std::abs(v.elevation - kViewElevations[t]) > 1e-9)
          throw std::runtime_error("graph invariant: node " + id +
                                   " views not in canonical (tier, azimuth) order");
        if (first) {
          sem_len = v.semantic.size();
          vis_len = v.visual.size();
          first = false;
        }
        if (v.semantic.size() != sem_len || v.visual.size() != vis_len)
          throw std::runtime_error("graph invariant: inconsistent feature widths at node " + id);
        for (double x : v.semantic)
          if (!std::isfinite(x)) throw std::runtime_error("graph invariant: non-finite semantic feature");
        for (double x : v.visual)
          if (!std::isfinite(x)) throw std::runtime_error("graph invariant: non-finite visual feature");
      }
    }
  }
  for (const auto& [id, edges] : adjacency_) {
    for (const NavEdge& e : edges) {
      if (e.from != id) throw std::runtime_error("graph invariant: adjacency key mismatch at " + id);
      if (e.from == e.to) throw std::runtime_error("graph invariant: self loop at " + id);
      const double want = euclid(node(e.from).position, node(e.to).position);
      if (std::abs(e.distance - want) > 1e-6)
        throw std::runtime_error("graph invariant: edge " + e.from + "->" + e.to +
                                 " distance disagrees with node positions");
      bool reverse = false;
      for (const NavEdge& r : edges_from(e.to))
        if (r.to == e.from) reverse = true;
      if (!reverse)
        throw std::runtime_error("graph invariant: missing reverse edge for " + e.from + "->" + e.to);
    }
  }
  // Connectivity by breadth-first traversal.
  std::set<std::string> seen;
  std::queue<std::string> frontier;
  frontier.push(nodes_.begin()->first);
  seen.insert(nodes_.begin()->first);
  while (!frontier.empty()) {
    std::string cur = frontier.front();
    frontier.pop();
    for (const NavEdge& e : edges_from(cur))
      if (seen.insert(e.to).second) frontier.push(e.to);
  }
  if (seen.size() != nodes_.size())
    throw std::runtime_error("graph invariant: graph is not connected (" +
                             std::to_string(seen.size()) + "/" + std::to_string(nodes_.size()) +
                             " reachable)");
}

// --- WorldSpec -----------------------------------------------------------------

OrderedJson WorldSpec::to_json() const {
  OrderedJson j;
  j["num_nodes"] = num_nodes;
  j["d_sem"] = d_sem;
  j["d_vis"] = d_vis;
  j["avg_degree"] = avg_degree;
  j["room_labels"] = room_labels;
  j["landmark_labels"] = landmark_labels;
  return j;
}

WorldSpec WorldSpec::from_json(const Json& j) {
  WorldSpec s;
  s.num_nodes = j.at("num_nodes").get<int>();
  s.d_sem = j.at("d_sem").get<int>();
  s.d_vis = j.at("d_vis").get<int>();
  s.avg_degree = j.at("avg_degree").get<double>();
  s.room_labels = j.at("room_labels").get<std::vector<std::string>>();
  s.landmark_labels = j.at("landmark_labels").get<std::vector<std::string>>();
  return s;
}

// --- generation ------------------------------------------------------------------

World generate_world(uint64_t seed, const WorldSpec& spec_in) {
  WorldSpec spec = spec_in;
  if (spec.room_labels.empty()) spec.room_labels = kDefaultRooms;
  if (spec.landmark_labels.empty()) spec.landmark_labels = kDefaultLandmarks;
  if (spec.num_nodes < 2)
    throw std::invalid_argument("generate_world: num_nodes must be at least 2");
  if (spec.avg_degree < 1.0)
    throw std::invalid_argument("generate_world: avg_degree must be at least 1");
  const int num_rooms = static_cast<int>(spec.room_labels.size());
  const int num_landmarks = static_cast<int>(spec.landmark_labels.size());
  const int num_categories = num_rooms + num_landmarks;
  if (spec.d_sem < num_categories)
    throw std::invalid_argument("generate_world: d_sem (" + std::to_string(spec.d_sem) +
                                ") must cover room+landmark categories (" +
                                std::to_string(num_categories) + ")");
  if (spec.d_vis < 1) throw std::invalid_argument("generate_world: d_vis must be positive");

  World world;
  world.seed = seed;
  world.spec = spec;
  world.id = "w" + std::to_string(seed) + "n" + std::to_string(spec.num_nodes);
  world.room_labels = spec.room_labels;
  world.landmark_labels = spec.landmark_labels;

  const int n = spec.num_nodes;
  const int floor0 = (n + 1) / 2;
  const double kFloorHeight = 3.5;
  const double kMinSeparation = 3.2;
  const double extent = 7.0 * std::sqrt(static_cast<double>(std::max(floor0, n - floor0)));

  Rng pos_rng(mix_seed(seed, "positions"));
  std::vector<NavNode> nodes(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    NavNode& node = nodes[static_cast<size_t>(i)];
    std::ostringstream id;
    id << "n" << (i < 10 ? "00" : i < 100 ? "0" : "") << i;
    node.id = id.str();
    const double z = i < floor0 ? 0.0 : kFloorHeight;
    for (int attempt = 0; attempt < 50; ++attempt) {
      node.position = {pos_rng.uniform(0.0, extent), pos_rng.uniform(0.0, extent), z};
      bool clear = true;
      for (int j = 0; j < i; ++j) {
        if (nodes[static_cast<size_t>(j)].position[2] == z &&
            euclid(nodes[static_cast<size_t>(j)].position, node.position) < kMinSeparation) {
          clear = false;
          break;
        }
      }
      if (clear) break;
    }
  }

  // Undirected edge set: same-floor nearest neighbours, inter-floor stairs,
  // then closest-pair patching until connected.
  std::set<std::pair<int, int>> pairs;
  auto add_pair = [&pairs](int a, int b) {
    if (a != b) pairs.insert({std::min(a, b), std::max(a, b)});
  };
  const int k_nearest = std::max(1, static_cast<int>(std::lround(spec.avg_degree / 2.0)));
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> near;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      if (nodes[static_cast<size_t>(j)].position[2] != nodes[static_cast<size_t>(i)].position[2])
        continue;
      near.push_back({euclid(nodes[static_cast<size_t>(i)].position,
                             nodes[static_cast<size_t>(j)].position),
                      j});
    }
    std::sort(near.begin(), near.end());
    for (int t = 0; t < k_nearest && t < static_cast<int>(near.size()); ++t)
      add_pair(i, near[static_cast<size_t>(t)].second);
  }
  if (floor0 < n) {
    std::vector<std::pair<double, std::pair<int, int>>> cross;
    for (int i = 0; i < floor0; ++i)
      for (int j = floor0; j < n; ++j)
        cross.push_back({euclid(nodes[static_cast<size_t>(i)].position,
                                nodes[static_cast<size_t>(j)].position),
                         {i, j}});
    std::sort(cross.begin(), cross.end());
    const int stairs = std::min<int>(2, static_cast<int>(cross.size()));
    for (int t = 0; t < stairs; ++t) add_pair(cross[static_cast<size_t>(t)].second.first,
                                              cross[static_cast<size_t>(t)].second.second);
  }
  UnionFind uf(static_cast<size_t>(n));
  for (const auto& [a, b] : pairs) uf.unite(a, b);
  while (true) {
    bool connected = true;
    for (int i = 1; i < n; ++i)
      if (uf.find(i) != uf.find(0)) {
        connected = false;
        break;
      }
    if (connected) break;
    double best = std::numeric_limits<double>::infinity();
    std::pair<int, int> best_pair{-1, -1};
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        if (uf.find(i) == uf.find(j)) continue;
        const double d = euclid(nodes[static_cast<size_t>(i)].position,
                                nodes[static_cast<size_t>(j)].position);
        if (d < best) {
          best = d;
          best_pair = {i, j};
        }
      }
    if (best_pair.first < 0)
      throw std::runtime_error("generate_world: unable to connect generated layout");
    add_pair(best_pair.first, best_pair.second);
    uf.unite(best_pair.first, best_pair.second);
  }

  // Room assignment: nearest of per-floor room centers; landmark per node.
  Rng room_rng(mix_seed(seed, "rooms"));
  std::vector<std::array<double, 3>> centers;
  std::vector<int> center_room;
  for (int floor = 0; floor < 2; ++floor) {
    const double z = floor == 0 ? 0.0 : kFloorHeight;
    for (int r = 0; r < num_rooms; ++r) {
      centers.push_back({room_rng.uniform(0.0, extent), room_rng.uniform(0.0, extent), z});
      center_room.push_back(r);
    }
  }
  Rng lm_rng(mix_seed(seed, "landmarks"));
  for (NavNode& node : nodes) {
    double best = std::numeric_limits<double>::infinity();
    for (size_t c = 0; c < centers.size(); ++c) {
      if (centers[c][2] != node.position[2]) continue;
      const double d = euclid(centers[c], node.position);
      if (d < best) {
        best = d;
        node.room = center_room[c];
      }
    }
    node.landmark = lm_rng.uniform_int(num_landmarks);
  }

  // Visual base vector per category, derived from the seed alone.
  std::vector<std::vector<double>> visual_base(static_cast<size_t>(num_categories));
  for (int c = 0; c < num_categories; ++c) {
    Rng base_rng(mix_seed(mix_seed(seed, "visual_base"), static_cast<uint64_t>(c)));
    visual_base[static_cast<size_t>(c)].resize(static_cast<size_t>(spec.d_vis));
    for (double& v : visual_base[static_cast<size_t>(c)]) v = base_rng.normal();
  }

  // Build the graph: nodes with views, then both edge directions.
  NavGraph& graph = world.graph;
  std::vector<std::vector<int>> neighbors(static_cast<size_t>(n));
  for (const auto& [a, b] : pairs) {
    neighbors[static_cast<size_t>(a)].push_back(b);
    neighbors[static_cast<size_t>(b)].push_back(a);
  }
  Rng feat_rng(mix_seed(seed, "features"));
  for (int i = 0; i < n; ++i) {
    NavNode node = nodes[static_cast<size_t>(i)];
    node.views.resize(kViewsPerNode);
    for (int t = 0; t < kViewTiers; ++t) {
      for (int a = 0; a < kViewAzimuths; ++a) {
        ViewFeature& view = node.views[static_cast<size_t>(t * kViewAzimuths + a)];
        view.azimuth = wrap_angle(a * (kTwoPi / kViewAzimuths));
        view.elevation = kViewElevations[t];
        // Category visible in this direction: the landmark of an adjacent node
        // whose edge direction falls in this view's sector, else the node's room.
        int category = node.room;
        double best_gap = kPi / kViewAzimuths;  // 15 degree half-sector
        for (int j : neighbors[static_cast<size_t>(i)]) {
          NavEdge e = make_edge(nodes[static_cast<size_t>(i)], nodes[static_cast<size_t>(j)]);
          if (elevation_tier(e.elevation) != t) continue;
          const double gap = std::abs(angle_diff(e.azimuth, view.azimuth));
          if (gap <= best_gap) {
            best_gap = gap;
            category = num_rooms + nodes[static_cast<size_t>(j)].landmark;
          }
        }
        view.semantic.resize(static_cast<size_t>(spec.d_sem));
        for (double& v : view.semantic) v = feat_rng.normal(0.0, 0.1);
        view.semantic[static_cast<size_t>(category)] += 1.0;
        view.visual.resize(static_cast<size_t>(spec.d_vis));
        for (int d = 0; d < spec.d_vis; ++d)
          view.visual[static_cast<size_t>(d)] =
              visual_base[static_cast<size_t>(category)][static_cast<size_t>(d)] +
              feat_rng.normal(0.0, 0.3);
      }
    }
    graph.add_node(std::move(node));
  }
  for (const auto& [a, b] : pairs) {
    graph.add_edge(make_edge(nodes[static_cast<size_t>(a)], nodes[static_cast<size_t>(b)]));
    graph.add_edge(make_edge(nodes[static_cast<size_t>(b)], nodes[static_cast<size_t>(a)]));
  }
  graph.validate();
  return world;
}

// --- shortest paths ---------------------------------------------------------------

namespace {

struct DijkstraResult {
  std::map<std::string, double> dist;
  std::map<std::string, std::string> parent;
};

DijkstraResult dijkstra(const NavGraph& graph, const std::string& src) {
  DijkstraResult res;
  using Entry = std::pair<double, std::string>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> pq;
  res.dist[src] = 0.0;
  pq.push({0.0, src});
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    auto it = res.dist.find(u);
    if (it != res.dist.end() && d > it->second) continue;
    for (const NavEdge& e : graph.edges_from(u)) {
      const double nd = d + e.distance;
      auto dit = res.dist.find(e.to);
      if (dit == res.dist.end() || nd < dit->second) {
        res.dist[e.to] = nd;
        res.parent[e.to] = u;
        pq.push({nd, e.to});
      }
    }
  }
  return res;
}

}  // namespace

std::optional<double> shortest_path_length(const NavGraph& graph, const std::string& a,
                                           const std::string& b) {
  if (!graph.has_node(a)) throw std::invalid_argument("shortest_path_length: unknown node " + a);
  if (!graph.has_node(b)) throw std::invalid_argument("shortest_path_length: unknown node " + b);
  if (a == b) return 0.0;
  DijkstraResult res = dijkstra(graph, a);
  auto it = res.dist.find(b);
  if (it == res.dist.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> shortest_path(const NavGraph& graph, const std::string& a,
                                       const std::string& b) {
  if (!graph.has_node(a)) throw std::invalid_argument("shortest_path: unknown node " + a);
  if (!graph.has_node(b)) throw std::invalid_argument("shortest_path: unknown node " + b);
  if (a == b) return {a};
  DijkstraResult res = dijkstra(graph, a);
  if (!res.dist.count(b)) return {};
  std::vector<std::string> path{b};
  std::string cur = b;
  while (cur != a) {
    cur = res.parent.at(cur);
    path.push_back(cur);
  }
  std::reverse(path.begin(), path.end());
  return path;
}

std::map<std::string, double> geodesic_distances_from(const NavGraph& graph,
                                                      const std::string& src) {
  if (!graph.has_node(src))
    throw std::invalid_argument("geodesic_distances_from: unknown node " + src);
  return dijkstra(graph, src).dist;
}

// --- candidates and stepping --------------------------------------------------------

std::vector<ActionCandidate> candidate_actions(const NavGraph& graph, const Pose& pose) {
  const NavNode& node = graph.node(pose.node_id);
  std::vector<ActionCandidate> out;
  for (const NavEdge& e : graph.edges_from(pose.node_id)) {
    ActionCandidate c;
    c.is_stop = false;
    c.to_node = e.to;
    c.rel_azimuth = angle_diff(e.azimuth, pose.heading);
    c.rel_elevation = e.elevation - pose.elevation;
    c.distance = e.distance;
    c.positional = {std::cos(c.rel_azimuth), std::sin(c.rel_azimuth),
                    std::cos(c.rel_elevation), std::sin(c.rel_elevation), c.distance};
    // The view of the current panorama pointing toward the destination.
    const int tier = elevation_tier(e.elevation);
    const int sector = static_cast<int>(std::lround(e.azimuth / (kTwoPi / kViewAzimuths))) %
                       kViewAzimuths;
    const ViewFeature& v = node.views[static_cast<size_t>(tier * kViewAzimuths + sector)];
    c.feature.reserve(v.semantic.size() + v.visual.size());
    c.feature.insert(c.feature.end(), v.semantic.begin(), v.semantic.end());
    c.feature.insert(c.feature.end(), v.visual.begin(), v.visual.end());
    out.push_back(std::move(c));
  }
  ActionCandidate stop;
  stop.is_stop = true;  // positional stays [1, 0, 1, 0, 0]
  out.push_back(std::move(stop));
  return out;
}

StepResult step(const NavGraph& graph, const Pose& pose, const ActionCandidate& action) {
  StepResult res;
  if (action.is_stop) {
    res.terminal = true;
    return res;
  }
  for (const NavEdge& e : graph.edges_from(pose.node_id)) {
    if (e.to == action.to_node) {
      res.terminal = false;
      res.pose = Pose{e.to, wrap_angle(e.azimuth), 0.0};
      return res;
    }
  }
  throw std::invalid_argument("step: action to " + action.to_node +
                              " is not a candidate from node " + pose.node_id);
}

// --- episode generation ----------------------------------------------------------------

namespace {

std::string render_instruction(const World& world, const std::vector<std::string>& path, Rng& rng) {
  const NavGraph& g = world.graph;
  auto room_of = [&](const std::string& id) {
    return world.room_labels[static_cast<size_t>(g.node(id).room)];
  };
  auto landmark_of = [&](const std::string& id) {
    return world.landmark_labels[static_cast<size_t>(g.node(id).landmark)];
  };

  std::vector<std::string> clauses;
  switch (rng.uniform_int(3)) {
    case 0: clauses.push_back("walk out of the " + room_of(path.front())); break;
    case 1: clauses.push_back("leave the " + room_of(path.front())); break;
    default: clauses.push_back("go straight ahead from the " + room_of(path.front())); break;
  }

  // Interior landmarks mentioned in path order.
  std::vector<std::string> interior(path.begin() + 1, path.end() - 1);
  std::vector<std::string> mentions;
  if (interior.empty()) {
    mentions.push_back(path.back());
  } else {
    const int want = 1 + rng.uniform_int(std::min<int>(3, static_cast<int>(interior.size())));
    std::vector<int> picks;
    while (static_cast<int>(picks.size()) < want) {
      int idx = rng.uniform_int(static_cast<int>(interior.size()));
      if (std::find(picks.begin(), picks.end(), idx) == picks.end()) picks.push_back(idx);
    }
    std::sort(picks.begin(), picks.end());
    for (int idx : picks) mentions.push_back(interior[static_cast<size_t>(idx)]);
  }
  for (const std::string& node_id : mentions) {
    switch (rng.uniform_int(4)) {
      case 0: clauses.push_back("walk past the " + landmark_of(node_id)); break;
      case 1: clauses.push_back("head towards the " + landmark_of(node_id)); break;
      case 2:
        clauses.push_back("go past the " + landmark_of(node_id) + " in the " + room_of(node_id));
        break;
      default: clauses.push_back("continue past the " + landmark_of(node_id)); break;
    }
  }
  switch (rng.uniform_int(3)) {
    case 0: clauses.push_back("stop in the " + room_of(path.back())); break;
    case 1: clauses.push_back("wait near the " + landmark_of(path.back())); break;
    default:
      clauses.push_back("stop next to the " + landmark_of(path.back()) + " in the " +
                        room_of(path.back()));
      break;
  }

  std::string out = clauses[0];
  for (size_t i = 1; i < clauses.size(); ++i)
    out += (rng.uniform() < 0.5 ? " then " : " and ") + clauses[i];
  return out;
}

}  // namespace

std::vector<Episode> generate_episodes(uint64_t seed, const World& world,
                                       const EpisodeGenOptions& options) {
  if (options.min_path_nodes < 2 || options.max_path_nodes < options.min_path_nodes)
    throw std::invalid_argument("generate_episodes: invalid path length range");
  std::vector<Episode> out;
  if (options.count == 0) return out;
  if (options.count < 0) throw std::invalid_argument("generate_episodes: negative count");

  std::vector<std::string> ids;
  for (const auto& [id, node] : world.graph.nodes()) ids.push_back(id);

  Rng rng(mix_seed(seed, "episodes"));
  for (int k = 0; k < options.count; ++k) {
    bool found = false;
    for (int attempt = 0; attempt < 400 && !found; ++attempt) {
      const std::string& a = ids[static_cast<size_t>(rng.uniform_int(static_cast<int>(ids.size())))];
      const std::string& b = ids[static_cast<size_t>(rng.uniform_int(static_cast<int>(ids.size())))];
      if (a == b) continue;
      std::vector<std::string> path = shortest_path(world.graph, a, b);
      const int len = static_cast<int>(path.size());
      if (len < options.min_path_nodes || len > options.max_path_nodes) continue;
      Episode ep;
      ep.id = world.id + "_ep" + std::to_string(k);
      ep.graph_id = world.id;
      ep.path = std::move(path);
      ep.start_heading = 0.0;
      if (options.with_instructions) ep.instruction = render_instruction(world, ep.path, rng);
      out.push_back(std::move(ep));
      found = true;
    }
    if (!found) {
      // Report what node counts are actually achievable.
      int lo = std::numeric_limits<int>::max(), hi = 0;
      for (const std::string& a : ids) {
        for (const std::string& b : ids) {
          if (a >= b) continue;
          const int len = static_cast<int>(shortest_path(world.graph, a, b).size());
          if (len >= 2) {
            lo = std::min(lo, len);
            hi = std::max(hi, len);
          }
        }
      }
      throw std::runtime_error(
          "generate_episodes: no endpoint pair with path length in [" +
          std::to_string(options.min_path_nodes) + ", " + std::to_string(options.max_path_nodes) +
          "]; achievable range is [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
  }
  return out;
}

// --- io -------------------------------------------------------------------------------

std::string world_to_json(const World& world) {
  OrderedJson j;
  j["format_version"] = 1;
  j["id"] = world.id;
  j["seed"] = world.seed;
  j["spec"] = world.spec.to_json();
  j["rooms"] = world.room_labels;
  j["landmarks"] = world.landmark_labels;
  OrderedJson nodes = OrderedJson::array();
  for (const auto& [id, node] : world.graph.nodes()) {
    OrderedJson nj;
    nj["id"] = node.id;
    nj["position"] = node.position;
    nj["room"] = node.room;
    nj["landmark"] = node.landmark;
    std::vector<double> sem, vis;
    for (const ViewFeature& v : node.views) {
      sem.insert(sem.end(), v.semantic.begin(), v.semantic.end());
      vis.insert(vis.end(), v.visual.begin(), v.visual.end());
    }
    nj["semantic"] = doubles_to_base64(sem);
    nj["visual"] = doubles_to_base64(vis);
    nodes.push_back(std::move(nj));
  }
  j["nodes"] = std::move(nodes);
  OrderedJson edges = OrderedJson::array();
  for (const auto& [id, node] : world.graph.nodes()) {
    for (const NavEdge& e : world.graph.edges_from(id)) {
      OrderedJson ej;
      ej["from"] = e.from;
      ej["to"] = e.to;
      ej["azimuth"] = e.azimuth;
      ej["elevation"] = e.elevation;
      ej["distance"] = e.distance;
      edges.push_back(std::move(ej));
    }
  }
  j["edges"] = std::move(edges);
  return j.dump();
}

World world_from_json(const std::string& text) {
  Json j = Json::parse(text);
  if (j.at("format_version").get<int>() != 1)
    throw std::runtime_error("world file: unsupported format version");
  World world;
  world.id = j.at("id").get<std::string>();
  world.seed = j.at("seed").get<uint64_t>();
  world.spec = WorldSpec::from_json(j.at("spec"));
  world.room_labels = j.at("rooms").get<std::vector<std::string>>();
  world.landmark_labels = j.at("landmarks").get<std::vector<std::string>>();
  const size_t d_sem = static_cast<size_t>(world.spec.d_sem);
  const size_t d_vis = static_cast<size_t>(world.spec.d_vis);
  for (const Json& nj : j.at("nodes")) {
    NavNode node;
    node.id = nj.at("id").get<std::string>();
    auto pos = nj.at("position").get<std::vector<double>>();
    if (pos.size() != 3) throw std::runtime_error("world file: node position must be a 3-vector");
    node.position = {pos[0], pos[1], pos[2]};
    node.room = nj.at("room").get<int>();
    node.landmark = nj.at("landmark").get<int>();
    std::vector<double> sem = base64_to_doubles(nj.at("semantic").get<std::string>());
    std::vector<double> vis = base64_to_doubles(nj.at("visual").get<std::string>());
    if (sem.size() != d_sem * kViewsPerNode || vis.size() != d_vis * kViewsPerNode)
      throw std::runtime_error("world file: feature payload size mismatch at node " + node.id);
    node.views.resize(kViewsPerNode);
    for (int t = 0; t < kViewTiers; ++t) {
      for (int a = 0; a < kViewAzimuths; ++a) {
        const size_t idx = static_cast<size_t>(t * kViewAzimuths + a);
        ViewFeature& v = node.views[idx];
        v.azimuth = wrap_angle(a * (kTwoPi / kViewAzimuths));
        v.elevation = kViewElevations[t];
        v.semantic.assign(sem.begin() + static_cast<long>(idx * d_sem),
                          sem.begin() + static_cast<long>((idx + 1) * d_sem));
        v.visual.assign(vis.begin() + static_cast<long>(idx * d_vis),
                        vis.begin() + static_cast<long>((idx + 1) * d_vis));
      }
    }
    world.graph.add_node(std::move(node));
  }
  for (const Json& ej : j.at("edges")) {
    NavEdge e;
    e.from = ej.at("from").get<std::string>();
    e.to = ej.at("to").get<std::string>();
    e.azimuth = ej.at("azimuth").get<double>();
    e.elevation = ej.at("elevation").get<double>();
    e.distance = ej.at("distance").get<double>();
    world.graph.add_edge(std::move(e));
  }
  world.graph.validate();
  return world;
}

void save_world(const World& world, const std::string& path) {
  write_file(path, world_to_json(world));
}

World load_world(const std::string& path) { return world_from_json(read_file(path)); }

std::string episodes_to_jsonl(const std::vector<Episode>& episodes) {
  std::string out;
  for (const Episode& ep : episodes) {
    OrderedJson j;
    j["id"] = ep.id;
    j["graph_id"] = ep.graph_id;
    j["instruction"] = ep.instruction;
    j["path"] = ep.path;
    j["start_heading"] = ep.start_heading;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<Episode> episodes_from_jsonl(const std::string& text) {
  std::vector<Episode> out;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Json j = Json::parse(line);
    Episode ep;
    try {
      ep.id = j.at("id").get<std::string>();
      ep.graph_id = j.at("graph_id").get<std::string>();
      ep.instruction = j.at("instruction").get<std::string>();
      ep.path = j.at("path").get<std::vector<std::string>>();
      ep.start_heading = j.at("start_heading").get<double>();
    } catch (const Json::exception& e) {
      throw std::runtime_error("episode file line " + std::to_string(line_no) + ": " + e.what());
    }
    if (ep.path.size() < 2)
      throw std::runtime_error("episode file line " + std::to_string(line_no) +
                               ": path must have at least 2 nodes");
    out.push_back(std::move(ep));
  }
  return out;
}

void save_episodes(const std::vector<Episode>& episodes, const std::string& path) {
  write_file(path, episodes_to_jsonl(episodes));
}

std::vector<Episode> load_episodes(const std::string& path) {
  return episodes_from_jsonl(read_file(path));
}

std::vector<Episode> episodes_from_r2r_json(const std::string& text) {
  Json j = Json::parse(text);
  if (!j.is_array()) throw std::runtime_error("r2r file: expected a top-level array");
  std::vector<Episode> out;
  for (size_t rec = 0; rec < j.size(); ++rec) {
    const Json& r = j[rec];
    auto need = [&](const char* field) -> const Json& {
      if (!r.contains(field))
        throw std::runtime_error("r2r record " + std::to_string(rec) + ": missing field '" +
                                 field + "'");
      return r.at(field);
    };
    std::string path_id;
    const Json& pid = need("path_id");
    if (pid.is_number_integer())
      path_id = std::to_string(pid.get<int64_t>());
    else if (pid.is_string())
      path_id = pid.get<std::string>();
    else
      throw std::runtime_error("r2r record " + std::to_string(rec) +
                               ": field 'path_id' must be an integer or string");
    if (!need("scan").is_string())
      throw std::runtime_error("r2r record " + std::to_string(rec) +
                               ": field 'scan' must be a string");
    const std::string scan = r.at("scan").get<std::string>();
    if (!need("heading").is_number())
      throw std::runtime_error("r2r record " + std::to_string(rec) +
                               ": field 'heading' must be a number");
    const double heading = r.at("heading").get<double>();
    const Json& instructions = need("instructions");
    if (!instructions.is_array())
      throw std::runtime_error("r2r record " + std::to_string(rec) +
                               ": field 'instructions' must be an array");
    const Json& path = need("path");
    if (!path.is_array() || path.size() < 2)
      throw std::runtime_error("r2r record " + std::to_string(rec) +
                               ": field 'path' must be an array of at least 2 node ids");
    std::vector<std::string> nodes;
    for (const Json& p : path) {
      if (!p.is_string())
        throw std::runtime_error("r2r record " + std::to_string(rec) +
                                 ": field 'path' must contain node id strings");
      nodes.push_back(p.get<std::string>());
    }
    for (size_t i = 0; i < instructions.size(); ++i) {
      if (!instructions[i].is_string())
        throw std::runtime_error("r2r record " + std::to_string(rec) +
                                 ": field 'instructions' must contain strings");
      Episode ep;
      ep.id = path_id + "_" + std::to_string(i);
      ep.graph_id = scan;
      ep.instruction = instructions[i].get<std::string>();
      ep.path = nodes;
      ep.start_heading = wrap_angle(heading);
      out.push_back(std::move(ep));
    }
  }
  return out;
}

std::vector<Episode> load_r2r_json(const std::string& path) {
  return episodes_from_r2r_json(read_file(path));
}

void validate_episode(const NavGraph& graph, const Episode& ep) {
  if (ep.path.size() < 2)
    throw std::runtime_error("episode " + ep.id + ": path must have at least 2 nodes");
  if (ep.start_heading < 0.0 || ep.start_heading >= kTwoPi)
    throw std::runtime_error("episode " + ep.id + ": start_heading must be in [0, 2*pi)");
  for (size_t i = 0; i + 1 < ep.path.size(); ++i) {
    if (!graph.has_node(ep.path[i]))
      throw std::runtime_error("episode " + ep.id + ": unknown node " + ep.path[i]);
    bool adjacent = false;
    for (const NavEdge& e : graph.edges_from(ep.path[i]))
      if (e.to == ep.path[i + 1]) adjacent = true;
    if (!adjacent)
      throw std::runtime_error("episode " + ep.id + ": " + ep.path[i] + " and " + ep.path[i + 1] +
                               " are not adjacent");
  }
  if (!graph.has_node(ep.path.back()))
    throw std::runtime_error("episode " + ep.id + ": unknown node " + ep.path.back());
  for (size_t i = 0; i + 2 < ep.path.size(); ++i)
    if (ep.path[i] == ep.path[i + 2])
      throw std::runtime_error("episode " + ep.id + ": immediate back-and-forth at " + ep.path[i]);
}

}  // namespace crossmap
