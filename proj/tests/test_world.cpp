#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <map>
#include <queue>
#include <set>

#include "crossmap/rng.hpp"
#include "crossmap/world.hpp"

using namespace crossmap;

namespace {

// Breadth-first reachability oracle, independent of NavGraph::validate.
size_t bfs_reachable(const NavGraph& g, const std::string& start) {
  std::set<std::string> seen{start};
  std::queue<std::string> q;
  q.push(start);
  while (!q.empty()) {
    std::string cur = q.front();
    q.pop();
    for (const NavEdge& e : g.edges_from(cur))
      if (seen.insert(e.to).second) q.push(e.to);
  }
  return seen.size();
}

// Bellman-Ford oracle for geodesic distances from one source.
std::map<std::string, double> bellman_ford(const NavGraph& g, const std::string& src) {
  std::map<std::string, double> dist;
  dist[src] = 0.0;
  const size_t n = g.num_nodes();
  for (size_t round = 0; round + 1 < n; ++round) {
    bool changed = false;
    for (const auto& [id, node] : g.nodes()) {
      auto it = dist.find(id);
      if (it == dist.end()) continue;
      for (const NavEdge& e : g.edges_from(id)) {
        const double nd = it->second + e.distance;
        auto dit = dist.find(e.to);
        if (dit == dist.end() || nd < dit->second) {
          dist[e.to] = nd;
          changed = true;
        }
      }
    }
    if (!changed) break;
  }
  return dist;
}

WorldSpec small_spec(int nodes) {
  WorldSpec spec;
  spec.num_nodes = nodes;
  spec.d_sem = 12;
  spec.d_vis = 16;
  spec.avg_degree = 3.0;
  spec.room_labels = {"kitchen", "bedroom", "bathroom", "hallway"};
  spec.landmark_labels = {"sofa", "table", "sink", "bed", "plant", "lamp"};
  return spec;
}

// Hand-built 3-node line A -(2m)- B -(3m)- C with canonical views.
NavGraph line_graph() {
  NavGraph g;
  auto mk_node = [](const std::string& id, double x) {
    NavNode n;
    n.id = id;
    n.position = {x, 0.0, 0.0};
    n.room = 0;
    n.landmark = 0;
    n.views.resize(kViewsPerNode);
    for (int t = 0; t < kViewTiers; ++t)
      for (int a = 0; a < kViewAzimuths; ++a) {
        ViewFeature& v = n.views[static_cast<size_t>(t * kViewAzimuths + a)];
        v.azimuth = wrap_angle(a * (kTwoPi / kViewAzimuths));
        v.elevation = kViewElevations[t];
        v.semantic = {1.0, 0.0};
        v.visual = {0.5};
      }
    return n;
  };
  g.add_node(mk_node("A", 0.0));
  g.add_node(mk_node("B", 2.0));
  g.add_node(mk_node("C", 5.0));
  auto connect = [&g](const std::string& a, const std::string& b) {
    const NavNode& na = g.node(a);
    const NavNode& nb = g.node(b);
    const double dx = nb.position[0] - na.position[0];
    NavEdge e1{a, b, wrap_angle(std::atan2(0.0, dx)), 0.0, std::abs(dx)};
    NavEdge e2{b, a, wrap_angle(std::atan2(0.0, -dx)), 0.0, std::abs(dx)};
    g.add_edge(e1);
    g.add_edge(e2);
  };
  connect("A", "B");
  connect("B", "C");
  return g;
}

}  // namespace

TEST_CASE("generate_world is deterministic byte for byte") {
  World a = generate_world(7, small_spec(12));
  World b = generate_world(7, small_spec(12));
  CHECK(world_to_json(a) == world_to_json(b));
  World c = generate_world(8, small_spec(12));
  CHECK(world_to_json(a) != world_to_json(c));
}

TEST_CASE("two-node world has both edge directions") {
  World w = generate_world(3, small_spec(2));
  CHECK(w.graph.num_nodes() == 2);
  REQUIRE(w.graph.edges_from("n000").size() == 1);
  REQUIRE(w.graph.edges_from("n001").size() == 1);
  CHECK(w.graph.edges_from("n000")[0].to == "n001");
  CHECK(w.graph.edges_from("n001")[0].to == "n000");
}

TEST_CASE("generated worlds are connected per BFS oracle and pass invariants") {
  World w = generate_world(7, small_spec(40));
  CHECK(bfs_reachable(w.graph, w.graph.nodes().begin()->first) == 40);
  CHECK_NOTHROW(w.graph.validate());

  // Edge distance consistency against positions.
  for (const auto& [id, node] : w.graph.nodes()) {
    for (const NavEdge& e : w.graph.edges_from(id)) {
      const auto& p = w.graph.node(e.from).position;
      const auto& q = w.graph.node(e.to).position;
      const double d = std::sqrt((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                                 (p[2] - q[2]) * (p[2] - q[2]));
      CHECK(std::abs(e.distance - d) <= 1e-6);
    }
  }
}

TEST_CASE("degenerate world specs fail loudly") {
  CHECK_THROWS_AS(generate_world(1, small_spec(1)), std::invalid_argument);
  WorldSpec bad = small_spec(5);
  bad.avg_degree = 0.2;
  CHECK_THROWS_AS(generate_world(1, bad), std::invalid_argument);
  WorldSpec tiny = small_spec(5);
  tiny.d_sem = 3;  // fewer than room+landmark categories
  CHECK_THROWS_AS(generate_world(1, tiny), std::invalid_argument);
}

TEST_CASE("shortest_path_length basics and Bellman-Ford oracle") {
  NavGraph g = line_graph();
  CHECK(shortest_path_length(g, "A", "A").value() == 0.0);
  CHECK(shortest_path_length(g, "A", "C").value() == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(shortest_path_length(g, "C", "A").value() == doctest::Approx(5.0).epsilon(1e-12));

  World w = generate_world(99, small_spec(20));
  for (const auto& [src, node] : w.graph.nodes()) {
    auto oracle = bellman_ford(w.graph, src);
    for (const auto& [dst, expect] : oracle) {
      auto got = shortest_path_length(w.graph, src, dst);
      REQUIRE(got.has_value());
      CHECK(std::abs(*got - expect) < 1e-9);
    }
  }
}

TEST_CASE("shortest_path_length reports unreachable pairs explicitly") {
  // Two disconnected hand-built components (validate() would reject this, but
  // the query API must still answer).
  NavGraph g = line_graph();
  NavNode lonely;
  lonely.id = "Z";
  lonely.position = {100.0, 100.0, 0.0};
  lonely.room = 0;
  lonely.landmark = 0;
  lonely.views.resize(kViewsPerNode);
  for (int t = 0; t < kViewTiers; ++t)
    for (int a = 0; a < kViewAzimuths; ++a) {
      ViewFeature& v = lonely.views[static_cast<size_t>(t * kViewAzimuths + a)];
      v.azimuth = wrap_angle(a * (kTwoPi / kViewAzimuths));
      v.elevation = kViewElevations[t];
      v.semantic = {1.0, 0.0};
      v.visual = {0.5};
    }
  g.add_node(lonely);
  CHECK_FALSE(shortest_path_length(g, "A", "Z").has_value());
  CHECK_THROWS_AS(shortest_path_length(g, "A", "missing").value(), std::invalid_argument);
}

TEST_CASE("triangle inequality on sampled triples") {
  World w = generate_world(4242, small_spec(16));
  std::vector<std::string> ids;
  for (const auto& [id, n] : w.graph.nodes()) ids.push_back(id);
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto& a = ids[static_cast<size_t>(rng.uniform_int(static_cast<int>(ids.size())))];
    const auto& b = ids[static_cast<size_t>(rng.uniform_int(static_cast<int>(ids.size())))];
    const auto& c = ids[static_cast<size_t>(rng.uniform_int(static_cast<int>(ids.size())))];
    const double ab = shortest_path_length(w.graph, a, b).value();
    const double bc = shortest_path_length(w.graph, b, c).value();
    const double ac = shortest_path_length(w.graph, a, c).value();
    CHECK(ac <= ab + bc + 1e-9);
  }
}

TEST_CASE("candidate_actions shape and stop conventions") {
  NavGraph g = line_graph();
  Pose at_b{"B", 0.0, 0.0};
  auto cands = candidate_actions(g, at_b);
  REQUIRE(cands.size() == 3);  // two neighbors + STOP
  CHECK_FALSE(cands[0].is_stop);
  CHECK_FALSE(cands[1].is_stop);
  CHECK(cands[2].is_stop);
  CHECK(cands[2].positional == std::array<double, 5>{1.0, 0.0, 1.0, 0.0, 0.0});

  // Edge due "east" with heading "east": relative azimuth 0.
  auto from_a = candidate_actions(g, Pose{"A", 0.0, 0.0});
  REQUIRE(from_a.size() == 2);
  CHECK(from_a[0].to_node == "B");
  CHECK(from_a[0].positional[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(from_a[0].positional[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(from_a[0].positional[4] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK_FALSE(from_a[0].feature.empty());

  // Heading west makes the same edge face backwards.
  auto from_a_west = candidate_actions(g, Pose{"A", kPi, 0.0});
  CHECK(from_a_west[0].positional[0] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("step applies edges and terminates on STOP") {
  NavGraph g = line_graph();
  Pose at_a{"A", 1.0, 0.0};
  auto cands = candidate_actions(g, at_a);
  StepResult moved = step(g, at_a, cands[0]);
  CHECK_FALSE(moved.terminal);
  CHECK(moved.pose.node_id == "B");
  CHECK(moved.pose.heading == doctest::Approx(0.0).epsilon(1e-12));  // edge azimuth

  StepResult stopped = step(g, at_a, cands.back());
  CHECK(stopped.terminal);

  ActionCandidate bogus;
  bogus.to_node = "C";  // not adjacent to A
  CHECK_THROWS_AS(step(g, at_a, bogus), std::invalid_argument);
}

TEST_CASE("generate_episodes produces valid shortest-path episodes") {
  World w = generate_world(7, small_spec(24));
  EpisodeGenOptions opt;
  opt.count = 12;
  opt.min_path_nodes = 3;
  opt.max_path_nodes = 6;

  CHECK(generate_episodes(3, w, EpisodeGenOptions{0, 3, 6, true}).empty());

  auto eps = generate_episodes(3, w, opt);
  REQUIRE(eps.size() == 12);
  for (const Episode& ep : eps) {
    CHECK_NOTHROW(validate_episode(w.graph, ep));
    CHECK(ep.graph_id == w.id);
    const int len = static_cast<int>(ep.path.size());
    CHECK(len >= 3);
    CHECK(len <= 6);
    // Shortest-path property against the Bellman-Ford oracle.
    auto oracle = bellman_ford(w.graph, ep.path.front());
    double traversed = 0.0;
    for (size_t i = 0; i + 1 < ep.path.size(); ++i) {
      for (const NavEdge& e : w.graph.edges_from(ep.path[i]))
        if (e.to == ep.path[i + 1]) traversed += e.distance;
    }
    CHECK(std::abs(traversed - oracle.at(ep.path.back())) < 1e-9);
    // Template instructions stay within the 8..40 token budget.
    std::istringstream words(ep.instruction);
    int tokens = 0;
    std::string tok;
    while (words >> tok) ++tokens;
    CHECK(tokens >= 8);
    CHECK(tokens <= 40);
  }

  // Determinism.
  auto again = generate_episodes(3, w, opt);
  CHECK(episodes_to_jsonl(eps) == episodes_to_jsonl(again));

  // Unreachable length range names the achievable one.
  EpisodeGenOptions impossible;
  impossible.count = 1;
  impossible.min_path_nodes = 30;
  impossible.max_path_nodes = 40;
  CHECK_THROWS_WITH_AS(generate_episodes(3, w, impossible), doctest::Contains("achievable range"),
                       std::runtime_error);
}

TEST_CASE("world save/load round trip is byte identical") {
  World w = generate_world(1234, small_spec(8));
  const std::string path = (std::filesystem::temp_directory_path() / "cm_world_rt.json").string();
  save_world(w, path);
  World loaded = load_world(path);
  const std::string again = path + ".2";
  save_world(loaded, again);
  CHECK(read_file(path) == read_file(again));
  std::filesystem::remove(path);
  std::filesystem::remove(again);
}

TEST_CASE("episode jsonl round trip") {
  World w = generate_world(55, small_spec(10));
  auto eps = generate_episodes(1, w, EpisodeGenOptions{4, 2, 5, true});
  std::string text = episodes_to_jsonl(eps);
  auto back = episodes_from_jsonl(text);
  CHECK(episodes_to_jsonl(back) == text);
}

TEST_CASE("r2r loader maps records to one episode per instruction") {
  CHECK(episodes_from_r2r_json("[]").empty());

  const std::string text = R"([
    {"path_id": 4332, "scan": "house1", "heading": 0.25,
     "instructions": ["go left", "walk left", "turn left and go"],
     "path": ["p1", "p2", "p3"]}
  ])";
  auto eps = episodes_from_r2r_json(text);
  REQUIRE(eps.size() == 3);
  CHECK(eps[0].id == "4332_0");
  CHECK(eps[1].id == "4332_1");
  CHECK(eps[0].graph_id == "house1");
  CHECK(eps[0].path == eps[2].path);
  CHECK(eps[0].start_heading == doctest::Approx(0.25).epsilon(1e-12));

  // Malformed record errors name the field and record index.
  const std::string missing = R"([{"path_id": 1, "scan": "s", "heading": 0.0, "path": ["a","b"]}])";
  CHECK_THROWS_WITH_AS(episodes_from_r2r_json(missing), doctest::Contains("instructions"),
                       std::runtime_error);
  const std::string bad_path = R"([{"path_id": 1, "scan": "s", "heading": 0.0,
    "instructions": ["x"], "path": ["a"]}])";
  CHECK_THROWS_WITH_AS(episodes_from_r2r_json(bad_path), doctest::Contains("record 0"),
                       std::runtime_error);
}
