#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>

#include "crossmap/metrics.hpp"
#include "crossmap/rng.hpp"
#include "crossmap/world.hpp"

using namespace crossmap;

namespace {

NavNode plain_node(const std::string& id, double x, double y) {
  NavNode n;
  n.id = id;
  n.position = {x, y, 0.0};
  n.room = 0;
  n.landmark = 0;
  n.views.resize(kViewsPerNode);
  for (int t = 0; t < kViewTiers; ++t)
    for (int a = 0; a < kViewAzimuths; ++a) {
      ViewFeature& v = n.views[static_cast<size_t>(t * kViewAzimuths + a)];
      v.azimuth = wrap_angle(a * (kTwoPi / kViewAzimuths));
      v.elevation = kViewElevations[t];
      v.semantic = {1.0};
      v.visual = {0.0};
    }
  return n;
}

void connect(NavGraph& g, const std::string& a, const std::string& b) {
  const auto& pa = g.node(a).position;
  const auto& pb = g.node(b).position;
  const double dx = pb[0] - pa[0], dy = pb[1] - pa[1];
  const double d = std::sqrt(dx * dx + dy * dy);
  g.add_edge(NavEdge{a, b, wrap_angle(std::atan2(dy, dx)), 0.0, d});
  g.add_edge(NavEdge{b, a, wrap_angle(std::atan2(-dy, -dx)), 0.0, d});
}

// A -2.9- B -0.2- C -3.0- D in a line.
NavGraph boundary_graph() {
  NavGraph g;
  g.add_node(plain_node("A", 0.0, 0.0));
  g.add_node(plain_node("B", 2.9, 0.0));
  g.add_node(plain_node("C", 3.1, 0.0));
  g.add_node(plain_node("D", 6.1, 0.0));
  connect(g, "A", "B");
  connect(g, "B", "C");
  connect(g, "C", "D");
  return g;
}

}  // namespace

TEST_CASE("nav_metrics hand-scored cases") {
  NavGraph g = boundary_graph();

  SUBCASE("exact arrival") {
    auto r = nav_metrics(g, {{"e0", {"A", "B"}, "B", false}});
    CHECK(r.sr == 1.0);
    CHECK(r.ne == 0.0);
    CHECK(r.spl == 1.0);  // traversed == optimal
    CHECK(r.osr == 1.0);
  }

  SUBCASE("success boundary at 3 meters") {
    // Final node B is 2.9 m from goal A: success.
    auto near = nav_metrics(g, {{"e0", {"C", "B"}, "A", false}});
    CHECK(near.sr == 1.0);
    CHECK(near.ne == doctest::Approx(2.9).epsilon(1e-12));
    // Final node C is 3.1 m from goal A: failure.
    auto far = nav_metrics(g, {{"e0", {"B", "C"}, "A", false}});
    CHECK(far.sr == 0.0);
    CHECK(far.ne == doctest::Approx(3.1).epsilon(1e-12));
  }

  SUBCASE("oracle success counts any visited node") {
    // Walks through the goal then away from it.
    auto r = nav_metrics(g, {{"e0", {"B", "C", "D"}, "C", false}});
    CHECK(r.sr == 1.0);  // D is 3.0 m from C, inside the radius
    CHECK(r.osr == 1.0);
    auto away = nav_metrics(g, {{"e0", {"A", "B", "C", "D"}, "A", false}});
    CHECK(away.sr == 0.0);
    CHECK(away.osr == 1.0);
  }

  SUBCASE("spl penalizes detours") {
    // A->B->A->B against goal B: traversed 8.7, optimal 2.9.
    auto r = nav_metrics(g, {{"e0", {"A", "B", "A", "B"}, "B", false}});
    CHECK(r.sr == 1.0);
    CHECK(r.spl == doctest::Approx(2.9 / 8.7).epsilon(1e-12));
  }

  SUBCASE("truncated outcomes are failures") {
    auto r = nav_metrics(g, {{"e0", {"A", "B"}, "B", true}});
    CHECK(r.sr == 0.0);
    CHECK(r.spl == 0.0);
    CHECK(r.osr == 1.0);  // oracle ignores stopping
    CHECK(r.episodes[0].truncated);
  }

  SUBCASE("five-episode hand-scored aggregate") {
    std::vector<NavOutcome> outs = {
        {"e0", {"A", "B"}, "B", false},        // success, ne 0, spl 1
        {"e1", {"B", "C"}, "A", false},        // fail, ne 3.1
        {"e2", {"A", "B", "C"}, "D", false},   // success, ne 3.0, spl 6.1/max(3.1,6.1)... optimal 6.1, traversed 3.1 -> spl 1
        {"e3", {"D"}, "A", false},             // fail, ne 6.1, osr 0
        {"e4", {"A", "B", "A", "B"}, "B", false},  // success, spl 2.9/8.7
    };
    auto r = nav_metrics(g, outs);
    CHECK(r.count == 5);
    CHECK(r.sr == doctest::Approx(3.0 / 5.0).epsilon(1e-12));
    CHECK(r.ne == doctest::Approx((0.0 + 3.1 + 3.0 + 6.1 + 0.0) / 5.0).epsilon(1e-12));
    // e2: optimal 6.1 > traversed 3.1 is impossible on shortest paths; the
    // traversed path IS shorter than geodesic? No: geodesic A->D is 6.1 and the
    // walk stopped at C (3.0 from D), so spl uses optimal/max(traversed, optimal).
    const double spl_e2 = 6.1 / std::max(3.1 + 0.2, 6.1);
    const double expect_spl = (1.0 + 0.0 + spl_e2 + 0.0 + 2.9 / 8.7) / 5.0;
    CHECK(r.spl == doctest::Approx(expect_spl).epsilon(1e-12));
    CHECK(r.osr == doctest::Approx(4.0 / 5.0).epsilon(1e-12));
    CHECK(r.spl <= r.sr);
    CHECK(r.osr >= r.sr);
  }
}

TEST_CASE("nav_metrics flags unreachable goals") {
  NavGraph g = boundary_graph();
  NavNode island = plain_node("Z", 50.0, 50.0);
  g.add_node(island);
  auto r = nav_metrics(g, {{"e0", {"A", "B"}, "Z", false}});
  CHECK(r.sr == 0.0);
  CHECK(r.unreachable == 1);
  CHECK(r.episodes[0].unreachable);
  CHECK(r.ne == 0.0);  // no finite NE observed
}

TEST_CASE("nav_metrics invariants on random outcomes") {
  World w = generate_world(17, [] {
    WorldSpec s;
    s.num_nodes = 20;
    s.d_sem = 12;
    s.d_vis = 8;
    s.room_labels = {"kitchen", "bedroom", "bathroom", "hallway"};
    s.landmark_labels = {"sofa", "table", "sink", "bed", "plant", "lamp"};
    return s;
  }());
  std::vector<std::string> ids;
  for (const auto& [id, n] : w.graph.nodes()) ids.push_back(id);
  Rng rng(4);
  std::vector<NavOutcome> outs;
  for (int i = 0; i < 100; ++i) {
    NavOutcome o;
    o.episode_id = "r" + std::to_string(i);
    std::string cur = ids[static_cast<size_t>(rng.uniform_int(20))];
    o.path.push_back(cur);
    const int steps = rng.uniform_int(6);
    for (int s = 0; s < steps; ++s) {
      const auto& edges = w.graph.edges_from(cur);
      if (edges.empty()) break;
      cur = edges[static_cast<size_t>(rng.uniform_int(static_cast<int>(edges.size())))].to;
      o.path.push_back(cur);
    }
    o.goal = ids[static_cast<size_t>(rng.uniform_int(20))];
    outs.push_back(std::move(o));
  }
  auto r = nav_metrics(w.graph, outs);
  CHECK(r.spl <= r.sr + 1e-12);
  CHECK(r.osr >= r.sr - 1e-12);
  CHECK(r.ne >= 0.0);
  // Purity: identical outcomes give identical report bytes.
  CHECK(nav_metrics(w.graph, outs).to_json() == r.to_json());
}

TEST_CASE("bleu4 hand computations") {
  CHECK(bleu4("walk past the sofa", {"walk past the sofa"}) ==
        doctest::Approx(100.0).epsilon(1e-9));
  CHECK(bleu4("alpha beta gamma delta", {"zeta eta theta iota"}) < 0.01);
  CHECK(bleu4("", {"anything here"}) == 0.0);

  // Hand n-gram count oracle:
  //   candidate "walk past the sofa and stop", reference "walk past the sofa then stop"
  //   p1 = 5/6, p2 = 3/5, p3 = 2/4, p4 = 1/3, brevity penalty 1.
  const double expect =
      100.0 * std::pow((5.0 / 6.0) * (3.0 / 5.0) * (2.0 / 4.0) * (1.0 / 3.0), 0.25);
  CHECK(bleu4("walk past the sofa and stop", {"walk past the sofa then stop"}) ==
        doctest::Approx(expect).epsilon(1e-9));

  CHECK_THROWS_AS(bleu4("a", {}), std::invalid_argument);
}

TEST_CASE("rouge_l hand computations") {
  CHECK(rouge_l("walk past the sofa", {"walk past the sofa"}) ==
        doctest::Approx(100.0).epsilon(1e-9));
  CHECK(rouge_l("alpha beta", {"gamma delta"}) == 0.0);

  // LCS("the cat sat", "the cat lay down") = 2; R = 2/4, P = 2/3, beta = 1.2.
  const double rec = 2.0 / 4.0, prec = 2.0 / 3.0, b2 = 1.2 * 1.2;
  const double expect = 100.0 * (1.0 + b2) * rec * prec / (rec + b2 * prec);
  CHECK(rouge_l("the cat sat", {"the cat lay down"}) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("cider matches an independent scorer on a 3-sentence corpus") {
  const std::vector<std::string> cands = {
      "walk past the sofa",
      "turn left at the lamp",
      "stop in the kitchen",
  };
  const std::vector<std::vector<std::string>> refs = {
      {"walk past the sofa"},
      {"turn right at the lamp"},
      {"wait in the kitchen"},
  };

  // Independent implementation: explicit per-n-gram tf-idf cosine.
  auto tokenize_simple = [](const std::string& s) {
    std::vector<std::string> toks;
    std::string cur;
    for (char c : s) {
      if (c == ' ') {
        if (!cur.empty()) toks.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) toks.push_back(cur);
    return toks;
  };
  auto grams = [&](const std::string& s, int n) {
    std::map<std::string, double> out;
    auto toks = tokenize_simple(s);
    for (size_t i = 0; i + static_cast<size_t>(n) <= toks.size(); ++i) {
      std::string key;
      for (int k = 0; k < n; ++k) key += toks[i + static_cast<size_t>(k)] + "|";
      out[key] += 1.0;
    }
    return out;
  };
  const double logN = std::log(3.0);
  for (size_t i = 0; i < cands.size(); ++i) {
    double total = 0.0;
    for (int n = 1; n <= 4; ++n) {
      std::map<std::string, double> df;
      for (const auto& rset : refs) {
        std::map<std::string, bool> seen;
        for (const auto& r : rset)
          for (const auto& [g, c] : grams(r, n)) seen[g] = true;
        for (const auto& [g, ok] : seen) df[g] += 1.0;
      }
      auto vec = [&](const std::string& s) {
        std::map<std::string, double> v;
        for (const auto& [g, c] : grams(s, n)) {
          const double d = df.count(g) ? df.at(g) : 0.0;
          v[g] = c * (logN - std::log(std::max(1.0, d)));
        }
        return v;
      };
      const auto cv = vec(cands[i]);
      const auto rv = vec(refs[i][0]);
      double cn = 0, rn = 0, dot = 0;
      for (const auto& [g, v] : cv) cn += v * v;
      for (const auto& [g, v] : rv) rn += v * v;
      for (const auto& [g, v] : cv)
        if (rv.count(g)) dot += v * rv.at(g);
      if (cn > 0 && rn > 0) total += dot / (std::sqrt(cn) * std::sqrt(rn));
    }
    const double expect = 100.0 * total / 4.0;
    CHECK(cider(cands, refs)[i] == doctest::Approx(expect).epsilon(1e-6));
  }

  // Identity and disjoint behaviour.
  auto scores = cider(cands, refs);
  CHECK(scores[0] == doctest::Approx(100.0).epsilon(1e-9));  // exact match, unique grams
  CHECK(cider({"xyz abc"}, {{"walk past"}})[0] == 0.0);
}

TEST_CASE("caption metrics are permutation invariant over references") {
  const std::string cand = "walk past the sofa then stop";
  std::vector<std::string> refs = {"walk past the sofa", "go past the sofa and stop",
                                   "head past the couch"};
  std::vector<std::string> shuffled = {refs[2], refs[0], refs[1]};
  CHECK(bleu4(cand, refs) == doctest::Approx(bleu4(cand, shuffled)).epsilon(1e-12));
  CHECK(rouge_l(cand, refs) == doctest::Approx(rouge_l(cand, shuffled)).epsilon(1e-12));
  CHECK(CiderScorer({refs}).score(cand, refs) ==
        doctest::Approx(CiderScorer({shuffled}).score(cand, shuffled)).epsilon(1e-12));
}

TEST_CASE("score_caption dispatch") {
  CHECK(score_caption("bleu4", "a b c d", {"a b c d"}) == doctest::Approx(100.0));
  CHECK(score_caption("rouge_l", "a b", {"a b"}) == doctest::Approx(100.0));
  CHECK(score_caption("cider", "", {"a b"}) == 0.0);
  CHECK_THROWS_AS(score_caption("spice", "a", {"a"}), std::invalid_argument);
}
