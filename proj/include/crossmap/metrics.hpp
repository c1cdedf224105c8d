#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crossmap/util.hpp"
#include "crossmap/world.hpp"

namespace crossmap {

// Success radius in meters around the goal, measured as geodesic distance.
constexpr double kSuccessRadius = 3.0;

struct NavOutcome {
  std::string episode_id;
  std::vector<std::string> path;  // visited nodes, starts at the episode start
  std::string goal;
  bool truncated = false;  // ran out of steps without STOP; scored as failure
};

struct EpisodeScore {
  std::string episode_id;
  bool success = false;
  bool oracle_success = false;
  bool unreachable = false;  // goal not reachable from the final node
  bool truncated = false;
  double ne = 0.0;           // geodesic(final, goal); unset when unreachable
  double spl = 0.0;
  double traversed = 0.0;    // sum of traversed edge distances, revisits included
  double optimal = 0.0;      // geodesic(start, goal)
  std::vector<std::string> path;
};

struct MetricsReport {
  double sr = 0.0;
  double ne = 0.0;
  double spl = 0.0;
  double osr = 0.0;
  int count = 0;
  int unreachable = 0;
  std::vector<EpisodeScore> episodes;

  std::string to_json() const;
};

// SR / NE / SPL / OSR over a batch of outcomes. Distances are geodesic along
// the graph. Truncated outcomes are counted as failures regardless of where
// they ended. An unreachable goal marks the episode failed and flagged; its
// NE is excluded from the mean.
MetricsReport nav_metrics(const NavGraph& graph, const std::vector<NavOutcome>& outcomes,
                          double radius = kSuccessRadius);

// --- caption metrics, all scaled to [0, 100] -------------------------------

// Corpus BLEU-4 with uniform 1..4-gram weights, brevity penalty against the
// closest reference length, and add-epsilon smoothing on zero n-gram matches.
double bleu4(const std::string& candidate, const std::vector<std::string>& references);

// LCS F-measure, max over references. beta weights recall over precision.
double rouge_l(const std::string& candidate, const std::vector<std::string>& references,
               double beta = 1.2);

// TF-IDF n-gram cosine (n = 1..4) averaged over references and n. Document
// frequencies come from the reference corpus: one document per reference set.
class CiderScorer {
 public:
  explicit CiderScorer(const std::vector<std::vector<std::string>>& reference_corpus);

  double score(const std::string& candidate, const std::vector<std::string>& references) const;

 private:
  std::map<std::string, double> document_frequency_[4];
  double log_num_documents_ = 0.0;
};

// Per-candidate CIDEr where the corpus is exactly the given reference sets.
std::vector<double> cider(const std::vector<std::string>& candidates,
                          const std::vector<std::vector<std::string>>& references);

// Dispatch by metric id: "bleu4", "rouge_l" or "cider". The cider variant
// treats the given references as the whole corpus; pass a CiderScorer when a
// proper corpus exists.
double score_caption(const std::string& metric_id, const std::string& candidate,
                     const std::vector<std::string>& references,
                     const CiderScorer* corpus_scorer = nullptr);

}  // namespace crossmap
