#include "crossmap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "crossmap/text.hpp"

namespace crossmap {

// --- navigation metrics ------------------------------------------------------

MetricsReport nav_metrics(const NavGraph& graph, const std::vector<NavOutcome>& outcomes,
                          double radius) {
  MetricsReport report;
  report.count = static_cast<int>(outcomes.size());
  if (outcomes.empty()) return report;

  // One single-source pass per distinct goal.
  std::map<std::string, std::map<std::string, double>> by_goal;
  for (const NavOutcome& out : outcomes)
    if (!by_goal.count(out.goal)) by_goal[out.goal] = geodesic_distances_from(graph, out.goal);

  double sum_sr = 0.0, sum_ne = 0.0, sum_spl = 0.0, sum_osr = 0.0;
  int ne_count = 0;
  for (const NavOutcome& out : outcomes) {
    if (out.path.empty())
      throw std::invalid_argument("nav_metrics: empty generated path for episode " +
                                  out.episode_id);
    const auto& dist = by_goal.at(out.goal);

    EpisodeScore score;
    score.episode_id = out.episode_id;
    score.truncated = out.truncated;
    score.path = out.path;

    for (size_t i = 0; i + 1 < out.path.size(); ++i) {
      bool found = false;
      for (const NavEdge& e : graph.edges_from(out.path[i])) {
        if (e.to == out.path[i + 1]) {
          score.traversed += e.distance;
          found = true;
          break;
        }
      }
      if (!found)
        throw std::invalid_argument("nav_metrics: path of episode " + out.episode_id +
                                    " uses non-adjacent nodes " + out.path[i] + " -> " +
                                    out.path[i + 1]);
    }

    auto final_it = dist.find(out.path.back());
    if (final_it == dist.end()) {
      score.unreachable = true;
      score.success = false;
    } else {
      score.ne = final_it->second;
      score.success = !out.truncated && score.ne <= radius;
      sum_ne += score.ne;
      ne_count += 1;
    }

    double best = std::numeric_limits<double>::infinity();
    for (const std::string& node : out.path) {
      auto it = dist.find(node);
      if (it != dist.end()) best = std::min(best, it->second);
    }
    score.oracle_success = best <= radius;

    auto start_it = dist.find(out.path.front());
    score.optimal = start_it == dist.end() ? 0.0 : start_it->second;
    if (score.success) {
      if (score.optimal > 0.0) {
        score.spl = score.optimal / std::max(score.traversed, score.optimal);
      } else {
        // Degenerate start-at-goal episode: full credit only for stopping put.
        score.spl = score.traversed == 0.0 ? 1.0 : 0.0;
      }
    }

    sum_sr += score.success ? 1.0 : 0.0;
    sum_osr += score.oracle_success ? 1.0 : 0.0;
    sum_spl += score.spl;
    if (score.unreachable) report.unreachable += 1;
    report.episodes.push_back(std::move(score));
  }

  const double n = static_cast<double>(outcomes.size());
  report.sr = sum_sr / n;
  report.osr = sum_osr / n;
  report.spl = sum_spl / n;
  report.ne = ne_count > 0 ? sum_ne / ne_count : 0.0;
  return report;
}

std::string MetricsReport::to_json() const {
  OrderedJson j;
  j["format_version"] = 1;
  j["count"] = count;
  j["sr"] = sr;
  j["ne"] = ne;
  j["spl"] = spl;
  j["osr"] = osr;
  j["unreachable"] = unreachable;
  OrderedJson eps = OrderedJson::array();
  for (const EpisodeScore& s : episodes) {
    OrderedJson ej;
    ej["id"] = s.episode_id;
    ej["success"] = s.success;
    ej["oracle_success"] = s.oracle_success;
    ej["truncated"] = s.truncated;
    if (s.unreachable)
      ej["ne"] = nullptr;
    else
      ej["ne"] = s.ne;
    ej["spl"] = s.spl;
    ej["traversed"] = s.traversed;
    ej["optimal"] = s.optimal;
    ej["path"] = s.path;
    eps.push_back(std::move(ej));
  }
  j["episodes"] = std::move(eps);
  return j.dump();
}

// --- caption metrics ------------------------------------------------------------

namespace {

using Counts = std::map<std::string, int>;

Counts ngram_counts(const std::vector<std::string>& tokens, int n) {
  Counts out;
  if (static_cast<int>(tokens.size()) < n) return out;
  for (size_t i = 0; i + static_cast<size_t>(n) <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (int k = 1; k < n; ++k) {
      key += '\x1f';
      key += tokens[i + static_cast<size_t>(k)];
    }
    out[key] += 1;
  }
  return out;
}

void require_references(const std::vector<std::string>& references, const char* what) {
  if (references.empty())
    throw std::invalid_argument(std::string(what) + ": at least one reference is required");
}

}  // namespace

double bleu4(const std::string& candidate, const std::vector<std::string>& references) {
  require_references(references, "bleu4");
  const std::vector<std::string> cand = tokenize(candidate);
  if (cand.empty()) return 0.0;

  std::vector<std::vector<std::string>> refs;
  for (const std::string& r : references) refs.push_back(tokenize(r));

  constexpr double kEpsilonSmoothing = 1e-9;  // on zero n-gram matches
  double log_precision_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    const Counts cc = ngram_counts(cand, n);
    Counts clip;
    for (const auto& ref : refs) {
      const Counts rc = ngram_counts(ref, n);
      for (const auto& [gram, count] : rc) {
        auto it = clip.find(gram);
        if (it == clip.end() || it->second < count) clip[gram] = count;
      }
    }
    int matches = 0, total = 0;
    for (const auto& [gram, count] : cc) {
      total += count;
      auto it = clip.find(gram);
      if (it != clip.end()) matches += std::min(count, it->second);
    }
    const double p =
        (matches > 0 ? static_cast<double>(matches) : kEpsilonSmoothing) / std::max(total, 1);
    log_precision_sum += 0.25 * std::log(p);
  }

  // Brevity penalty against the closest reference length (ties to shorter).
  const int c_len = static_cast<int>(cand.size());
  int r_len = static_cast<int>(refs[0].size());
  for (const auto& ref : refs) {
    const int len = static_cast<int>(ref.size());
    const int cur = std::abs(len - c_len), best = std::abs(r_len - c_len);
    if (cur < best || (cur == best && len < r_len)) r_len = len;
  }
  const double bp = c_len >= r_len ? 1.0 : std::exp(1.0 - static_cast<double>(r_len) / c_len);
  return 100.0 * bp * std::exp(log_precision_sum);
}

namespace {

size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double rouge_l(const std::string& candidate, const std::vector<std::string>& references,
               double beta) {
  require_references(references, "rouge_l");
  const std::vector<std::string> cand = tokenize(candidate);
  if (cand.empty()) return 0.0;

  double best = 0.0;
  for (const std::string& reference : references) {
    const std::vector<std::string> ref = tokenize(reference);
    if (ref.empty()) continue;
    const double lcs = static_cast<double>(lcs_length(cand, ref));
    if (lcs == 0.0) continue;
    const double recall = lcs / static_cast<double>(ref.size());
    const double precision = lcs / static_cast<double>(cand.size());
    const double denom = recall + beta * beta * precision;
    if (denom > 0.0) best = std::max(best, (1.0 + beta * beta) * recall * precision / denom);
  }
  return 100.0 * best;
}

CiderScorer::CiderScorer(const std::vector<std::vector<std::string>>& reference_corpus) {
  if (reference_corpus.empty())
    throw std::invalid_argument("CiderScorer: empty reference corpus");
  for (const auto& refs : reference_corpus) {
    for (int n = 1; n <= 4; ++n) {
      std::map<std::string, bool> seen;
      for (const std::string& r : refs)
        for (const auto& [gram, count] : ngram_counts(tokenize(r), n)) seen[gram] = true;
      for (const auto& [gram, present] : seen)
        document_frequency_[n - 1][gram] += 1.0;
    }
  }
  log_num_documents_ = std::log(static_cast<double>(reference_corpus.size()));
}

double CiderScorer::score(const std::string& candidate,
                          const std::vector<std::string>& references) const {
  require_references(references, "cider");
  const std::vector<std::string> cand = tokenize(candidate);
  if (cand.empty()) return 0.0;

  double total = 0.0;
  for (int n = 1; n <= 4; ++n) {
    const auto& df = document_frequency_[n - 1];
    auto tfidf = [&](const std::vector<std::string>& tokens) {
      std::map<std::string, double> vec;
      for (const auto& [gram, count] : ngram_counts(tokens, n)) {
        auto it = df.find(gram);
        const double idf = log_num_documents_ - std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
        vec[gram] = count * idf;
      }
      return vec;
    };
    const auto cv = tfidf(cand);
    double cnorm = 0.0;
    for (const auto& [gram, v] : cv) cnorm += v * v;
    cnorm = std::sqrt(cnorm);

    double sim_sum = 0.0;
    for (const std::string& reference : references) {
      const auto rv = tfidf(tokenize(reference));
      double rnorm = 0.0, dot = 0.0;
      for (const auto& [gram, v] : rv) rnorm += v * v;
      rnorm = std::sqrt(rnorm);
      for (const auto& [gram, v] : cv) {
        auto it = rv.find(gram);
        if (it != rv.end()) dot += v * it->second;
      }
      if (cnorm > 0.0 && rnorm > 0.0) sim_sum += dot / (cnorm * rnorm);
    }
    total += sim_sum / static_cast<double>(references.size());
  }
  return 100.0 * total / 4.0;
}

std::vector<double> cider(const std::vector<std::string>& candidates,
                          const std::vector<std::vector<std::string>>& references) {
  if (candidates.size() != references.size())
    throw std::invalid_argument("cider: candidate/reference count mismatch");
  CiderScorer scorer(references);
  std::vector<double> out;
  out.reserve(candidates.size());
  for (size_t i = 0; i < candidates.size(); ++i)
    out.push_back(scorer.score(candidates[i], references[i]));
  return out;
}

double score_caption(const std::string& metric_id, const std::string& candidate,
                     const std::vector<std::string>& references,
                     const CiderScorer* corpus_scorer) {
  if (metric_id == "bleu4") return bleu4(candidate, references);
  if (metric_id == "rouge_l") return rouge_l(candidate, references);
  if (metric_id == "cider") {
    if (corpus_scorer) return corpus_scorer->score(candidate, references);
    return CiderScorer({references}).score(candidate, references);
  }
  throw std::invalid_argument("score_caption: unknown metric id '" + metric_id + "'");
}

}  // namespace crossmap
