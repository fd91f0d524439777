#include "lre/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lre::eval {

int nearest_candidate(const std::vector<float>& query,
                      const std::vector<std::vector<float>>& candidates) {
  if (candidates.empty()) throw std::invalid_argument("retrieval: empty candidate pool");
  int best = 0;
  double best_sim = -2.0;
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    double sim = 0;
    for (std::size_t i = 0; i < query.size(); ++i) sim += query[i] * candidates[j][i];
    if (sim > best_sim) {
      best_sim = sim;
      best = static_cast<int>(j);
    }
  }
  return best;
}

double hit_at_1(const std::vector<std::vector<float>>& query_embs, const RetrievalPool& pool) {
  if (query_embs.empty()) throw std::invalid_argument("hit_at_1: empty query set");
  long hits = 0;
  for (std::size_t q = 0; q < query_embs.size(); ++q) {
    if (nearest_candidate(query_embs[q], pool.candidates) == pool.gold[q]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(query_embs.size());
}

std::map<Modality, double> hit_at_1_per_modality(
    const std::vector<std::vector<float>>& query_embs, const RetrievalPool& pool) {
  std::map<Modality, long> hits, totals;
  for (std::size_t q = 0; q < query_embs.size(); ++q) {
    const Modality m = pool.query_modality[q];
    totals[m]++;
    if (nearest_candidate(query_embs[q], pool.candidates) == pool.gold[q]) hits[m]++;
  }
  std::map<Modality, double> out;
  for (auto& [m, t] : totals) out[m] = static_cast<double>(hits[m]) / static_cast<double>(t);
  return out;
}

double ndcg_at_k(const std::vector<int>& ranked, const std::vector<double>& relevance, int k) {
  if (k < 1) throw std::invalid_argument("ndcg: k must be >= 1");
  double dcg = 0;
  const int upto = std::min<int>(k, static_cast<int>(ranked.size()));
  for (int r = 0; r < upto; ++r) {
    dcg += relevance[static_cast<std::size_t>(ranked[static_cast<std::size_t>(r)])] /
           std::log2(static_cast<double>(r) + 2.0);
  }
  std::vector<double> ideal = relevance;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double idcg = 0;
  for (int r = 0; r < std::min<int>(k, static_cast<int>(ideal.size())); ++r) {
    idcg += ideal[static_cast<std::size_t>(r)] / std::log2(static_cast<double>(r) + 2.0);
  }
  if (idcg == 0) return 0.0;
  return dcg / idcg;
}

double mean_ndcg_at_k(const std::vector<std::vector<float>>& query_embs,
                      const RetrievalPool& pool, Modality which, int k) {
  double acc = 0;
  long n = 0;
  for (std::size_t q = 0; q < query_embs.size(); ++q) {
    if (pool.query_modality[q] != which) continue;
    // rank candidates by similarity, ties toward the lower index
    std::vector<std::pair<double, int>> scored;
    for (std::size_t j = 0; j < pool.candidates.size(); ++j) {
      double sim = 0;
      for (std::size_t i = 0; i < query_embs[q].size(); ++i) {
        sim += query_embs[q][i] * pool.candidates[j][i];
      }
      scored.emplace_back(-sim, static_cast<int>(j));
    }
    std::sort(scored.begin(), scored.end());
    std::vector<int> ranked;
    for (auto& [negsim, j] : scored) ranked.push_back(j);
    acc += ndcg_at_k(ranked, pool.relevance[q], k);
    ++n;
  }
  return n ? acc / static_cast<double>(n) : 0.0;
}

std::vector<double> graded_relevance(const std::vector<int>& positive,
                                     const std::vector<std::vector<int>>& contents,
                                     bool graded) {
  std::vector<double> rel(contents.size(), 0.0);
  for (std::size_t j = 0; j < contents.size(); ++j) {
    const auto& c = contents[j];
    if (c == positive) {
      rel[j] = graded ? 2.0 : 1.0;
    } else if (graded && c.size() == positive.size()) {
      int diffs = 0;
      for (std::size_t i = 0; i < c.size(); ++i) {
        if (c[i] != positive[i]) ++diffs;
      }
      if (diffs == 1) rel[j] = 1.0;
    }
  }
  return rel;
}

const char* to_string(BenchMode m) {
  switch (m) {
    case BenchMode::Latent: return "latent";
    case BenchMode::Explicit: return "explicit";
    case BenchMode::SinglePass: return "single_pass";
  }
  return "?";
}

BenchMode bench_mode_from_string(const std::string& s) {
  if (s == "latent") return BenchMode::Latent;
  if (s == "explicit") return BenchMode::Explicit;
  if (s == "single_pass") return BenchMode::SinglePass;
  throw std::invalid_argument("unknown bench mode: " + s);
}

void finalize_latency_stats(LatencyReport& rep) {
  auto mean_std = [](const std::vector<double>& xs, double& mean, double& stddev) {
    mean = 0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    stddev = std::sqrt(var);
  };
  mean_std(rep.run_latency_ms, rep.mean_latency_ms, rep.std_latency_ms);
  mean_std(rep.run_throughput, rep.mean_throughput, rep.std_throughput);
}

void ActivationProfile::validate() const {
  for (std::size_t r = 0; r < rates.size(); ++r) {
    long double sum = 0;
    for (double v : rates[r]) {
      if (v < 0.0 || v > 1.0) {
        throw std::logic_error("activation profile: rate outside [0,1]");
      }
      sum += static_cast<long double>(v);
    }
    // each latent step selects exactly top_k specialized experts, so the
    // counts must sum to top_k * steps exactly (integer identity)
    long total = 0;
    for (double v : rates[r]) {
      total += static_cast<long>(std::llround(v * static_cast<double>(latent_steps[r])));
    }
    if (total != static_cast<long>(top_k) * latent_steps[r]) {
      throw std::logic_error("activation profile: selections do not sum to K_r per step");
    }
  }
}

}  // namespace lre::eval
