#pragma once

#include <chrono>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lre/data.hpp"
#include "lre/encode.hpp"
#include "lre/modality.hpp"

namespace lre::eval {

// Candidate pool shared by all queries of one evaluation set. Candidates are
// deduplicated by content so the gold index is unambiguous even when two
// examples share an answer.
struct RetrievalPool {
  std::vector<std::vector<float>> candidates;       // unit embeddings
  std::vector<std::vector<int>> candidate_content;  // token sequences
  std::vector<int> gold;                            // per query
  std::vector<Modality> query_modality;             // per query
  std::vector<std::vector<double>> relevance;       // per query x candidate (graded for DOC)
};

struct RetrievalEval {
  std::vector<std::vector<float>> query_embs;
  RetrievalPool pool;
};

// exact cosine nearest neighbour; ties toward the lower candidate index
int nearest_candidate(const std::vector<float>& query,
                      const std::vector<std::vector<float>>& candidates);

double hit_at_1(const std::vector<std::vector<float>>& query_embs, const RetrievalPool& pool);
std::map<Modality, double> hit_at_1_per_modality(
    const std::vector<std::vector<float>>& query_embs, const RetrievalPool& pool);

// DCG with log2(rank+1) discount, normalized by the ideal DCG; all-zero
// relevance is defined as 0.
double ndcg_at_k(const std::vector<int>& ranked, const std::vector<double>& relevance, int k);
double mean_ndcg_at_k(const std::vector<std::vector<float>>& query_embs,
                      const RetrievalPool& pool, Modality which, int k);

struct EvalReport {
  double hit1_overall = 0;
  std::map<Modality, double> hit1;
  double ndcg5_doc = 0;
  int query_count = 0;
  int pool_size = 0;
};

// graded relevance: exact positive = 2 for DOC (1 otherwise); DOC candidates
// one token slot away from the positive = 1
std::vector<double> graded_relevance(const std::vector<int>& positive,
                                     const std::vector<std::vector<int>>& contents,
                                     bool graded);

template <typename S>
RetrievalEval build_retrieval_eval(const train::ModelT<S>& model,
                                   std::span<const data::CurriculumExample> examples) {
  RetrievalEval ev;
  std::map<std::vector<int>, int> content_index;
  auto intern = [&](const data::SceneSpec& scene) {
    auto it = content_index.find(scene.txt);
    if (it != content_index.end()) return it->second;
    const int idx = static_cast<int>(ev.pool.candidates.size());
    content_index.emplace(scene.txt, idx);
    ev.pool.candidate_content.push_back(scene.txt);
    ev.pool.candidates.push_back(train::embed_target(model, scene));
    return idx;
  };
  for (const auto& ex : examples) {
    const int gold = intern(ex.target);
    for (const auto& d : ex.distractors) intern(d);
    ev.pool.gold.push_back(gold);
    ev.pool.query_modality.push_back(ex.modality);
    ev.query_embs.push_back(train::embed_query(model, ex));
  }
  for (std::size_t q = 0; q < ev.pool.gold.size(); ++q) {
    const bool graded = ev.pool.query_modality[q] == Modality::DOC;
    ev.pool.relevance.push_back(graded_relevance(
        ev.pool.candidate_content[static_cast<std::size_t>(ev.pool.gold[q])],
        ev.pool.candidate_content, graded));
  }
  return ev;
}

template <typename S>
EvalReport evaluate_retrieval(const train::ModelT<S>& model,
                              std::span<const data::CurriculumExample> examples) {
  auto ev = build_retrieval_eval(model, examples);
  EvalReport rep;
  rep.query_count = static_cast<int>(ev.query_embs.size());
  rep.pool_size = static_cast<int>(ev.pool.candidates.size());
  rep.hit1_overall = hit_at_1(ev.query_embs, ev.pool);
  rep.hit1 = hit_at_1_per_modality(ev.query_embs, ev.pool);
  rep.ndcg5_doc = mean_ndcg_at_k(ev.query_embs, ev.pool, Modality::DOC, 5);
  return rep;
}

// ---------------------------------------------------------------------------
// efficiency protocol
// ---------------------------------------------------------------------------

enum class BenchMode { Latent, Explicit, SinglePass };

const char* to_string(BenchMode m);
BenchMode bench_mode_from_string(const std::string& s);

struct BenchProtocol {
  int samples_per_modality = 500;
  int warmups = 20;
  int runs = 5;
  int explicit_pad_len = 403;
  std::uint64_t seed = 1;
};

struct LatencyReport {
  BenchMode mode = BenchMode::Latent;
  std::vector<double> run_latency_ms;   // per-run mean latency
  std::vector<double> run_throughput;   // per-run samples/s
  double mean_latency_ms = 0, std_latency_ms = 0;
  double mean_throughput = 0, std_throughput = 0;
  long reasoning_steps = 0;  // K for latent, generated tokens for explicit, 0 single-pass
  int samples_per_run = 0;
};

void finalize_latency_stats(LatencyReport& rep);

// Wall-clock per-sample latency over `runs` independently drawn evaluation
// sets, each preceded by `warmups` warm-up iterations. Strictly
// single-threaded; timing covers prefix encoding, rollout/decoding, and
// embedding extraction.
template <typename S>
LatencyReport efficiency_benchmark(const train::ModelT<S>& model,
                                   std::span<const data::CurriculumExample> examples,
                                   BenchMode mode, const BenchProtocol& protocol) {
  if (examples.empty()) throw std::invalid_argument("benchmark: empty sample set");
  if (mode == BenchMode::Latent && model.latent_steps() == 0) {
    throw std::invalid_argument("benchmark: latent mode needs a latent checkpoint (K > 0)");
  }
  NoGradGuard ng;
  std::map<Modality, std::vector<const data::CurriculumExample*>> by_modality;
  for (const auto& ex : examples) by_modality[ex.modality].push_back(&ex);

  auto run_one = [&](const data::CurriculumExample& ex) -> long {
    if (mode == BenchMode::Explicit) {
      auto ser = data::SerializedSequence{};
      ser.modality = ex.modality;
      if (ex.modality == Modality::TXT) {
        ser.payload_tokens = ex.payload.txt;
      } else {
        ser.has_feature_payload = true;
      }
      ser.question_tokens = ex.question;
      auto seq = train::build_prefix_sequence(model, ser, &ex.payload);
      auto prefix = model.backbone.encode_prefix(seq);
      auto res = model::explicit_cot_embed(prefix, model.backbone,
                                           protocol.explicit_pad_len, /*pad_to_max=*/true);
      return res.tokens_generated;
    }
    data::SerializedSequence ser;
    ser.modality = ex.modality;
    if (ex.modality == Modality::TXT) {
      ser.payload_tokens = ex.payload.txt;
    } else {
      ser.has_feature_payload = true;
    }
    ser.question_tokens = ex.question;
    ser.ct_count = mode == BenchMode::Latent ? model.latent_steps() : 0;
    auto out = train::encode_sequence(model, ser, &ex.payload, model::EmbedMode::Infer);
    (void)out;
    return mode == BenchMode::Latent ? model.latent_steps() : 0;
  };

  LatencyReport rep;
  rep.mode = mode;
  for (int run = 0; run < protocol.runs; ++run) {
    Rng rng(derive_seed(protocol.seed, "bench.run", static_cast<std::uint64_t>(run)));
    std::vector<const data::CurriculumExample*> batch;
    for (auto& [m, list] : by_modality) {
      for (int i = 0; i < protocol.samples_per_modality; ++i) {
        batch.push_back(list[static_cast<std::size_t>(
            rng.next_int(0, static_cast<int>(list.size()) - 1))]);
      }
    }
    for (int w = 0; w < protocol.warmups; ++w) {
      (void)run_one(*batch[static_cast<std::size_t>(w % batch.size())]);
    }
    long steps = 0;
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto* ex : batch) steps = run_one(*ex);
    const auto t1 = std::chrono::steady_clock::now();
    const double secs = std::chrono::duration<double>(t1 - t0).count();
    rep.samples_per_run = static_cast<int>(batch.size());
    rep.run_latency_ms.push_back(1000.0 * secs / static_cast<double>(batch.size()));
    rep.run_throughput.push_back(static_cast<double>(batch.size()) / secs);
    rep.reasoning_steps = steps;
  }
  finalize_latency_stats(rep);
  return rep;
}

// ---------------------------------------------------------------------------
// diagnostics
// ---------------------------------------------------------------------------

struct ActivationProfile {
  std::vector<Modality> modalities;
  int expert_count = 0;
  int top_k = 0;
  std::vector<std::vector<double>> rates;  // [modality][expert], each in [0,1]
  std::vector<long> latent_steps;          // per modality

  void validate() const;
};

template <typename S>
ActivationProfile expert_activation_profile(const train::ModelT<S>& model,
                                            std::span<const data::CurriculumExample> examples) {
  if (model.wiring.adapter.single_mlp) {
    throw std::invalid_argument("activation profile: single-MLP checkpoint has no routing");
  }
  if (!model.wiring.use_latent || model.latent_steps() == 0) {
    throw std::invalid_argument("activation profile: needs a latent checkpoint");
  }
  NoGradGuard ng;
  const int m_e = model.adapter.config().expert_count;
  std::map<Modality, std::vector<long>> counts;
  std::map<Modality, long> steps;
  for (const auto& ex : examples) {
    data::SerializedSequence ser;
    ser.modality = ex.modality;
    if (ex.modality == Modality::TXT) {
      ser.payload_tokens = ex.payload.txt;
    } else {
      ser.has_feature_payload = true;
    }
    ser.question_tokens = ex.question;
    ser.ct_count = model.latent_steps();
    auto out = train::encode_sequence(model, ser, &ex.payload, model::EmbedMode::Infer);
    auto& c = counts[ex.modality];
    c.resize(static_cast<std::size_t>(m_e), 0);
    for (const auto& rec : out.records) {
      for (int sel : rec.selected) c[static_cast<std::size_t>(sel)]++;
      steps[ex.modality]++;
    }
  }
  ActivationProfile prof;
  prof.expert_count = m_e;
  prof.top_k = model.adapter.config().top_k;
  for (auto& [m, c] : counts) {
    prof.modalities.push_back(m);
    prof.latent_steps.push_back(steps[m]);
    std::vector<double> rates;
    for (long v : c) rates.push_back(static_cast<double>(v) / static_cast<double>(steps[m]));
    prof.rates.push_back(std::move(rates));
  }
  prof.validate();
  return prof;
}

struct TrajectoryCurves {
  int k = 0;
  std::vector<Modality> modalities;
  std::vector<std::vector<double>> mean;    // [modality][step]
  std::vector<std::vector<double>> stddev;  // population std
  std::vector<int> sample_count;
};

// cosine between each L2-normalized intermediate state and the positive
// target's retrieval embedding; a diagnostic only, no monotonicity implied
template <typename S>
TrajectoryCurves trajectory_similarity(const train::ModelT<S>& model,
                                       std::span<const data::CurriculumExample> examples,
                                       int sample_count = 200) {
  if (!model.wiring.use_latent || model.latent_steps() == 0) {
    throw std::invalid_argument("trajectory: needs a latent checkpoint (K > 0)");
  }
  NoGradGuard ng;
  const int k = model.latent_steps();
  std::map<Modality, std::vector<std::vector<double>>> per_step_values;
  int used = 0;
  for (const auto& ex : examples) {
    if (used >= sample_count) break;
    ++used;
    data::SerializedSequence ser;
    ser.modality = ex.modality;
    if (ex.modality == Modality::TXT) {
      ser.payload_tokens = ex.payload.txt;
    } else {
      ser.has_feature_payload = true;
    }
    ser.question_tokens = ex.question;
    ser.ct_count = k;
    auto out = train::encode_sequence(model, ser, &ex.payload, model::EmbedMode::Infer);
    auto target_e = train::embed_target(model, ex.target);
    auto& buckets = per_step_values[ex.modality];
    buckets.resize(static_cast<std::size_t>(k));
    for (int s = 0; s < k; ++s) {
      const auto& z = out.latent_states[static_cast<std::size_t>(s)];
      double norm = 0;
      for (std::size_t i = 0; i < z.size(); ++i) norm += z.at(static_cast<int>(i)) * z.at(static_cast<int>(i));
      norm = std::sqrt(norm);
      double cosv = 0;
      for (std::size_t i = 0; i < z.size(); ++i) {
        cosv += (z.at(static_cast<int>(i)) / norm) * target_e[i];
      }
      buckets[static_cast<std::size_t>(s)].push_back(cosv);
    }
  }
  TrajectoryCurves curves;
  curves.k = k;
  for (auto& [m, buckets] : per_step_values) {
    curves.modalities.push_back(m);
    curves.sample_count.push_back(static_cast<int>(buckets[0].size()));
    std::vector<double> means, stds;
    for (const auto& vals : buckets) {
      double mu = 0;
      for (double v : vals) mu += v;
      mu /= static_cast<double>(vals.size());
      double var = 0;
      for (double v : vals) var += (v - mu) * (v - mu);
      var /= static_cast<double>(vals.size());
      means.push_back(mu);
      stds.push_back(std::sqrt(var));
    }
    curves.mean.push_back(std::move(means));
    curves.stddev.push_back(std::move(stds));
  }
  return curves;
}

}  // namespace lre::eval
