#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lre/data.hpp"
#include "lre/encode.hpp"
#include "lre/losses.hpp"

namespace lre::train {

// Adam with decoupled weight decay over a fixed registry of named tensors.
template <typename S>
class AdamW {
 public:
  struct Hyper {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW() = default;
  AdamW(Hyper h, std::vector<std::pair<std::string, TensorT<S>*>> params)
      : hyper_(h), params_(std::move(params)) {
    for (auto& [name, p] : params_) {
      m_.emplace_back(p->size(), S(0));
      v_.emplace_back(p->size(), S(0));
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p->zero_grad();
  }

  void step() {
    ++t_;
    const S b1 = static_cast<S>(hyper_.beta1), b2 = static_cast<S>(hyper_.beta2);
    const S corr1 = S(1) - static_cast<S>(std::pow(hyper_.beta1, t_));
    const S corr2 = S(1) - static_cast<S>(std::pow(hyper_.beta2, t_));
    const S lr = static_cast<S>(hyper_.lr), eps = static_cast<S>(hyper_.eps);
    const S wd = static_cast<S>(hyper_.weight_decay);
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      TensorT<S>& p = *params_[pi].second;
      if (!p.has_grad()) continue;
      S* w = p.data();
      const S* g = p.grad().data();
      S* m = m_[pi].data();
      S* v = v_[pi].data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (S(1) - b1) * g[i];
        v[i] = b2 * v[i] + (S(1) - b2) * g[i] * g[i];
        const S mhat = m[i] / corr1;
        const S vhat = v[i] / corr2;
        w[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * w[i]);
      }
    }
  }

  long step_count() const { return t_; }
  void set_step_count(long t) { t_ = t; }
  Hyper& hyper() { return hyper_; }
  const Hyper& hyper() const { return hyper_; }
  const std::vector<std::pair<std::string, TensorT<S>*>>& params() const { return params_; }
  std::vector<S>& moment1(std::size_t i) { return m_[i]; }
  std::vector<S>& moment2(std::size_t i) { return v_[i]; }

 private:
  Hyper hyper_;
  std::vector<std::pair<std::string, TensorT<S>*>> params_;
  std::vector<std::vector<S>> m_, v_;
  long t_ = 0;
};

struct TrainConfig {
  int batch_size = 64;
  double learning_rate = 5e-5;
  double weight_decay = 0.01;
  double epochs = 5.0;
  int stages = 4;  // S; the plan has S+1 stages including the explicit warm-up
  std::uint64_t seed = 1;
  AblationFlags ablation;
  int log_every = 1;
  int val_max_queries = 256;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size >= 1");
    if (epochs <= 0) throw std::invalid_argument("train config: epochs > 0");
    if (stages < 1) throw std::invalid_argument("train config: stages >= 1");
    if (learning_rate <= 0) throw std::invalid_argument("train config: learning rate > 0");
  }
};

struct StepMetrics {
  long step = 0;
  int stage = 0;
  double loss = 0, ce = 0, nce_gen = 0, nce_anc = 0, bal = 0;
  double lr = 0;
};

struct EpochMetrics {
  long step = 0;
  int stage = 0;
  double val_hit1 = 0;
};

struct TrainResult {
  std::vector<StepMetrics> steps;
  std::vector<EpochMetrics> epochs;
  double final_val_hit1 = 0;
};

// One optimizer step's worth of loss over a batch of pairs: both sides of
// every pair run the stage-appropriate serialization; the four loss pieces
// follow Eq. 1 (both embeddings), the suffix CE, and Eq. 6.
template <typename S>
struct BatchResult {
  TensorT<S> loss;
  double ce = 0, nce_gen = 0, nce_anc = 0, bal = 0;
  std::vector<model::RoutingRecord> records;
  std::vector<Modality> record_modality;
  long supervised_tokens = 0;
};

template <typename S>
BatchResult<S> compute_batch_loss(const ModelT<S>& model,
                                  std::span<const data::CurriculumExample* const> batch,
                                  const data::StagePlan& plan, const LossWeights& weights,
                                  Rng* dropout_rng) {
  if (batch.empty()) throw std::invalid_argument("batch: empty");
  const auto sp = model.backbone.specials();
  std::vector<TensorT<S>> qg, tg, qa, ta, pis;
  std::vector<SuffixLogits<S>> suffixes;
  BatchResult<S> res;
  for (const auto* ex : batch) {
    auto ser_q = data::rewrite_for_stage(*ex, plan, sp);
    auto out_q = encode_sequence(model, ser_q, &ex->payload, model::EmbedMode::Train,
                                 dropout_rng);
    auto ser_t = data::serialize_target_for_stage(ex->target, plan, sp);
    auto out_t = encode_sequence(model, ser_t, nullptr, model::EmbedMode::Train, dropout_rng);

    qg.push_back(out_q.e_gen.reshaped({1, out_q.e_gen.dim(0)}));
    tg.push_back(out_t.e_gen.reshaped({1, out_t.e_gen.dim(0)}));
    qa.push_back(out_q.e_anc.reshaped({1, out_q.e_anc.dim(0)}));
    ta.push_back(out_t.e_anc.reshaped({1, out_t.e_anc.dim(0)}));
    for (auto* out : {&out_q, &out_t}) {
      if (out->suffix.logits.defined()) {
        suffixes.push_back(out->suffix);
        res.supervised_tokens += out->supervised_tokens;
      }
      for (auto& pi : out->pi_tensors) pis.push_back(pi);
      for (auto& rec : out->records) {
        res.records.push_back(rec);
        res.record_modality.push_back(out->modality);
      }
    }
  }
  const S tau = static_cast<S>(weights.temperature);
  TensorT<S> nce_gen = info_nce(concat_rows(std::span<const TensorT<S>>(qg)),
                                concat_rows(std::span<const TensorT<S>>(tg)), tau);
  TensorT<S> nce_anc = info_nce(concat_rows(std::span<const TensorT<S>>(qa)),
                                concat_rows(std::span<const TensorT<S>>(ta)), tau);
  TensorT<S> ce = ce_suffix_loss(std::span<const SuffixLogits<S>>(suffixes));
  TensorT<S> bal;
  if (!pis.empty()) bal = model::balance_loss(std::span<const TensorT<S>>(pis));

  res.loss = total_loss(ce, nce_gen, nce_anc, bal, weights);
  res.ce = static_cast<double>(ce.at(0));
  res.nce_gen = static_cast<double>(nce_gen.at(0));
  res.nce_anc = static_cast<double>(nce_anc.at(0));
  res.bal = bal.defined() ? static_cast<double>(bal.at(0)) : 0.0;
  return res;
}

struct TrainCallbacks {
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(const EpochMetrics&)> on_epoch;
  std::function<void(int stage)> on_stage_end;  // fires after each stage finishes
};

// Deterministic schedule: global step g maps to (pass, slot) with a seeded
// permutation per pass, so resuming from any step reproduces the run.
std::vector<int> batch_indices_for_step(long step, int dataset_size, int batch_size,
                                        std::uint64_t seed);
long total_steps_for_plan(const std::vector<data::StagePlan>& plan, int dataset_size,
                          int batch_size);
long steps_for_stage(const data::StagePlan& stage, int dataset_size, int batch_size);

// Runs the stage plan end to end (optionally resuming from state.step).
// Throws on divergence (non-finite loss) after invoking on_diverge.
class Trainer {
 public:
  Trainer(ModelT<float>& model, AdamW<float>& optimizer, const TrainConfig& config,
          const LossWeights& weights);

  TrainResult run(const std::vector<data::StagePlan>& plan,
                  const std::vector<data::CurriculumExample>& train_data,
                  const std::vector<data::CurriculumExample>& val_data,
                  const TrainCallbacks& callbacks = {}, long start_step = 0);

  double validate(const std::vector<data::CurriculumExample>& val_data) const;

 private:
  ModelT<float>& model_;
  AdamW<float>& optimizer_;
  TrainConfig config_;
  LossWeights weights_;
};

}  // namespace lre::train
