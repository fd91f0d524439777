#include "lre/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "lre/eval.hpp"

namespace lre::train {

std::vector<int> batch_indices_for_step(long step, int dataset_size, int batch_size,
                                        std::uint64_t seed) {
  const int batches_per_pass = std::max(1, dataset_size / batch_size);
  const long pass = step / batches_per_pass;
  const int slot = static_cast<int>(step % batches_per_pass);

  std::vector<int> order(static_cast<std::size_t>(dataset_size));
  for (int i = 0; i < dataset_size; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, "shuffle", static_cast<std::uint64_t>(pass)));
  for (int i = dataset_size - 1; i > 0; --i) {
    const int j = rng.next_int(0, i);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  const int begin = slot * batch_size;
  const int end = std::min(dataset_size, begin + batch_size);
  return std::vector<int>(order.begin() + begin, order.begin() + end);
}

long steps_for_stage(const data::StagePlan& stage, int dataset_size, int batch_size) {
  const int batches_per_pass = std::max(1, dataset_size / batch_size);
  return std::max<long>(1, std::llround(stage.epochs * batches_per_pass));
}

long total_steps_for_plan(const std::vector<data::StagePlan>& plan, int dataset_size,
                          int batch_size) {
  long total = 0;
  for (const auto& s : plan) total += steps_for_stage(s, dataset_size, batch_size);
  return total;
}

Trainer::Trainer(ModelT<float>& model, AdamW<float>& optimizer, const TrainConfig& config,
                 const LossWeights& weights)
    : model_(model), optimizer_(optimizer), config_(config), weights_(weights) {
  config_.validate();
  weights_.validate();
}

double Trainer::validate(const std::vector<data::CurriculumExample>& val_data) const {
  if (val_data.empty()) return 0.0;
  const std::size_t n =
      std::min<std::size_t>(val_data.size(), static_cast<std::size_t>(config_.val_max_queries));
  auto ev = eval::build_retrieval_eval(
      model_, std::span<const data::CurriculumExample>(val_data.data(), n));
  return eval::hit_at_1(ev.query_embs, ev.pool);
}

TrainResult Trainer::run(const std::vector<data::StagePlan>& plan,
                         const std::vector<data::CurriculumExample>& train_data,
                         const std::vector<data::CurriculumExample>& val_data,
                         const TrainCallbacks& callbacks, long start_step) {
  if (train_data.empty()) throw std::invalid_argument("train: empty dataset");
  const int n = static_cast<int>(train_data.size());
  const int batches_per_pass = std::max(1, n / config_.batch_size);

  TrainResult result;
  long global_step = 0;
  for (const auto& stage : plan) {
    const long stage_steps = steps_for_stage(stage, n, config_.batch_size);
    for (long s = 0; s < stage_steps; ++s, ++global_step) {
      if (global_step < start_step) continue;

      auto idx = batch_indices_for_step(global_step, n, config_.batch_size, config_.seed);
      std::vector<const data::CurriculumExample*> batch;
      for (int i : idx) batch.push_back(&train_data[static_cast<std::size_t>(i)]);

      Rng dropout_rng(derive_seed(config_.seed, "dropout",
                                  static_cast<std::uint64_t>(global_step)));
      optimizer_.zero_grad();
      auto res = compute_batch_loss<float>(
          model_, std::span<const data::CurriculumExample* const>(batch.data(), batch.size()),
          stage, weights_, &dropout_rng);

      const double loss_v = static_cast<double>(res.loss.at(0));
      if (!std::isfinite(loss_v)) {
        throw std::runtime_error("train: loss diverged (non-finite) at step " +
                                 std::to_string(global_step));
      }
      backward(res.loss);
      optimizer_.step();

      StepMetrics m;
      m.step = global_step;
      m.stage = stage.stage;
      m.loss = loss_v;
      m.ce = res.ce;
      m.nce_gen = res.nce_gen;
      m.nce_anc = res.nce_anc;
      m.bal = res.bal;
      m.lr = optimizer_.hyper().lr;
      if (global_step % std::max(1, config_.log_every) == 0 || s + 1 == stage_steps) {
        result.steps.push_back(m);
        if (callbacks.on_step) callbacks.on_step(m);
      }

      // per-epoch validation: end of each pass through the data
      const bool pass_end = (global_step + 1) % batches_per_pass == 0;
      if (pass_end && !val_data.empty()) {
        EpochMetrics em;
        em.step = global_step;
        em.stage = stage.stage;
        em.val_hit1 = validate(val_data);
        result.epochs.push_back(em);
        if (callbacks.on_epoch) callbacks.on_epoch(em);
      }
    }
    if (global_step > start_step && callbacks.on_stage_end) {
      callbacks.on_stage_end(stage.stage);
    }
  }
  result.final_val_hit1 = val_data.empty() ? 0.0 : validate(val_data);
  return result;
}

}  // namespace lre::train
