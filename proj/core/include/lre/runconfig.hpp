#pragma once

#include <string>
#include <vector>

#include "lre/adapter.hpp"
#include "lre/backbone.hpp"
#include "lre/data.hpp"
#include "lre/eval.hpp"
#include "lre/losses.hpp"
#include "lre/trainer.hpp"

namespace lre::run {

// The resolved configuration of one run. Serialized as `key = value` lines
// with a fixed key order; parsing rejects unknown keys outright.
struct RunConfig {
  model::ModelConfig model;
  model::AdapterConfig adapter;
  train::LossWeights loss;
  train::TrainConfig train;

  std::vector<double> curriculum_fractions;  // empty = f_s = s/S rule
  std::vector<int> curriculum_budgets;       // empty = ceil(f_s * K) rule

  std::string data_train_path;
  std::string data_val_path;
  int data_count = 2000;
  int data_val_count = 256;
  std::uint64_t data_seed = 1;
  data::TaskMix task_mix;
  int data_distractors = 7;

  eval::BenchProtocol bench;
  int trajectory_samples = 200;
  std::string output_dir = "runs/out";

  RunConfig();

  static RunConfig parse(const std::string& text);
  static RunConfig load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);  // strict
  std::string serialize() const;
  std::string hash() const;

  void validate() const;

  // the effective stage plan (ablation and overrides applied)
  std::vector<data::StagePlan> stage_plan() const;
  train::ModelWiring wiring() const { return train::apply_ablation(train.ablation); }
};

std::string describe_schema();  // key list with types and defaults, for --help/docs

}  // namespace lre::run
