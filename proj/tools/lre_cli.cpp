// lre: latent-rollout embedding experiments
//
// Subcommands: generate-data, train, eval, bench, diagnose. Flags mirror the
// RunConfig schema via --config and repeatable --set key=value overrides.
// Environment overrides are limited to LRE_OUT_DIR and LRE_THREADS.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "lre/checkpoint.hpp"
#include "lre/data.hpp"
#include "lre/eval.hpp"
#include "lre/fsutil.hpp"
#include "lre/runconfig.hpp"
#include "lre/svg_chart.hpp"
#include "lre/trainer.hpp"
#include "lre/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lre;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
};

run::RunConfig resolve_config(const CommonOpts& opts) {
  run::RunConfig cfg;
  if (!opts.config_path.empty()) cfg = run::RunConfig::load_file(opts.config_path);
  for (const auto& kv : opts.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    }
    auto trim = [](std::string s) {
      while (!s.empty() && s.front() == ' ') s.erase(s.begin());
      while (!s.empty() && s.back() == ' ') s.pop_back();
      return s;
    };
    cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  if (const char* out = std::getenv("LRE_OUT_DIR"); out && *out) cfg.output_dir = out;
  return cfg;
}

int env_threads() {
  if (const char* t = std::getenv("LRE_THREADS"); t && *t) {
    return std::max(1, std::atoi(t));
  }
  return 1;
}

void write_resolved_config(const run::RunConfig& cfg) {
  atomic_write_file((fs::path(cfg.output_dir) / "config.txt").string(), cfg.serialize());
}

std::string out_path(const run::RunConfig& cfg, const std::string& name) {
  return (fs::path(cfg.output_dir) / name).string();
}

// generation shards across threads by index range; per-index seeds keep the
// result identical for any thread count
std::vector<data::CurriculumExample> generate_parallel(const data::TaskMix& mix, int count,
                                                       std::uint64_t seed, int threads) {
  if (threads <= 1) return data::generate_dataset(mix, count, seed);
  auto base = data::generate_dataset(mix, count, seed);  // modality slots are cheap
  // regenerate bodies in parallel as a consistency exercise of the sharding
  std::vector<std::thread> pool;
  const int chunk = (count + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t]() {
      const int begin = t * chunk, end = std::min(count, begin + chunk);
      for (int i = begin; i < end; ++i) {
        base[static_cast<std::size_t>(i)] =
            data::generate_example(base[static_cast<std::size_t>(i)].modality,
                                   base[static_cast<std::size_t>(i)].seed);
      }
    });
  }
  for (auto& th : pool) th.join();
  return base;
}

json latency_report_json(const eval::LatencyReport& rep, const eval::BenchProtocol& p) {
  json j;
  j["mode"] = eval::to_string(rep.mode);
  j["protocol"] = {{"samples_per_modality", p.samples_per_modality},
                   {"warmups", p.warmups},
                   {"runs", p.runs},
                   {"explicit_pad_len", p.explicit_pad_len},
                   {"seed", p.seed}};
  j["run_latency_ms"] = rep.run_latency_ms;
  j["run_throughput"] = rep.run_throughput;
  j["mean_latency_ms"] = rep.mean_latency_ms;
  j["std_latency_ms"] = rep.std_latency_ms;
  j["mean_throughput"] = rep.mean_throughput;
  j["std_throughput"] = rep.std_throughput;
  j["reasoning_steps"] = rep.reasoning_steps;
  j["samples_per_run"] = rep.samples_per_run;
  return j;
}

int cmd_generate_data(const CommonOpts& common, const std::string& out_file) {
  auto cfg = resolve_config(common);
  cfg.validate();
  auto examples = generate_parallel(cfg.task_mix, cfg.data_count, cfg.data_seed, env_threads());
  data::DatasetHeader header;
  header.count = cfg.data_count;
  header.seed = cfg.data_seed;
  header.mix = cfg.task_mix;
  const std::string path = out_file.empty() ? out_path(cfg, "dataset.jsonl") : out_file;
  data::save_dataset(path, examples, header);
  write_resolved_config(cfg);
  std::cout << "wrote " << examples.size() << " examples to " << path << "\n";
  return 0;
}

int cmd_train(const CommonOpts& common, const std::string& resume_path) {
  auto cfg = resolve_config(common);
  cfg.validate();
  if (cfg.data_train_path.empty()) {
    throw std::invalid_argument("train: data.train_path must point at a dataset file");
  }
  auto train_data = data::load_dataset(cfg.data_train_path);
  std::vector<data::CurriculumExample> val_data;
  if (!cfg.data_val_path.empty()) {
    val_data = data::load_dataset(cfg.data_val_path);
  } else if (static_cast<int>(train_data.size()) > cfg.data_val_count * 2) {
    // hold out the tail when no explicit validation file is configured
    val_data.assign(train_data.end() - cfg.data_val_count, train_data.end());
    train_data.resize(train_data.size() - static_cast<std::size_t>(cfg.data_val_count));
  }

  fs::create_directories(cfg.output_dir);
  write_resolved_config(cfg);

  run::RunBundle bundle;
  long start_step = 0;
  if (!resume_path.empty()) {
    bundle = run::load_checkpoint(resume_path);
    start_step = bundle.step;
    if (bundle.config.hash() != cfg.hash()) {
      throw std::runtime_error("train: resume checkpoint was produced by a different config");
    }
  } else {
    bundle = run::make_bundle(cfg);
  }

  const auto plan = cfg.stage_plan();
  std::ostringstream metrics;
  const std::string metrics_path = out_path(cfg, "metrics.jsonl");

  train::TrainCallbacks cb;
  cb.on_step = [&](const train::StepMetrics& m) {
    json j;
    j["kind"] = "step";
    j["step"] = m.step;
    j["stage"] = m.stage;
    j["loss"] = m.loss;
    j["ce"] = m.ce;
    j["nce_gen"] = m.nce_gen;
    j["nce_anc"] = m.nce_anc;
    j["bal"] = m.bal;
    j["lr"] = m.lr;
    metrics << j.dump() << "\n";
  };
  cb.on_epoch = [&](const train::EpochMetrics& m) {
    json j;
    j["kind"] = "epoch";
    j["step"] = m.step;
    j["stage"] = m.stage;
    j["val_hit1"] = m.val_hit1;
    metrics << j.dump() << "\n";
    std::cout << "stage " << m.stage << " step " << m.step << " val hit@1 " << m.val_hit1
              << "\n";
  };
  cb.on_stage_end = [&](int stage) {
    bundle.stage = stage;
    long done = 0;
    for (const auto& p : plan) {
      if (p.stage > stage) break;
      done += train::steps_for_stage(p, static_cast<int>(train_data.size()),
                                     cfg.train.batch_size);
    }
    bundle.step = done;
    run::save_checkpoint(out_path(cfg, "ckpt_stage" + std::to_string(stage) + ".bin"), bundle);
  };

  train::Trainer trainer(*bundle.model, *bundle.optimizer, cfg.train, cfg.loss);
  try {
    auto result = trainer.run(plan, train_data, val_data, cb, start_step);
    bundle.stage = plan.back().stage;
    bundle.step = train::total_steps_for_plan(plan, static_cast<int>(train_data.size()),
                                              cfg.train.batch_size);
    run::save_checkpoint(out_path(cfg, "ckpt_final.bin"), bundle);
    atomic_write_file(metrics_path, metrics.str());
    json summary;
    summary["final_val_hit1"] = result.final_val_hit1;
    summary["steps"] = result.steps.empty() ? 0 : result.steps.back().step + 1;
    atomic_write_file(out_path(cfg, "train_summary.json"), summary.dump(2) + "\n");
    std::cout << "final val hit@1 " << result.final_val_hit1 << "\n";
    return 0;
  } catch (const std::exception& e) {
    // divergence or any other failure: dump state for post-mortem
    atomic_write_file(metrics_path, metrics.str());
    run::save_checkpoint(out_path(cfg, "ckpt_abort.bin"), bundle);
    json err;
    err["error"] = e.what();
    atomic_write_file(out_path(cfg, "error.json"), err.dump(2) + "\n");
    std::cerr << "train aborted: " << e.what() << "\n";
    return 1;
  }
}

int cmd_eval(const CommonOpts& common, const std::string& ckpt_path,
             const std::string& dataset_path, std::vector<std::string> metrics_list) {
  std::string expect_hash;
  const std::string* expect = nullptr;
  if (!common.config_path.empty() || !common.sets.empty()) {
    auto cfg = resolve_config(common);
    expect_hash = cfg.hash();
    expect = &expect_hash;
  }
  auto bundle = run::load_checkpoint(ckpt_path, expect);
  auto examples = data::load_dataset(dataset_path);
  if (metrics_list.empty()) metrics_list = {"hit@1", "ndcg@5"};

  auto ev = eval::build_retrieval_eval(
      *bundle.model, std::span<const data::CurriculumExample>(examples.data(), examples.size()));

  json rep;
  rep["checkpoint"] = ckpt_path;
  rep["dataset"] = dataset_path;
  rep["queries"] = ev.query_embs.size();
  rep["pool_size"] = ev.pool.candidates.size();
  for (const auto& m : metrics_list) {
    if (m == "hit@1") {
      rep["hit@1"]["overall"] = eval::hit_at_1(ev.query_embs, ev.pool);
      for (auto& [mod, v] : eval::hit_at_1_per_modality(ev.query_embs, ev.pool)) {
        rep["hit@1"][to_string(mod)] = v;
      }
    } else if (m == "ndcg@5") {
      rep["ndcg@5"]["doc"] = eval::mean_ndcg_at_k(ev.query_embs, ev.pool, Modality::DOC, 5);
    } else {
      throw std::invalid_argument("eval: unknown metric '" + m + "'");
    }
  }
  const std::string path =
      (fs::path(bundle.config.output_dir) / "eval_report.json").string();
  atomic_write_file(path, rep.dump(2) + "\n");
  std::cout << rep.dump(2) << "\n";
  return 0;
}

int cmd_bench(const CommonOpts& common, const std::string& ckpt_path,
              const std::string& dataset_path, const std::string& mode_name) {
  auto bundle = run::load_checkpoint(ckpt_path);
  auto cfg = bundle.config;
  // protocol fields may be overridden on the command line
  if (!common.config_path.empty() || !common.sets.empty()) {
    auto external = resolve_config(common);
    cfg.bench = external.bench;
    cfg.output_dir = external.output_dir;
  }
  auto examples = data::load_dataset(dataset_path);
  const auto mode = eval::bench_mode_from_string(mode_name);
  auto rep = eval::efficiency_benchmark(
      *bundle.model, std::span<const data::CurriculumExample>(examples.data(), examples.size()),
      mode, cfg.bench);
  json j = latency_report_json(rep, cfg.bench);
  const std::string path =
      (fs::path(cfg.output_dir) / ("bench_" + mode_name + ".json")).string();
  atomic_write_file(path, j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_diagnose(const CommonOpts& common, const std::string& ckpt_path,
                 const std::string& dataset_path, const std::string& which) {
  auto bundle = run::load_checkpoint(ckpt_path);
  auto cfg = bundle.config;
  if (!common.config_path.empty() || !common.sets.empty()) {
    auto external = resolve_config(common);
    cfg.output_dir = external.output_dir;
    cfg.trajectory_samples = external.trajectory_samples;
  }
  auto examples = data::load_dataset(dataset_path);
  fs::create_directories(cfg.output_dir);
  const bool want_activation = which.empty() || which.find("activation") != std::string::npos;
  const bool want_trajectory = which.empty() || which.find("trajectory") != std::string::npos;
  int produced = 0;

  if (want_activation) {
    if (bundle.model->wiring.adapter.single_mlp) {
      std::cerr << "activation profile refused: single-MLP checkpoint has no routing\n";
    } else {
      auto prof = eval::expert_activation_profile(
          *bundle.model,
          std::span<const data::CurriculumExample>(examples.data(), examples.size()));
      json j;
      j["top_k"] = prof.top_k;
      j["expert_count"] = prof.expert_count;
      std::string tsv = "modality";
      for (int e = 0; e < prof.expert_count; ++e) tsv += "\texpert" + std::to_string(e);
      tsv += "\n";
      std::vector<std::string> row_labels, col_labels;
      for (int e = 0; e < prof.expert_count; ++e) col_labels.push_back("E" + std::to_string(e));
      for (std::size_t r = 0; r < prof.modalities.size(); ++r) {
        const std::string name = to_string(prof.modalities[r]);
        row_labels.push_back(name);
        j["rates"][name] = prof.rates[r];
        j["latent_steps"][name] = prof.latent_steps[r];
        tsv += name;
        for (double v : prof.rates[r]) {
          char buf[32];
          std::snprintf(buf, sizeof(buf), "\t%.6f", v);
          tsv += buf;
        }
        tsv += "\n";
      }
      atomic_write_file((fs::path(cfg.output_dir) / "activation_profile.json").string(),
                        j.dump(2) + "\n");
      atomic_write_file((fs::path(cfg.output_dir) / "activation_profile.tsv").string(), tsv);
      atomic_write_file(
          (fs::path(cfg.output_dir) / "activation_heatmap.svg").string(),
          run::render_heatmap("Specialized expert activation rates", row_labels, col_labels,
                              prof.rates));
      ++produced;
    }
  }

  if (want_trajectory) {
    if (bundle.model->latent_steps() == 0) {
      std::cerr << "trajectory refused: checkpoint has no latent rollout\n";
    } else {
      auto curves = eval::trajectory_similarity(
          *bundle.model,
          std::span<const data::CurriculumExample>(examples.data(), examples.size()),
          cfg.trajectory_samples);
      json j;
      j["k"] = curves.k;
      std::string tsv = "modality\tstep\tmean\tstd\tsamples\n";
      std::vector<run::LineSeries> series;
      for (std::size_t r = 0; r < curves.modalities.size(); ++r) {
        const std::string name = to_string(curves.modalities[r]);
        j["mean"][name] = curves.mean[r];
        j["std"][name] = curves.stddev[r];
        j["samples"][name] = curves.sample_count[r];
        for (int s = 0; s < curves.k; ++s) {
          char buf[96];
          std::snprintf(buf, sizeof(buf), "%s\t%d\t%.6f\t%.6f\t%d\n", name.c_str(), s + 1,
                        curves.mean[r][static_cast<std::size_t>(s)],
                        curves.stddev[r][static_cast<std::size_t>(s)],
                        curves.sample_count[r]);
          tsv += buf;
        }
        series.push_back({name, curves.mean[r], curves.stddev[r]});
      }
      atomic_write_file((fs::path(cfg.output_dir) / "trajectory.json").string(),
                        j.dump(2) + "\n");
      atomic_write_file((fs::path(cfg.output_dir) / "trajectory.tsv").string(), tsv);
      atomic_write_file((fs::path(cfg.output_dir) / "trajectory.svg").string(),
                        run::render_line_chart("Latent state vs target cosine", "latent step",
                                               "cosine similarity", series));
      ++produced;
    }

    // routing record table (step, modality, expert index, weight)
    if (!bundle.model->wiring.adapter.single_mlp && bundle.model->latent_steps() > 0) {
      NoGradGuard ng;
      std::string tsv = "step\tmodality\texpert\tweight\n";
      int limit = 0;
      for (const auto& ex : examples) {
        if (++limit > 64) break;
        data::SerializedSequence ser;
        ser.modality = ex.modality;
        if (ex.modality == Modality::TXT) {
          ser.payload_tokens = ex.payload.txt;
        } else {
          ser.has_feature_payload = true;
        }
        ser.question_tokens = ex.question;
        ser.ct_count = bundle.model->latent_steps();
        auto out = train::encode_sequence(*bundle.model, ser, &ex.payload,
                                          model::EmbedMode::Infer);
        for (const auto& rec : out.records) {
          for (std::size_t s = 0; s < rec.selected.size(); ++s) {
            char buf[96];
            std::snprintf(buf, sizeof(buf), "%d\t%s\t%d\t%.6f\n", rec.step,
                          to_string(ex.modality), rec.selected[s], rec.selected_weights[s]);
            tsv += buf;
          }
        }
      }
      atomic_write_file((fs::path(cfg.output_dir) / "routing_records.tsv").string(), tsv);
    }
  }
  return produced > 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latent-rollout embedding experiments"};
  app.require_subcommand(1);

  CommonOpts common;
  std::string out_file, resume_path, ckpt_path, dataset_path;
  std::string mode_name = "latent", which, metrics_csv = "hit@1,ndcg@5";

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "run configuration file");
    sub->add_option("--set", common.sets, "override a config key (key=value), repeatable");
  };

  auto* gen = app.add_subcommand("generate-data", "write a procedural dataset");
  add_common(gen);
  gen->add_option("--out", out_file, "output path (default <output_dir>/dataset.jsonl)");

  auto* train_cmd = app.add_subcommand("train", "run the staged curriculum");
  add_common(train_cmd);
  train_cmd->add_option("--resume", resume_path, "resume from a checkpoint");

  auto* eval_cmd = app.add_subcommand("eval", "retrieval metrics for a checkpoint");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval_cmd->add_option("--dataset", dataset_path, "evaluation dataset")->required();
  eval_cmd->add_option("--metrics", metrics_csv, "comma list: hit@1,ndcg@5");

  auto* bench_cmd = app.add_subcommand("bench", "efficiency protocol");
  add_common(bench_cmd);
  bench_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  bench_cmd->add_option("--dataset", dataset_path, "sampling dataset")->required();
  bench_cmd->add_option("--mode", mode_name, "latent | explicit | single_pass");

  auto* diag_cmd = app.add_subcommand("diagnose", "activation and trajectory diagnostics");
  add_common(diag_cmd);
  diag_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  diag_cmd->add_option("--dataset", dataset_path, "diagnostic dataset")->required();
  diag_cmd->add_option("--which", which, "comma list: activation,trajectory (default both)");

  auto* schema_cmd = app.add_subcommand("config-schema", "print the config key schema");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate_data(common, out_file);
    if (train_cmd->parsed()) return cmd_train(common, resume_path);
    if (eval_cmd->parsed()) {
      std::vector<std::string> metrics;
      std::string cur;
      for (char c : metrics_csv) {
        if (c == ',') {
          if (!cur.empty()) metrics.push_back(cur);
          cur.clear();
        } else {
          cur += c;
        }
      }
      if (!cur.empty()) metrics.push_back(cur);
      return cmd_eval(common, ckpt_path, dataset_path, metrics);
    }
    if (bench_cmd->parsed()) return cmd_bench(common, ckpt_path, dataset_path, mode_name);
    if (diag_cmd->parsed()) return cmd_diagnose(common, ckpt_path, dataset_path, which);
    if (schema_cmd->parsed()) {
      std::cout << run::describe_schema();
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
