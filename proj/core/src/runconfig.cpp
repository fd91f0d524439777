#include "lre/runconfig.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "lre/fsutil.hpp"
#include "lre/vocab.hpp"

namespace lre::run {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: expected true/false, got '" + v + "'");
}

std::vector<std::string> split(const std::string& s, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == delim) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

struct KeySpec {
  std::string key;
  std::string doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> keys = [] {
    std::vector<KeySpec> k;
    auto addi = [&](const std::string& key, const std::string& doc,
                    std::function<int&(RunConfig&)> ref) {
      k.push_back({key, doc,
                   [ref](const RunConfig& c) {
                     return std::to_string(ref(const_cast<RunConfig&>(c)));
                   },
                   [ref](RunConfig& c, const std::string& v) { ref(c) = std::stoi(v); }});
    };
    auto addd = [&](const std::string& key, const std::string& doc,
                    std::function<double&(RunConfig&)> ref) {
      k.push_back({key, doc,
                   [ref](const RunConfig& c) {
                     return fmt_double(ref(const_cast<RunConfig&>(c)));
                   },
                   [ref](RunConfig& c, const std::string& v) { ref(c) = std::stod(v); }});
    };
    auto addu = [&](const std::string& key, const std::string& doc,
                    std::function<std::uint64_t&(RunConfig&)> ref) {
      k.push_back({key, doc,
                   [ref](const RunConfig& c) {
                     return std::to_string(ref(const_cast<RunConfig&>(c)));
                   },
                   [ref](RunConfig& c, const std::string& v) { ref(c) = std::stoull(v); }});
    };
    auto addb = [&](const std::string& key, const std::string& doc,
                    std::function<bool&(RunConfig&)> ref) {
      k.push_back({key, doc,
                   [ref](const RunConfig& c) {
                     return ref(const_cast<RunConfig&>(c)) ? "true" : "false";
                   },
                   [ref](RunConfig& c, const std::string& v) { ref(c) = parse_bool(v); }});
    };
    auto adds = [&](const std::string& key, const std::string& doc,
                    std::function<std::string&(RunConfig&)> ref) {
      k.push_back({key, doc,
                   [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); },
                   [ref](RunConfig& c, const std::string& v) { ref(c) = v; }});
    };

    addi("model.hidden_dim", "model width D", [](RunConfig& c) -> int& { return c.model.hidden_dim; });
    addi("model.layers", "transformer layer count", [](RunConfig& c) -> int& { return c.model.layer_count; });
    addi("model.heads", "attention head count", [](RunConfig& c) -> int& { return c.model.head_count; });
    addi("model.mlp_expansion", "backbone MLP expansion", [](RunConfig& c) -> int& { return c.model.mlp_expansion; });
    addi("model.max_position", "maximum sequence length", [](RunConfig& c) -> int& { return c.model.max_position; });
    addd("model.rotary_base", "rotary frequency base", [](RunConfig& c) -> double& { return c.model.rotary_base; });
    addi("model.latent_steps", "latent rollout length K", [](RunConfig& c) -> int& { return c.model.latent_steps; });
    k.push_back({"model.anchor_placement", "before_slt | prefix_start",
                 [](const RunConfig& c) {
                   return c.model.anchor_placement == model::AnchorPlacement::BeforeSlt
                              ? "before_slt"
                              : "prefix_start";
                 },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "before_slt") {
                     c.model.anchor_placement = model::AnchorPlacement::BeforeSlt;
                   } else if (v == "prefix_start") {
                     c.model.anchor_placement = model::AnchorPlacement::PrefixStart;
                   } else {
                     throw std::invalid_argument("config: bad anchor placement '" + v + "'");
                   }
                 }});

    addi("adapter.experts", "specialized expert count M_e", [](RunConfig& c) -> int& { return c.adapter.expert_count; });
    addi("adapter.top_k", "experts selected per step K_r", [](RunConfig& c) -> int& { return c.adapter.top_k; });
    addd("adapter.dropout", "dropout after expert activation", [](RunConfig& c) -> double& { return c.adapter.dropout_rate; });
    addb("adapter.renormalize_topk", "renormalize selected weights", [](RunConfig& c) -> bool& { return c.adapter.renormalize_topk; });

    addd("loss.lambda_gen", "generative InfoNCE weight", [](RunConfig& c) -> double& { return c.loss.lambda_gen; });
    addd("loss.lambda_anc", "anchor InfoNCE weight", [](RunConfig& c) -> double& { return c.loss.lambda_anc; });
    addd("loss.lambda_bal", "balance regularizer weight", [](RunConfig& c) -> double& { return c.loss.lambda_bal; });
    addd("loss.temperature", "InfoNCE temperature", [](RunConfig& c) -> double& { return c.loss.temperature; });

    addi("train.batch_size", "contrastive batch size N", [](RunConfig& c) -> int& { return c.train.batch_size; });
    addd("train.learning_rate", "AdamW learning rate", [](RunConfig& c) -> double& { return c.train.learning_rate; });
    addd("train.weight_decay", "decoupled weight decay", [](RunConfig& c) -> double& { return c.train.weight_decay; });
    addd("train.epochs", "total training epochs", [](RunConfig& c) -> double& { return c.train.epochs; });
    addi("train.stages", "curriculum stage count S", [](RunConfig& c) -> int& { return c.train.stages; });
    addu("train.seed", "root seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
    addi("train.log_every", "metric logging stride", [](RunConfig& c) -> int& { return c.train.log_every; });
    addi("train.val_max_queries", "validation query cap", [](RunConfig& c) -> int& { return c.train.val_max_queries; });

    addb("train.ablation.no_latent", "skip the latent rollout", [](RunConfig& c) -> bool& { return c.train.ablation.no_latent; });
    addb("train.ablation.single_mlp", "one shared MLP, no routing", [](RunConfig& c) -> bool& { return c.train.ablation.single_mlp; });
    addb("train.ablation.no_anchor_routing", "zero c(x) in the router", [](RunConfig& c) -> bool& { return c.train.ablation.no_anchor_routing; });
    addb("train.ablation.no_curriculum", "stage 0 then final jump", [](RunConfig& c) -> bool& { return c.train.ablation.no_curriculum; });
    addb("train.ablation.no_shared_expert", "drop E_0", [](RunConfig& c) -> bool& { return c.train.ablation.no_shared_expert; });
    addb("train.ablation.top1", "top-1 expert selection", [](RunConfig& c) -> bool& { return c.train.ablation.top1; });
    addb("train.ablation.no_step_embedding", "zero e^(k) in the router", [](RunConfig& c) -> bool& { return c.train.ablation.no_step_embedding; });

    k.push_back({"curriculum.custom_fractions", "comma list overriding f_s (empty = s/S)",
                 [](const RunConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.curriculum_fractions.size(); ++i) {
                     if (i) out += ',';
                     out += fmt_double(c.curriculum_fractions[i]);
                   }
                   return out;
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.curriculum_fractions.clear();
                   for (auto& part : split(v, ',')) {
                     if (!trim(part).empty()) c.curriculum_fractions.push_back(std::stod(part));
                   }
                 }});
    k.push_back({"curriculum.custom_budgets", "comma list overriding K_s (empty = ceil rule)",
                 [](const RunConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.curriculum_budgets.size(); ++i) {
                     if (i) out += ',';
                     out += std::to_string(c.curriculum_budgets[i]);
                   }
                   return out;
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.curriculum_budgets.clear();
                   for (auto& part : split(v, ',')) {
                     if (!trim(part).empty()) c.curriculum_budgets.push_back(std::stoi(part));
                   }
                 }});

    adds("data.train_path", "training dataset file", [](RunConfig& c) -> std::string& { return c.data_train_path; });
    adds("data.val_path", "validation dataset file", [](RunConfig& c) -> std::string& { return c.data_val_path; });
    addi("data.count", "generated example count", [](RunConfig& c) -> int& { return c.data_count; });
    addi("data.val_count", "generated validation count", [](RunConfig& c) -> int& { return c.data_val_count; });
    addu("data.seed", "dataset seed", [](RunConfig& c) -> std::uint64_t& { return c.data_seed; });
    k.push_back({"data.task_mix", "txt:IMG:vid:doc shares, e.g. txt:0.25,img:0.25,vid:0.25,doc:0.25",
                 [](const RunConfig& c) {
                   std::string out = "txt:" + fmt_double(c.task_mix.txt);
                   out += ",img:" + fmt_double(c.task_mix.img);
                   out += ",vid:" + fmt_double(c.task_mix.vid);
                   out += ",doc:" + fmt_double(c.task_mix.doc);
                   return out;
                 },
                 [](RunConfig& c, const std::string& v) {
                   for (auto& part : split(v, ',')) {
                     auto kv = split(trim(part), ':');
                     if (kv.size() != 2) {
                       throw std::invalid_argument("config: bad task_mix entry '" + part + "'");
                     }
                     const double share = std::stod(kv[1]);
                     if (kv[0] == "txt") {
                       c.task_mix.txt = share;
                     } else if (kv[0] == "img") {
                       c.task_mix.img = share;
                     } else if (kv[0] == "vid") {
                       c.task_mix.vid = share;
                     } else if (kv[0] == "doc") {
                       c.task_mix.doc = share;
                     } else {
                       throw std::invalid_argument("config: unknown modality '" + kv[0] + "'");
                     }
                   }
                 }});
    addi("data.distractors", "distractor targets per example", [](RunConfig& c) -> int& { return c.data_distractors; });

    addi("bench.samples_per_modality", "samples per modality per run", [](RunConfig& c) -> int& { return c.bench.samples_per_modality; });
    addi("bench.warmups", "warm-up iterations per run", [](RunConfig& c) -> int& { return c.bench.warmups; });
    addi("bench.runs", "independent evaluation sets", [](RunConfig& c) -> int& { return c.bench.runs; });
    addi("bench.explicit_pad_len", "padded rationale length for explicit mode", [](RunConfig& c) -> int& { return c.bench.explicit_pad_len; });
    addu("bench.seed", "benchmark sampling seed", [](RunConfig& c) -> std::uint64_t& { return c.bench.seed; });
    addi("eval.trajectory_samples", "samples for trajectory curves", [](RunConfig& c) -> int& { return c.trajectory_samples; });
    adds("run.output_dir", "output directory", [](RunConfig& c) -> std::string& { return c.output_dir; });
    return k;
  }();
  return keys;
}

}  // namespace

RunConfig::RunConfig() { model.vocab_size = data::Vocab::instance().size(); }

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& spec : schema()) {
    if (spec.key == key) {
      spec.set(*this, value);
      return;
    }
  }
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected 'key = value'");
    }
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::load_file(const std::string& path) { return parse(read_file(path)); }

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& spec : schema()) {
    out += spec.key;
    out += " = ";
    out += spec.get(*this);
    out += '\n';
  }
  return out;
}

std::string RunConfig::hash() const { return hex64(fnv1a64(serialize())); }

void RunConfig::validate() const {
  model.validate();
  adapter.validate();
  loss.validate();
  train.validate();
  task_mix.validate();
  (void)stage_plan();
  if (data_distractors < 1) throw std::invalid_argument("config: data.distractors >= 1");
}

std::vector<data::StagePlan> RunConfig::stage_plan() const {
  const auto w = wiring();
  const int stages = w.stage_count > 0 ? w.stage_count : train.stages;
  return data::make_stage_plan(stages, train.epochs, model.latent_steps,
                               curriculum_fractions.empty() ? nullptr : &curriculum_fractions,
                               curriculum_budgets.empty() ? nullptr : &curriculum_budgets);
}

std::string describe_schema() {
  std::string out;
  for (const auto& spec : schema()) {
    out += spec.key + "  -- " + spec.doc + "\n";
  }
  return out;
}

}  // namespace lre::run
