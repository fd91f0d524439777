#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lre/adapter.hpp"
#include "lre/backbone.hpp"
#include "lre/data.hpp"
#include "lre/losses.hpp"
#include "lre/rollout.hpp"

namespace lre::train {

struct AblationFlags {
  bool no_latent = false;
  bool single_mlp = false;
  bool no_anchor_routing = false;
  bool no_curriculum = false;
  bool no_shared_expert = false;
  bool top1 = false;
  bool no_step_embedding = false;
};

// Resolved wiring after applying the ablation flags.
struct ModelWiring {
  bool use_latent = true;
  model::AdapterWiring adapter;
  int top_k = 0;        // 0 = keep the configured value
  int stage_count = 0;  // 0 = keep the configured value
};

inline ModelWiring apply_ablation(const AblationFlags& f) {
  const bool adapter_detail = f.no_anchor_routing || f.no_shared_expert || f.top1 ||
                              f.no_step_embedding;
  if (f.single_mlp && adapter_detail) {
    throw std::invalid_argument("ablation: single_mlp contradicts router/expert flags");
  }
  if (f.no_latent && (f.single_mlp || adapter_detail)) {
    throw std::invalid_argument("ablation: no_latent contradicts adapter flags");
  }
  ModelWiring w;
  w.use_latent = !f.no_latent;
  w.adapter.single_mlp = f.single_mlp;
  w.adapter.use_anchor = !f.no_anchor_routing;
  w.adapter.use_step_embedding = !f.no_step_embedding;
  w.adapter.use_shared_expert = !f.no_shared_expert;
  if (f.top1) w.top_k = 1;
  if (f.no_curriculum) w.stage_count = 1;
  return w;
}

// Backbone + adapter bundle with resolved wiring.
template <typename S>
struct ModelT {
  model::BackboneT<S> backbone;
  model::AdapterT<S> adapter;
  ModelWiring wiring;

  ModelT(model::ModelConfig mc, model::AdapterConfig ac, const model::SpecialTokens& sp,
         const ModelWiring& w, std::uint64_t seed)
      : backbone(
            [&] {
              mc.validate();
              return mc;
            }(),
            sp, seed),
        adapter(
            [&] {
              ac.validate();
              if (w.top_k > 0) ac.top_k = w.top_k;
              if (ac.step_count < mc.latent_steps) ac.step_count = mc.latent_steps;
              return ac;
            }(),
            mc.hidden_dim, derive_seed(seed, "adapter"), w.adapter),
        wiring(w) {}

  std::vector<std::pair<std::string, TensorT<S>*>> named_params() {
    auto out = backbone.named_params();
    if (wiring.use_latent) {
      auto ap = adapter.named_params();
      out.insert(out.end(), ap.begin(), ap.end());
    }
    return out;
  }

  int latent_steps() const {
    return wiring.use_latent ? backbone.config().latent_steps : 0;
  }
};

using Model = ModelT<float>;

// Everything one stage-serialized sequence produces in a training pass.
template <typename S>
struct EncodeOutput {
  TensorT<S> e_gen;
  TensorT<S> e_anc;  // defined in train mode only
  SuffixLogits<S> suffix;
  long supervised_tokens = 0;
  std::vector<TensorT<S>> pi_tensors;
  std::vector<model::RoutingRecord> records;
  std::vector<TensorT<S>> latent_states;
  Modality modality = Modality::TXT;
  int prefix_length = 0;
};

// Assembles the multimodal prefix for one serialized side.
template <typename S>
model::MultimodalSequenceT<S> build_prefix_sequence(const ModelT<S>& model,
                                                    const data::SerializedSequence& ser,
                                                    const data::SceneSpec* payload) {
  model::MultimodalSequenceT<S> seq;
  const auto& sp = model.backbone.specials();
  const bool anchor_first =
      model.backbone.config().anchor_placement == model::AnchorPlacement::PrefixStart;
  if (anchor_first) {
    seq.push_token(sp.anchor_id);
    seq.anchor_item = static_cast<int>(seq.items.size()) - 1;
  }
  if (ser.has_feature_payload) {
    if (!payload) throw std::invalid_argument("encode: feature payload missing");
    seq.push_features(
        model.backbone.inject_features(ser.modality, payload->feature_cells()),
        ser.modality);
  }
  for (int id : ser.payload_tokens) seq.push_token(id);
  for (int id : ser.question_tokens) seq.push_token(id);
  if (!anchor_first) {
    seq.push_token(sp.anchor_id);
    seq.anchor_item = static_cast<int>(seq.items.size()) - 1;
  }
  seq.push_token(sp.slt_id);
  seq.slt_item = static_cast<int>(seq.items.size()) - 1;
  return seq;
}

// Full stage-aware pass over one serialized side: prefix encoding, latent
// rollout over ct_count positions, teacher-forced suffix block, embeddings
// and the CE pieces.
template <typename S>
EncodeOutput<S> encode_sequence(const ModelT<S>& model, const data::SerializedSequence& ser,
                                const data::SceneSpec* payload, model::EmbedMode mode,
                                Rng* dropout_rng = nullptr) {
  const auto& sp = model.backbone.specials();
  EncodeOutput<S> out;
  out.modality = ser.modality;

  auto seq = build_prefix_sequence(model, ser, payload);
  auto prefix = model.backbone.encode_prefix(seq);
  out.prefix_length = prefix.prefix_length;

  const int k = model.wiring.use_latent ? ser.ct_count : 0;
  auto trace = model::rollout(prefix, k, model.adapter, model.backbone,
                              mode == model::EmbedMode::Train, dropout_rng);
  out.pi_tensors = trace.pi_tensors;
  out.records = trace.records;
  out.latent_states = trace.latent_states;

  // teacher-forced suffix block: <elt> ++ suffix ++ <gen>
  std::vector<int> suffix_ids = {sp.elt_id};
  suffix_ids.insert(suffix_ids.end(), ser.suffix_tokens.begin(), ser.suffix_tokens.end());
  suffix_ids.push_back(sp.gen_id);
  TensorT<S> h = model.backbone.forward_block(model.backbone.embed_tokens(suffix_ids),
                                              prefix.cache);

  const int n_suffix = static_cast<int>(ser.suffix_tokens.size());
  long supervised = 0;
  for (auto m : ser.suffix_supervised) supervised += m ? 1 : 0;
  if (supervised > 0 && mode == model::EmbedMode::Train) {
    // hidden at row j predicts suffix token j (row 0 is <elt>)
    out.suffix.logits = model.backbone.logits(slice_rows(h, 0, n_suffix));
    out.suffix.targets = ser.suffix_tokens;
    out.suffix.mask = ser.suffix_supervised;
    out.supervised_tokens = supervised;
  }

  out.e_gen = l2_normalize(row(h, n_suffix + 1));
  if (mode == model::EmbedMode::Train) {
    out.e_anc = l2_normalize(prefix.anchor_state);
  }
  return out;
}

// Inference-path embedding (fully latent serialization, tape off, e_gen only).
template <typename S>
std::vector<float> embed_for_retrieval(const ModelT<S>& model,
                                       const data::SerializedSequence& ser,
                                       const data::SceneSpec* payload) {
  NoGradGuard ng;
  data::SerializedSequence inference = ser;
  inference.suffix_tokens.clear();
  inference.suffix_supervised.clear();
  inference.ct_count = model.latent_steps();
  auto out = encode_sequence(model, inference, payload, model::EmbedMode::Infer, nullptr);
  std::vector<float> e(out.e_gen.size());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = static_cast<float>(out.e_gen.at(static_cast<int>(i)));
  return e;
}

template <typename S>
std::vector<float> embed_query(const ModelT<S>& model, const data::CurriculumExample& ex) {
  data::SerializedSequence ser;
  ser.modality = ex.modality;
  if (ex.modality == Modality::TXT) {
    ser.payload_tokens = ex.payload.txt;
  } else {
    ser.has_feature_payload = true;
  }
  ser.question_tokens = ex.question;
  return embed_for_retrieval(model, ser, &ex.payload);
}

template <typename S>
std::vector<float> embed_target(const ModelT<S>& model, const data::SceneSpec& target) {
  data::SerializedSequence ser;
  ser.modality = Modality::TXT;
  ser.payload_tokens = target.content_tokens();
  return embed_for_retrieval(model, ser, nullptr);
}

}  // namespace lre::train
