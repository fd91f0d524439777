#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "lre/adapter.hpp"
#include "lre/backbone.hpp"
#include "lre/tensor.hpp"

namespace lre::model {

// The ordered record of one rollout: z^(0)..z^(K), the adapted states fed to
// the backbone, and the per-step routing.
template <typename S>
struct LatentTraceT {
  TensorT<S> z0;
  std::vector<TensorT<S>> latent_states;   // z^(1)..z^(K)
  std::vector<TensorT<S>> adapted_states;  // z~^(0)..z~^(K-1)
  std::vector<TensorT<S>> pi_tensors;      // routing distributions (tape)
  std::vector<RoutingRecord> records;
  int p_slt = 0;  // position of <slt>; z^(k) occupies p_slt + k

  int steps() const { return static_cast<int>(latent_states.size()); }
};

template <typename S>
struct EmbeddingPairT {
  TensorT<S> e_gen;                  // unit vector, the retrieval embedding
  std::optional<TensorT<S>> e_anc;   // unit vector, training only
};

enum class EmbedMode { Train, Infer };

// z^(0) = h_<slt>, unmodified (Eq. 2).
template <typename S>
TensorT<S> init_latent(const PrefixOutputT<S>& prefix) {
  return prefix.h_slt;
}

// K adapted backbone steps over the growing cache (Eq. 3). The cache inside
// `prefix` grows by exactly K entries.
template <typename S>
LatentTraceT<S> rollout(PrefixOutputT<S>& prefix, int k_steps, const AdapterT<S>& adapter,
                        const BackboneT<S>& backbone, bool training = false,
                        Rng* dropout_rng = nullptr) {
  if (k_steps < 0) throw std::invalid_argument("rollout: K must be >= 0");
  if (prefix.cache.current_length != prefix.prefix_length) {
    throw std::invalid_argument("rollout: cache is not positioned at the <slt> boundary");
  }
  LatentTraceT<S> trace;
  trace.z0 = init_latent(prefix);
  trace.p_slt = prefix.slt_pos;
  TensorT<S> z = trace.z0;
  for (int k = 1; k <= k_steps; ++k) {
    auto adapted = adapter.adapt(z, prefix.anchor_state, k, training, dropout_rng);
    trace.adapted_states.push_back(adapted.z_adapted);
    if (adapted.pi.defined()) {
      trace.pi_tensors.push_back(adapted.pi);
      trace.records.push_back(adapted.record);
    }
    z = backbone.step(adapted.z_adapted, prefix.cache, trace.p_slt + k);
    trace.latent_states.push_back(z);
  }
  return trace;
}

// Closes the latent block: feeds <elt> then <gen> as ordinary tokens and
// reads the embeddings (Eq. 7). e_anc is computed only in train mode; at
// inference retrieval consumes e_gen alone.
template <typename S>
EmbeddingPairT<S> extract_embeddings(const PrefixOutputT<S>& prefix_const,
                                     LatentTraceT<S>& trace, KVCacheT<S>& cache,
                                     const BackboneT<S>& backbone, EmbedMode mode) {
  const SpecialTokens& sp = backbone.specials();
  const int k = trace.steps();
  const int elt_pos = trace.p_slt + k + 1;
  backbone.step(backbone.embed_token(sp.elt_id), cache, elt_pos);
  TensorT<S> h_gen =
      backbone.step(backbone.embed_token(sp.gen_id), cache, elt_pos + 1);
  EmbeddingPairT<S> pair;
  pair.e_gen = l2_normalize(h_gen);
  if (mode == EmbedMode::Train) {
    pair.e_anc = l2_normalize(prefix_const.anchor_state);
  }
  return pair;
}

// Explicit-CoT baseline path: greedy rationale decoding after <elt>, then
// <gen>, embedding from its hidden state. Returns the generated-token count
// (equals the number of reasoning forward passes). pad_to_max forces exactly
// max_rationale_len decode steps, the fixed-cost variant the efficiency
// protocol uses.
template <typename S>
struct ExplicitCotResult {
  TensorT<S> embedding;
  int tokens_generated = 0;
  std::vector<int> tokens;
};

template <typename S>
ExplicitCotResult<S> explicit_cot_embed(PrefixOutputT<S>& prefix,
                                        const BackboneT<S>& backbone,
                                        int max_rationale_len, bool pad_to_max = false) {
  NoGradGuard ng;
  const SpecialTokens& sp = backbone.specials();
  KVCacheT<S>& cache = prefix.cache;
  TensorT<S> h = backbone.step(backbone.embed_token(sp.elt_id), cache, cache.current_length);
  ExplicitCotResult<S> res;
  res.tokens = backbone.decode_greedy(h, cache, max_rationale_len, sp.gen_id, pad_to_max);
  res.tokens_generated = static_cast<int>(res.tokens.size());
  TensorT<S> h_gen =
      backbone.step(backbone.embed_token(sp.gen_id), cache, cache.current_length);
  res.embedding = l2_normalize(h_gen);
  return res;
}

}  // namespace lre::model
