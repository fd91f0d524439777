#pragma once

#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lre/modality.hpp"
#include "lre/ops.hpp"
#include "lre/rng.hpp"
#include "lre/sequence.hpp"
#include "lre/tensor.hpp"

namespace lre::model {

enum class AnchorPlacement { BeforeSlt, PrefixStart };

struct ModelConfig {
  int hidden_dim = 128;
  int layer_count = 4;
  int head_count = 4;
  int mlp_expansion = 4;
  int vocab_size = 0;
  int max_position = 768;
  double rotary_base = 10000.0;
  int latent_steps = 8;  // K
  AnchorPlacement anchor_placement = AnchorPlacement::BeforeSlt;

  int head_dim() const { return hidden_dim / head_count; }

  void validate() const {
    if (hidden_dim <= 0 || layer_count <= 0 || head_count <= 0 || mlp_expansion <= 0 ||
        vocab_size <= 0 || max_position <= 0) {
      throw std::invalid_argument("model config: all extents must be positive");
    }
    if (hidden_dim % head_count != 0) {
      throw std::invalid_argument("model config: hidden_dim must be divisible by head_count");
    }
    if (head_dim() % 2 != 0) {
      throw std::invalid_argument("model config: head_dim must be even for rotary pairs");
    }
    if (latent_steps < 0) {
      throw std::invalid_argument("model config: latent_steps must be >= 0");
    }
  }
};

// Per-layer append-only key/value history. Entries are whole blocks (one per
// forward call); existing blocks are never touched again.
template <typename S>
struct KVCacheT {
  struct Layer {
    std::vector<TensorT<S>> k_blocks;
    std::vector<TensorT<S>> v_blocks;
  };
  std::vector<Layer> layers;
  int current_length = 0;

  explicit KVCacheT(int layer_count = 0) : layers(static_cast<std::size_t>(layer_count)) {}
};

template <typename S>
struct PrefixOutputT {
  TensorT<S> h_slt;          // hidden at <slt> (latent init, Eq. 2)
  TensorT<S> anchor_state;   // raw hidden at <anchor> (semantic anchor c(x))
  KVCacheT<S> cache;
  int prefix_length = 0;     // L
  int slt_pos = 0;
  int anchor_pos = 0;
};

// Decoder-only causal transformer: pre-norm residual blocks, rotary
// positions, multi-head attention over the growing cache, GELU MLP. One
// class serves both the batched prefix pass and single-position stepping.
template <typename S>
class BackboneT {
 public:
  BackboneT(ModelConfig cfg, SpecialTokens specials, std::uint64_t seed)
      : cfg_(std::move(cfg)), specials_(specials) {
    cfg_.validate();
    specials_.validate(cfg_.vocab_size);
    rope_ = std::make_shared<RopeTable>(
        RopeTable::build(cfg_.max_position, cfg_.head_dim(), cfg_.rotary_base));

    Rng rng(derive_seed(seed, "backbone.init"));
    const int d = cfg_.hidden_dim;
    const int hidden = d * cfg_.mlp_expansion;
    const double w_std = 0.02;

    tok_embed_ = TensorT<S>::randn({cfg_.vocab_size, d}, rng, w_std, true);
    lm_head_ = TensorT<S>::randn({d, cfg_.vocab_size}, rng, w_std, true);
    layers_.resize(static_cast<std::size_t>(cfg_.layer_count));
    for (auto& l : layers_) {
      l.ln1_g = TensorT<S>::full({d}, S(1), true);
      l.ln1_b = TensorT<S>::zeros({d}, true);
      l.wq = TensorT<S>::randn({d, d}, rng, w_std, true);
      l.wk = TensorT<S>::randn({d, d}, rng, w_std, true);
      l.wv = TensorT<S>::randn({d, d}, rng, w_std, true);
      l.wo = TensorT<S>::randn({d, d}, rng, w_std, true);
      l.ln2_g = TensorT<S>::full({d}, S(1), true);
      l.ln2_b = TensorT<S>::zeros({d}, true);
      l.w_up = TensorT<S>::randn({d, hidden}, rng, w_std, true);
      l.b_up = TensorT<S>::zeros({hidden}, true);
      l.w_down = TensorT<S>::randn({hidden, d}, rng, w_std, true);
      l.b_down = TensorT<S>::zeros({d}, true);
    }
    final_ln_g_ = TensorT<S>::full({d}, S(1), true);
    final_ln_b_ = TensorT<S>::zeros({d}, true);
    for (Modality m : {Modality::IMG, Modality::VID, Modality::DOC}) {
      const int raw = raw_feature_dim(m);
      feature_proj_w_[m] = TensorT<S>::randn({raw, d}, rng, w_std, true);
      feature_proj_b_[m] = TensorT<S>::zeros({d}, true);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  const SpecialTokens& specials() const { return specials_; }

  KVCacheT<S> make_cache() const { return KVCacheT<S>(cfg_.layer_count); }

  // Runs T new positions through every layer, appending one K/V block per
  // layer. Returns final-norm hidden states [T, D].
  TensorT<S> forward_block(const TensorT<S>& x, KVCacheT<S>& cache) const {
    if (x.cols() != cfg_.hidden_dim) {
      throw std::invalid_argument("forward_block: input width must equal hidden_dim");
    }
    if (static_cast<int>(cache.layers.size()) != cfg_.layer_count) {
      throw std::invalid_argument("forward_block: cache layer count mismatch");
    }
    const int start = cache.current_length;
    const int t_new = x.rows();
    if (start + t_new > cfg_.max_position) {
      throw std::invalid_argument("forward_block: sequence exceeds max_position");
    }
    TensorT<S> h = x.rank() == 2 ? x : x.reshaped({1, x.dim(0)});
    for (int li = 0; li < cfg_.layer_count; ++li) {
      const Layer& l = layers_[static_cast<std::size_t>(li)];
      auto& cl = cache.layers[static_cast<std::size_t>(li)];
      TensorT<S> a_in = layer_norm(h, l.ln1_g, l.ln1_b);
      TensorT<S> q = rope(matmul(a_in, l.wq), *rope_, start, cfg_.head_count);
      TensorT<S> k = rope(matmul(a_in, l.wk), *rope_, start, cfg_.head_count);
      TensorT<S> v = matmul(a_in, l.wv);
      cl.k_blocks.push_back(k);
      cl.v_blocks.push_back(v);
      TensorT<S> attn = cached_attention(q, cl.k_blocks, cl.v_blocks, start, cfg_.head_count);
      h = add(h, matmul(attn, l.wo));
      TensorT<S> m_in = layer_norm(h, l.ln2_g, l.ln2_b);
      TensorT<S> up = gelu(add_bias(matmul(m_in, l.w_up), l.b_up));
      h = add(h, add_bias(matmul(up, l.w_down), l.b_down));
    }
    cache.current_length = start + t_new;
    return layer_norm(h, final_ln_g_, final_ln_b_);
  }

  // Full causal pass over the prefix; records the <slt> hidden, the raw
  // anchor hidden, and the populated cache.
  PrefixOutputT<S> encode_prefix(const MultimodalSequenceT<S>& seq) const {
    seq.validate(specials_, cfg_.max_position);
    std::vector<TensorT<S>> blocks;
    std::vector<int> token_run;
    auto flush_run = [&]() {
      if (!token_run.empty()) {
        blocks.push_back(embedding_rows(tok_embed_, token_run));
        token_run.clear();
      }
    };
    for (const auto& it : seq.items) {
      if (it.is_features()) {
        flush_run();
        blocks.push_back(it.features);
      } else {
        token_run.push_back(it.token_id);
      }
    }
    flush_run();
    TensorT<S> x = blocks.size() == 1
                       ? blocks[0]
                       : concat_rows(std::span<const TensorT<S>>(blocks));

    PrefixOutputT<S> out;
    out.cache = make_cache();
    TensorT<S> h = forward_block(x, out.cache);
    out.prefix_length = seq.length();
    out.slt_pos = seq.slt_pos();
    out.anchor_pos = seq.anchor_pos();
    out.h_slt = row(h, out.slt_pos);
    out.anchor_state = row(h, out.anchor_pos);
    return out;
  }

  // One-position step: appends exactly one K/V pair per layer.
  TensorT<S> step(const TensorT<S>& input_vec, KVCacheT<S>& cache, int position) const {
    if (position != cache.current_length) {
      throw std::invalid_argument("step: position does not match cache length");
    }
    if (static_cast<int>(input_vec.size()) != cfg_.hidden_dim) {
      throw std::invalid_argument("step: input vector must have hidden_dim entries");
    }
    TensorT<S> h = forward_block(input_vec.reshaped({1, cfg_.hidden_dim}), cache);
    return row(h, 0);
  }

  TensorT<S> embed_token(int token_id) const {
    if (token_id < 0 || token_id >= cfg_.vocab_size) {
      throw std::invalid_argument("embed_token: id out of vocabulary range");
    }
    return embedding_rows(tok_embed_, {token_id}).reshaped({cfg_.hidden_dim});
  }

  TensorT<S> embed_tokens(const std::vector<int>& ids) const {
    return embedding_rows(tok_embed_, ids);
  }

  // Learned linear map from raw payload cells to D-dimensional prefix
  // vectors; one projection per modality.
  TensorT<S> inject_features(Modality m, const std::vector<std::vector<float>>& cells) const {
    const int raw = raw_feature_dim(m);
    if (raw == 0) throw std::invalid_argument("inject_features: TXT payloads carry no cells");
    std::vector<S> flat;
    flat.reserve(cells.size() * static_cast<std::size_t>(raw));
    for (const auto& c : cells) {
      if (static_cast<int>(c.size()) != raw) {
        throw std::invalid_argument("inject_features: cell width does not match modality schema");
      }
      for (float v : c) flat.push_back(static_cast<S>(v));
    }
    TensorT<S> x = TensorT<S>::from_vector({static_cast<int>(cells.size()), raw}, std::move(flat));
    return add_bias(matmul(x, feature_proj_w_.at(m)), feature_proj_b_.at(m));
  }

  TensorT<S> logits(const TensorT<S>& h) const { return matmul(h, lm_head_); }

  // Greedy argmax decoding (ties toward the lower token id), starting from
  // the hidden state of the last fed position, stopping at stop_token or
  // max_len. Every emitted token is stepped into the cache, so the count of
  // generated tokens equals the count of reasoning forward passes.
  // pad_to_max ignores the stop token (fixed-length decoding for the
  // efficiency protocol). Inference only: runs without tape.
  std::vector<int> decode_greedy(const TensorT<S>& last_hidden, KVCacheT<S>& cache,
                                 int max_len, int stop_token,
                                 bool pad_to_max = false) const {
    NoGradGuard ng;
    std::vector<int> out_tokens;
    TensorT<S> h = last_hidden;
    while (static_cast<int>(out_tokens.size()) < max_len) {
      TensorT<S> lg = logits(h);
      const int next = argmax_row(lg, 0);
      if (next == stop_token && !pad_to_max) break;
      out_tokens.push_back(next);
      h = step(embed_token(next), cache, cache.current_length);
    }
    return out_tokens;
  }

  std::vector<std::pair<std::string, TensorT<S>*>> named_params() {
    std::vector<std::pair<std::string, TensorT<S>*>> out;
    out.emplace_back("backbone.tok_embed", &tok_embed_);
    out.emplace_back("backbone.lm_head", &lm_head_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      auto& l = layers_[i];
      const std::string p = "backbone.layer" + std::to_string(i) + ".";
      out.emplace_back(p + "ln1.gain", &l.ln1_g);
      out.emplace_back(p + "ln1.bias", &l.ln1_b);
      out.emplace_back(p + "wq", &l.wq);
      out.emplace_back(p + "wk", &l.wk);
      out.emplace_back(p + "wv", &l.wv);
      out.emplace_back(p + "wo", &l.wo);
      out.emplace_back(p + "ln2.gain", &l.ln2_g);
      out.emplace_back(p + "ln2.bias", &l.ln2_b);
      out.emplace_back(p + "mlp.w_up", &l.w_up);
      out.emplace_back(p + "mlp.b_up", &l.b_up);
      out.emplace_back(p + "mlp.w_down", &l.w_down);
      out.emplace_back(p + "mlp.b_down", &l.b_down);
    }
    out.emplace_back("backbone.final_ln.gain", &final_ln_g_);
    out.emplace_back("backbone.final_ln.bias", &final_ln_b_);
    for (auto& [m, w] : feature_proj_w_) {
      out.emplace_back(std::string("backbone.proj_") + to_string(m) + ".weight", &w);
    }
    for (auto& [m, b] : feature_proj_b_) {
      out.emplace_back(std::string("backbone.proj_") + to_string(m) + ".bias", &b);
    }
    return out;
  }

  TensorT<S>& token_embedding_table() { return tok_embed_; }
  TensorT<S>& feature_projection_weight(Modality m) { return feature_proj_w_.at(m); }
  TensorT<S>& feature_projection_bias(Modality m) { return feature_proj_b_.at(m); }

 private:
  struct Layer {
    TensorT<S> ln1_g, ln1_b;
    TensorT<S> wq, wk, wv, wo;
    TensorT<S> ln2_g, ln2_b;
    TensorT<S> w_up, b_up, w_down, b_down;
  };

  ModelConfig cfg_;
  SpecialTokens specials_;
  std::shared_ptr<RopeTable> rope_;
  TensorT<S> tok_embed_;
  TensorT<S> lm_head_;
  std::vector<Layer> layers_;
  TensorT<S> final_ln_g_, final_ln_b_;
  std::map<Modality, TensorT<S>> feature_proj_w_;
  std::map<Modality, TensorT<S>> feature_proj_b_;
};

using Backbone = BackboneT<float>;

}  // namespace lre::model
