#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lre/ops.hpp"
#include "lre/rng.hpp"
#include "lre/tensor.hpp"

namespace lre::model {

struct AdapterConfig {
  int expert_count = 4;      // M_e specialized experts
  int top_k = 2;             // K_r
  int step_count = 8;        // K (length of the step-embedding table)
  double dropout_rate = 0.1;
  int expert_expansion = 2;  // fixed by design
  bool renormalize_topk = false;  // ablation-harness option; off matches Eq. 5 literally

  void validate() const {
    if (expert_count < 1) throw std::invalid_argument("adapter config: expert_count >= 1");
    if (top_k < 1 || top_k > expert_count) {
      throw std::invalid_argument("adapter config: 1 <= top_k <= expert_count");
    }
    if (step_count < 0) throw std::invalid_argument("adapter config: step_count >= 0");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
      throw std::invalid_argument("adapter config: dropout_rate in [0,1)");
    }
    if (expert_expansion != 2) {
      throw std::invalid_argument("adapter config: expert_expansion is fixed at 2");
    }
  }
};

// Ablation wiring for the adapter (Tables 3 and 5 rows).
struct AdapterWiring {
  bool single_mlp = false;        // one shared MLP instead of the routed mixture
  bool use_anchor = true;         // c(x) input to the router
  bool use_step_embedding = true; // e^(k) input to the router
  bool use_shared_expert = true;  // E_0
};

// Full routing distribution of one latent step plus the top-K_r selection.
// Selected weights are the corresponding entries of pi, not renormalized.
struct RoutingRecord {
  int step = 0;
  std::vector<double> weights;           // pi, length M_e
  std::vector<int> selected;             // K_r indices, by descending weight
  std::vector<double> selected_weights;  // matching pi entries
};

// Largest-weight experts; ties broken toward the lower expert index.
inline RoutingRecord select_topk(const std::vector<double>& pi, int k_r) {
  RoutingRecord rec;
  rec.weights = pi;
  std::vector<int> order(pi.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return pi[static_cast<std::size_t>(a)] >
                                              pi[static_cast<std::size_t>(b)]; });
  const int take = std::min<int>(k_r, static_cast<int>(pi.size()));
  for (int i = 0; i < take; ++i) {
    rec.selected.push_back(order[static_cast<std::size_t>(i)]);
    rec.selected_weights.push_back(pi[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
  }
  return rec;
}

// Semantic-anchor-guided routed transition adapter: per-step routing over
// M_e specialized experts plus an always-on shared expert, residual output.
template <typename S>
class AdapterT {
 public:
  AdapterT(AdapterConfig cfg, int dim, std::uint64_t seed, AdapterWiring wiring = {})
      : cfg_(std::move(cfg)), dim_(dim), wiring_(wiring) {
    Rng rng(derive_seed(seed, "adapter.init"));
    const double w_std = 0.02;
    ln_g_ = TensorT<S>::full({dim_}, S(1), true);
    ln_b_ = TensorT<S>::zeros({dim_}, true);
    shared_ = make_expert(rng);
    if (!wiring_.single_mlp) {
      // Router gets a small random init so routing (and the balance loss)
      // starts off-uniform and the regularizer has something to pull down.
      // Expert output projections stay zero so the adapter is an exact
      // identity at step 0 of training.
      router_w_ = TensorT<S>::randn({2 * dim_, cfg_.expert_count}, rng, w_std, true);
      router_b_ = TensorT<S>::randn({cfg_.expert_count}, rng, w_std, true);
      for (int k = 0; k < cfg_.step_count; ++k) {
        step_embed_.push_back(TensorT<S>::randn({dim_}, rng, w_std, true));
      }
      for (int m = 0; m < cfg_.expert_count; ++m) experts_.push_back(make_expert(rng));
    }
  }

  const AdapterConfig& config() const { return cfg_; }
  const AdapterWiring& wiring() const { return wiring_; }
  int dim() const { return dim_; }

  // Router logits: affine in [z_prev + c(x) ; e^(k)] (Eq. 4 before softmax).
  TensorT<S> router_logits(const TensorT<S>& z_prev, const TensorT<S>& anchor,
                           int step) const {
    check_step(step);
    if (wiring_.single_mlp) {
      throw std::logic_error("router_logits: single-MLP wiring has no router");
    }
    TensorT<S> fused = wiring_.use_anchor ? add(z_prev, anchor) : z_prev;
    TensorT<S> e = wiring_.use_step_embedding
                       ? step_embed_[static_cast<std::size_t>(step - 1)]
                       : TensorT<S>::zeros({dim_});
    TensorT<S> u = concat_vec(fused, e);
    return add(matmul(u, router_w_), router_b_);
  }

  // pi^(k) = softmax(W_r [z + c ; e^(k)] + b_r)
  TensorT<S> route(const TensorT<S>& z_prev, const TensorT<S>& anchor, int step) const {
    return softmax(router_logits(z_prev, anchor, step));
  }

  struct AdaptResult {
    TensorT<S> z_adapted;
    TensorT<S> pi;  // tape tensor, undefined in single-MLP wiring
    RoutingRecord record;
  };

  // z_adapted = z + E_0(LN(z)) + sum_{m in TopK_r(pi)} pi_m E_m(LN(z))
  AdaptResult adapt(const TensorT<S>& z_prev, const TensorT<S>& anchor, int step,
                    bool training = false, Rng* dropout_rng = nullptr) const {
    check_step(step);
    TensorT<S> z_hat = layer_norm(z_prev, ln_g_, ln_b_);
    AdaptResult res;
    if (wiring_.single_mlp) {
      res.z_adapted = add(z_prev, expert_forward(shared_, z_hat, training, dropout_rng));
      return res;
    }
    res.pi = route(z_prev, anchor, step);
    std::vector<double> pi_values(res.pi.size());
    for (std::size_t i = 0; i < pi_values.size(); ++i) {
      pi_values[i] = static_cast<double>(res.pi.at(static_cast<int>(i)));
    }
    res.record = select_topk(pi_values, cfg_.top_k);
    res.record.step = step;

    std::vector<TensorT<S>> terms;
    if (wiring_.use_shared_expert) {
      terms.push_back(expert_forward(shared_, z_hat, training, dropout_rng));
    }
    TensorT<S> weight_sum;
    if (cfg_.renormalize_topk && !res.record.selected.empty()) {
      std::vector<TensorT<S>> ws;
      for (int m : res.record.selected) ws.push_back(element(res.pi, m));
      weight_sum = add_n(std::span<const TensorT<S>>(ws));
    }
    for (int m : res.record.selected) {
      TensorT<S> w = element(res.pi, m);
      if (cfg_.renormalize_topk) w = div(w, weight_sum);
      terms.push_back(scale_by(
          expert_forward(experts_[static_cast<std::size_t>(m)], z_hat, training, dropout_rng),
          w));
    }
    res.z_adapted = terms.empty()
                        ? z_prev
                        : add(z_prev, add_n(std::span<const TensorT<S>>(terms)));
    return res;
  }

  std::vector<std::pair<std::string, TensorT<S>*>> named_params() {
    std::vector<std::pair<std::string, TensorT<S>*>> out;
    out.emplace_back("adapter.ln.gain", &ln_g_);
    out.emplace_back("adapter.ln.bias", &ln_b_);
    append_expert(out, "adapter.shared", shared_);
    if (!wiring_.single_mlp) {
      out.emplace_back("adapter.router.weight", &router_w_);
      out.emplace_back("adapter.router.bias", &router_b_);
      for (std::size_t k = 0; k < step_embed_.size(); ++k) {
        out.emplace_back("adapter.step_embed." + std::to_string(k + 1), &step_embed_[k]);
      }
      for (std::size_t m = 0; m < experts_.size(); ++m) {
        append_expert(out, "adapter.expert" + std::to_string(m), experts_[m]);
      }
    }
    return out;
  }

 private:
  struct Expert {
    TensorT<S> w1, b1, w2, b2;
  };

  Expert make_expert(Rng& rng) const {
    Expert e;
    const int hidden = dim_ * cfg_.expert_expansion;
    e.w1 = TensorT<S>::randn({dim_, hidden}, rng, 0.02, true);
    e.b1 = TensorT<S>::zeros({hidden}, true);
    e.w2 = TensorT<S>::zeros({hidden, dim_}, true);  // identity-at-init
    e.b2 = TensorT<S>::zeros({dim_}, true);
    return e;
  }

  // linear(D -> 2D) -> GELU -> dropout -> linear(2D -> D)
  TensorT<S> expert_forward(const Expert& e, const TensorT<S>& z_hat, bool training,
                            Rng* dropout_rng) const {
    TensorT<S> h = gelu(add(matmul(z_hat, e.w1), e.b1));
    if (training && cfg_.dropout_rate > 0.0) {
      if (!dropout_rng) throw std::invalid_argument("adapt: training dropout needs an rng");
      h = dropout(h, cfg_.dropout_rate, *dropout_rng);
    }
    return add(matmul(h, e.w2), e.b2);
  }

  void append_expert(std::vector<std::pair<std::string, TensorT<S>*>>& out,
                     const std::string& prefix, Expert& e) {
    out.emplace_back(prefix + ".w1", &e.w1);
    out.emplace_back(prefix + ".b1", &e.b1);
    out.emplace_back(prefix + ".w2", &e.w2);
    out.emplace_back(prefix + ".b2", &e.b2);
  }

  void check_step(int step) const {
    if (step < 1 || (cfg_.step_count > 0 && step > cfg_.step_count)) {
      throw std::out_of_range("adapter: step index out of range");
    }
  }

  AdapterConfig cfg_;
  int dim_ = 0;
  AdapterWiring wiring_;
  TensorT<S> router_w_, router_b_;
  std::vector<TensorT<S>> step_embed_;
  TensorT<S> ln_g_, ln_b_;
  Expert shared_;
  std::vector<Expert> experts_;
};

// Eq. 6: mean-squared deviation of the average routing mass from uniform.
// Tape version over the route outputs of a batch.
template <typename S>
TensorT<S> balance_loss(std::span<const TensorT<S>> pis) {
  if (pis.empty()) throw std::invalid_argument("balance_loss: empty record set");
  const int m = pis[0].dim(0);
  TensorT<S> mean_pi = scale(add_n(pis), S(1) / static_cast<S>(pis.size()));
  TensorT<S> dev = add_const(mean_pi, S(-1.0 / m));
  return mean(mul(dev, dev));
}

// Plain (non-tape) evaluation from an already-averaged routing mass.
inline double balance_loss_from_mean(std::span<const double> mean_pi) {
  if (mean_pi.empty()) throw std::invalid_argument("balance_loss: empty record set");
  const double m = static_cast<double>(mean_pi.size());
  double acc = 0.0;
  for (double p : mean_pi) acc += (p - 1.0 / m) * (p - 1.0 / m);
  return acc / m;
}

}  // namespace lre::model
