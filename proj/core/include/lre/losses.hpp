#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "lre/ops.hpp"
#include "lre/tensor.hpp"

namespace lre::train {

struct LossWeights {
  double lambda_gen = 1.0;
  double lambda_anc = 0.5;
  double lambda_bal = 0.01;
  double temperature = 0.02;

  void validate() const {
    if (temperature <= 0) throw std::invalid_argument("loss weights: temperature must be > 0");
    if (lambda_gen < 0 || lambda_anc < 0 || lambda_bal < 0) {
      throw std::invalid_argument("loss weights: lambdas must be nonnegative");
    }
  }
};

// Bidirectional InfoNCE with in-batch negatives; diagonal entries are the
// positives. Inputs are unit-normalized embeddings stacked as [N, D]; the
// result is the arithmetic mean of the query->target and target->query
// directions.
template <typename S>
TensorT<S> info_nce(const TensorT<S>& query_embs, const TensorT<S>& target_embs, S tau) {
  if (query_embs.rank() != 2 || target_embs.rank() != 2 ||
      query_embs.dim(0) != target_embs.dim(0) || query_embs.dim(1) != target_embs.dim(1)) {
    throw std::invalid_argument("info_nce: query/target shape mismatch");
  }
  const int n = query_embs.dim(0);
  if (n == 0) throw std::invalid_argument("info_nce: empty batch");
  for (const TensorT<S>* e : {&query_embs, &target_embs}) {
    for (int i = 0; i < n; ++i) {
      S norm2 = S(0);
      for (int j = 0; j < e->dim(1); ++j) norm2 += e->at(i, j) * e->at(i, j);
      if (std::abs(std::sqrt(static_cast<double>(norm2)) - 1.0) > 1e-3) {
        throw std::invalid_argument("info_nce: inputs must be unit-normalized");
      }
    }
  }
  TensorT<S> sims = scale(matmul_nt(query_embs, target_embs), S(1) / tau);
  std::vector<int> diag(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) diag[static_cast<std::size_t>(i)] = i;
  const std::vector<std::uint8_t> all(static_cast<std::size_t>(n), 1);
  TensorT<S> l_qt = cross_entropy_masked_sum(sims, diag, all);
  TensorT<S> l_tq = cross_entropy_masked_sum(transpose(sims), diag, all);
  return scale(add(l_qt, l_tq), S(0.5) / static_cast<S>(n));
}

// One teacher-forced sequence's suffix logits with its reference tokens and
// supervision mask.
template <typename S>
struct SuffixLogits {
  TensorT<S> logits;                    // [T, V]
  std::vector<int> targets;             // length T
  std::vector<std::uint8_t> mask;       // length T; only post-<elt> tokens
};

// Mean token cross entropy over the masked positions of all given sequences
// (query and positive target of each pair). Empty mask set -> exact 0, so
// the objective keeps its shape at the fully latent stage.
template <typename S>
TensorT<S> ce_suffix_loss(std::span<const SuffixLogits<S>> sequences) {
  std::vector<TensorT<S>> sums;
  long count = 0;
  for (const auto& seq : sequences) {
    if (seq.logits.defined()) {
      if (static_cast<int>(seq.targets.size()) != seq.logits.dim(0) ||
          seq.targets.size() != seq.mask.size()) {
        throw std::invalid_argument("ce_suffix_loss: mask/logits length mismatch");
      }
      sums.push_back(cross_entropy_masked_sum(seq.logits, seq.targets, seq.mask));
      for (auto m : seq.mask) count += m ? 1 : 0;
    }
  }
  if (count == 0) return TensorT<S>::scalar(S(0));
  return scale(add_n(std::span<const TensorT<S>>(sums)), S(1) / static_cast<S>(count));
}

template <typename S>
TensorT<S> ce_suffix_loss(const SuffixLogits<S>& seq) {
  return ce_suffix_loss(std::span<const SuffixLogits<S>>(&seq, 1));
}

// Eq. 8: L = L_CE + lambda_gen L_NCE^gen + lambda_anc L_NCE^anc
//           + lambda_bal L_bal. Undefined branch tensors contribute nothing.
template <typename S>
TensorT<S> total_loss(const TensorT<S>& ce, const ::lre::TensorT<S>& nce_gen,
                      const TensorT<S>& nce_anc, const TensorT<S>& bal,
                      const LossWeights& w) {
  w.validate();
  for (const TensorT<S>* c : {&ce, &nce_gen, &nce_anc, &bal}) {
    if (c->defined() && !std::isfinite(static_cast<double>(c->at(0)))) {
      throw std::domain_error("total_loss: non-finite component");
    }
  }
  TensorT<S> out = ce.defined() ? ce : TensorT<S>::scalar(S(0));
  if (nce_gen.defined()) out = add(out, scale(nce_gen, static_cast<S>(w.lambda_gen)));
  if (nce_anc.defined()) out = add(out, scale(nce_anc, static_cast<S>(w.lambda_anc)));
  if (bal.defined()) out = add(out, scale(bal, static_cast<S>(w.lambda_bal)));
  return out;
}

}  // namespace lre::train
