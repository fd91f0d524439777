#include <doctest.h>

#include <cmath>
#include <span>
#include <vector>

#include "lre/losses.hpp"
#include "lre/ops.hpp"
#include "lre/rng.hpp"

using namespace lre;
using namespace lre::train;

namespace {

Tensor unit_rows(std::vector<std::vector<float>> rows) {
  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(rows[0].size());
  std::vector<float> flat;
  for (auto& r : rows) {
    float norm = 0;
    for (float v : r) norm += v * v;
    norm = std::sqrt(norm);
    for (float v : r) flat.push_back(v / norm);
  }
  return Tensor::from_vector({n, d}, flat);
}

}  // namespace

TEST_CASE("info_nce examples") {
  SUBCASE("N = 1 gives zero (single positive, no negatives)") {
    auto q = unit_rows({{1, 0}});
    auto t = unit_rows({{0, 1}});
    CHECK(info_nce(q, t, 1.0f).at(0) == doctest::Approx(0.0).epsilon(1e-7));
  }
  SUBCASE("all-equal similarities give log N per direction") {
    // orthogonal queries against one shared direction: every sim equals 0
    auto q = unit_rows({{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}});
    auto t = unit_rows({{0, 0, 0, 1}, {0, 0, 0, 1}, {0, 0, 0, 1}});
    CHECK(info_nce(q, t, 1.0f).at(0) == doctest::Approx(std::log(3.0)).epsilon(1e-6));
  }
  SUBCASE("N = 2 with sim matrix [[1,.5],[.5,1]] at tau 1") {
    // e1.e1 = 1, e1.e2 = 0.5 for 2-D unit vectors at 60 degrees
    const float c = 0.5f, s = std::sqrt(3.0f) / 2.0f;
    auto q = unit_rows({{1, 0}, {c, s}});
    auto t = unit_rows({{1, 0}, {c, s}});
    const double expected = std::log(1.0 + std::exp(-0.5));
    CHECK(expected == doctest::Approx(0.474076984).epsilon(1e-8));
    CHECK(info_nce(q, t, 1.0f).at(0) == doctest::Approx(expected).epsilon(1e-5));
  }
  SUBCASE("joint permutation invariance") {
    Rng rng(3);
    std::vector<std::vector<float>> qs, ts;
    for (int i = 0; i < 5; ++i) {
      std::vector<float> a(6), b(6);
      for (auto& v : a) v = static_cast<float>(rng.normal());
      for (auto& v : b) v = static_cast<float>(rng.normal());
      qs.push_back(a);
      ts.push_back(b);
    }
    auto base = info_nce(unit_rows(qs), unit_rows(ts), 0.1f).at(0);
    const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
    std::vector<std::vector<float>> qp, tp;
    for (auto i : perm) {
      qp.push_back(qs[i]);
      tp.push_back(ts[i]);
    }
    auto permuted = info_nce(unit_rows(qp), unit_rows(tp), 0.1f).at(0);
    CHECK(base == doctest::Approx(permuted).epsilon(1e-5));
  }
  SUBCASE("preconditions") {
    auto q = unit_rows({{1, 0}});
    auto bad = Tensor::from_vector({1, 2}, {3.0f, 0.0f});
    CHECK_THROWS_AS((void)info_nce(q, bad, 1.0f), std::invalid_argument);
    auto empty = Tensor::zeros({0, 2});
    CHECK_THROWS_AS((void)info_nce(empty, empty, 1.0f), std::invalid_argument);
  }
}

TEST_CASE("ce_suffix_loss over sequences") {
  SUBCASE("empty mask set gives exact zero") {
    std::vector<SuffixLogits<float>> seqs;
    CHECK(ce_suffix_loss(std::span<const SuffixLogits<float>>(seqs)).at(0) == 0.0f);
    SuffixLogits<float> s;
    s.logits = Tensor::zeros({3, 7});
    s.targets = {1, 2, 3};
    s.mask = {0, 0, 0};
    CHECK(ce_suffix_loss(s).at(0) == 0.0f);
  }
  SUBCASE("uniform logits give ln V per token") {
    SuffixLogits<float> s;
    s.logits = Tensor::zeros({4, 13});
    s.targets = {0, 3, 7, 12};
    s.mask = {1, 1, 1, 1};
    CHECK(ce_suffix_loss(s).at(0) == doctest::Approx(std::log(13.0)).epsilon(1e-6));
  }
  SUBCASE("mean spans multiple sequences") {
    SuffixLogits<float> a, b;
    a.logits = Tensor::zeros({1, 4});
    a.targets = {2};
    a.mask = {1};
    b.logits = Tensor::zeros({2, 4});
    b.logits.at(0, 1) = 50.0f;  // certain and correct
    b.targets = {1, 0};
    b.mask = {1, 0};
    std::vector<SuffixLogits<float>> seqs = {a, b};
    // masked tokens: ln4 and ~0 -> mean = ln4 / 2
    CHECK(ce_suffix_loss(std::span<const SuffixLogits<float>>(seqs)).at(0) ==
          doctest::Approx(std::log(4.0) / 2).epsilon(1e-6));
  }
  SUBCASE("length mismatch rejected") {
    SuffixLogits<float> s;
    s.logits = Tensor::zeros({3, 7});
    s.targets = {1, 2};
    s.mask = {1, 1, 1};
    CHECK_THROWS_AS((void)ce_suffix_loss(s), std::invalid_argument);
  }
}

TEST_CASE("total_loss assembles Eq. 8") {
  LossWeights w;
  w.lambda_gen = 0.5;
  w.lambda_anc = 0.01;
  w.lambda_bal = 0.1;
  SUBCASE("hand-summed combination") {
    auto l = total_loss(Tensor::scalar(1.0f), Tensor::scalar(0.5f), Tensor::scalar(0.5f),
                        Tensor::scalar(0.1f), w);
    CHECK(l.at(0) == doctest::Approx(1.0 + 0.5 * 0.5 + 0.01 * 0.5 + 0.1 * 0.1).epsilon(1e-6));
  }
  SUBCASE("zero weights collapse to the CE term") {
    LossWeights z;
    z.lambda_gen = 0;
    z.lambda_anc = 0;
    z.lambda_bal = 0;
    auto l = total_loss(Tensor::scalar(0.7f), Tensor::scalar(9.0f), Tensor::scalar(9.0f),
                        Tensor::scalar(9.0f), z);
    CHECK(l.at(0) == doctest::Approx(0.7).epsilon(1e-6));
  }
  SUBCASE("undefined branches contribute nothing") {
    auto l = total_loss(Tensor::scalar(0.25f), Tensor::scalar(1.0f), Tensor{}, Tensor{}, w);
    CHECK(l.at(0) == doctest::Approx(0.25 + 0.5).epsilon(1e-6));
  }
  SUBCASE("non-finite component rejected") {
    auto bad = Tensor::scalar(std::numeric_limits<float>::quiet_NaN());
    CHECK_THROWS_AS(
        (void)total_loss(bad, Tensor::scalar(0.0f), Tensor::scalar(0.0f), Tensor::scalar(0.0f), w),
        std::domain_error);
  }
  SUBCASE("invalid temperature rejected") {
    LossWeights bad;
    bad.temperature = 0;
    CHECK_THROWS_AS((void)total_loss(Tensor::scalar(1.0f), Tensor{}, Tensor{}, Tensor{}, bad),
                    std::invalid_argument);
  }
}
