#include <doctest.h>

#include <cmath>
#include <span>
#include <vector>

#include "lre/adapter.hpp"
#include "lre/gradcheck.hpp"
#include "lre/ops.hpp"
#include "lre/rng.hpp"

using namespace lre;
using namespace lre::model;

namespace {

AdapterConfig tiny_cfg(int experts = 4, int top_k = 2, int steps = 4) {
  AdapterConfig c;
  c.expert_count = experts;
  c.top_k = top_k;
  c.step_count = steps;
  c.dropout_rate = 0.0;
  return c;
}

template <typename S>
void zero_router(AdapterT<S>& a) {
  for (auto& [name, t] : a.named_params()) {
    if (name.find("router") != std::string::npos) {
      std::fill(t->vec().begin(), t->vec().end(), S(0));
    }
  }
}

}  // namespace

TEST_CASE("route: zero router gives uniform weights") {
  AdapterT<float> ad(tiny_cfg(), 8, 3);
  zero_router(ad);
  Rng rng(5);
  auto z = Tensor::randn({8}, rng, 1.0);
  auto c = Tensor::randn({8}, rng, 1.0);
  auto pi = ad.route(z, c, 1);
  for (int i = 0; i < 4; ++i) CHECK(pi.at(i) == doctest::Approx(0.25).epsilon(1e-6));
}

TEST_CASE("route: additive fusion depends on z + c only") {
  AdapterT<float> ad(tiny_cfg(), 8, 3);
  Rng rng(6);
  auto z = Tensor::randn({8}, rng, 1.0);
  auto c = Tensor::randn({8}, rng, 1.0);
  // exactly representable shift so (z+d)+(c-d) == z+c bitwise
  std::vector<float> dv(8);
  for (int i = 0; i < 8; ++i) dv[static_cast<std::size_t>(i)] = (i % 2) ? 0.5f : -0.25f;
  auto zd = z.detached_copy();
  auto cd = c.detached_copy();
  for (int i = 0; i < 8; ++i) {
    zd.at(i) += dv[static_cast<std::size_t>(i)];
    cd.at(i) -= dv[static_cast<std::size_t>(i)];
  }
  auto a = ad.route(z, c, 2);
  auto b = ad.route(zd, cd, 2);
  for (int i = 0; i < 4; ++i) CHECK(a.at(i) == doctest::Approx(b.at(i)).epsilon(1e-5));
}

TEST_CASE("route: matches a hand-evaluated softmax(W [z+c; e] + b)") {
  auto cfg = tiny_cfg(2, 1, 1);
  AdapterT<float> ad(cfg, 2, 9);
  // overwrite all router parameters with known values
  std::vector<float> w = {0.3f, -0.2f,   // input row 0 (fused[0])
                          0.1f, 0.4f,    // fused[1]
                          -0.5f, 0.2f,   // e[0]
                          0.7f, -0.1f};  // e[1]
  for (auto& [name, t] : ad.named_params()) {
    if (name == "adapter.router.weight") t->vec() = w;
    if (name == "adapter.router.bias") t->vec() = {0.05f, -0.05f};
    if (name == "adapter.step_embed.1") t->vec() = {1.0f, -2.0f};
  }
  auto z = Tensor::from_vector({2}, {0.6f, -0.3f});
  auto c = Tensor::from_vector({2}, {-0.1f, 0.8f});
  auto pi = ad.route(z, c, 1);

  const double u0 = 0.5, u1 = 0.5, e0 = 1.0, e1 = -2.0;
  const double l0 = u0 * 0.3 + u1 * 0.1 + e0 * -0.5 + e1 * 0.7 + 0.05;
  const double l1 = u0 * -0.2 + u1 * 0.4 + e0 * 0.2 + e1 * -0.1 - 0.05;
  const double m = std::max(l0, l1);
  const double z0 = std::exp(l0 - m), z1 = std::exp(l1 - m);
  CHECK(pi.at(0) == doctest::Approx(z0 / (z0 + z1)).epsilon(1e-5));
  CHECK(pi.at(1) == doctest::Approx(z1 / (z0 + z1)).epsilon(1e-5));

  SUBCASE("step out of range rejected") {
    CHECK_THROWS_AS((void)ad.route(z, c, 0), std::out_of_range);
    CHECK_THROWS_AS((void)ad.route(z, c, 2), std::out_of_range);
  }
}

TEST_CASE("router logits are affine in [z+c ; e]") {
  AdapterT<float> ad(tiny_cfg(), 8, 11);
  Rng rng(3);
  auto z1 = Tensor::randn({8}, rng, 1.0);
  auto z2 = Tensor::randn({8}, rng, 1.0);
  auto c0 = Tensor::zeros({8});
  auto l1 = ad.router_logits(z1, c0, 1);
  auto l2 = ad.router_logits(z2, c0, 1);
  auto lsum = ad.router_logits(add(z1, z2), c0, 1);
  auto l0 = ad.router_logits(Tensor::zeros({8}), c0, 1);
  // f(x+y) - f(x) - f(y) + f(0) == 0 for affine f
  for (int i = 0; i < 4; ++i) {
    CHECK(lsum.at(i) - l1.at(i) - l2.at(i) + l0.at(i) == doctest::Approx(0.0).epsilon(1e-5));
  }
}

TEST_CASE("select_topk") {
  SUBCASE("takes the largest weights in order") {
    auto rec = select_topk({0.4, 0.3, 0.2, 0.1}, 2);
    CHECK(rec.selected == std::vector<int>{0, 1});
    CHECK(rec.selected_weights[0] == doctest::Approx(0.4));
    CHECK(rec.selected_weights[1] == doctest::Approx(0.3));
  }
  SUBCASE("uniform weights tie-break toward lower index") {
    auto rec = select_topk({0.25, 0.25, 0.25, 0.25}, 2);
    CHECK(rec.selected == std::vector<int>{0, 1});
  }
  SUBCASE("K_r = M_e selects everyone") {
    auto rec = select_topk({0.1, 0.2, 0.3, 0.4}, 4);
    CHECK(rec.selected.size() == 4);
    CHECK(rec.selected == std::vector<int>{3, 2, 1, 0});
  }
}

TEST_CASE("adapt: residual identity at init (zero output projections)") {
  AdapterT<float> ad(tiny_cfg(), 16, 21);
  Rng rng(8);
  auto z = Tensor::randn({16}, rng, 1.0);
  auto c = Tensor::randn({16}, rng, 1.0);
  auto res = ad.adapt(z, c, 1);
  for (int i = 0; i < 16; ++i) CHECK(res.z_adapted.at(i) == z.at(i));
  CHECK(res.record.selected.size() == 2);
  CHECK(res.record.weights.size() == 4);
  double s = 0;
  for (double w : res.record.weights) s += w;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("adapt: empty selection leaves only the shared expert") {
  auto cfg = tiny_cfg();
  cfg.top_k = 0;  // test-only configuration, bypasses validate()
  AdapterT<float> ad(cfg, 8, 22);
  // make the shared expert nonzero so the check is non-trivial
  for (auto& [name, t] : ad.named_params()) {
    if (name.rfind("adapter.shared.w2", 0) == 0) {
      Rng r(77);
      for (auto& v : t->vec()) v = static_cast<float>(r.normal() * 0.1);
    }
  }
  Rng rng(9);
  auto z = Tensor::randn({8}, rng, 1.0);
  auto c = Tensor::randn({8}, rng, 1.0);
  auto res = ad.adapt(z, c, 1);
  CHECK(res.record.selected.empty());

  // expected: z + shared(LN(z))
  bool moved = false;
  for (int i = 0; i < 8; ++i) moved = moved || (res.z_adapted.at(i) != z.at(i));
  CHECK(moved);
}

TEST_CASE("adapt: 2-dim instance matches the hand-composed kernel chain") {
  auto cfg = tiny_cfg(2, 1, 1);
  AdapterT<float> ad(cfg, 2, 31);
  Rng fill(55);
  for (auto& [name, t] : ad.named_params()) {
    for (auto& v : t->vec()) v = static_cast<float>(fill.normal() * 0.4);
  }
  auto z = Tensor::from_vector({2}, {0.9f, -0.4f});
  auto c = Tensor::from_vector({2}, {0.2f, 0.1f});
  auto res = ad.adapt(z, c, 1);

  // hand-compose with the same primitives
  Tensor ln_g, ln_b, s_w1, s_b1, s_w2, s_b2, e_w1, e_b1, e_w2, e_b2;
  for (auto& [name, t] : ad.named_params()) {
    if (name == "adapter.ln.gain") ln_g = *t;
    if (name == "adapter.ln.bias") ln_b = *t;
    if (name == "adapter.shared.w1") s_w1 = *t;
    if (name == "adapter.shared.b1") s_b1 = *t;
    if (name == "adapter.shared.w2") s_w2 = *t;
    if (name == "adapter.shared.b2") s_b2 = *t;
  }
  const int m = res.record.selected[0];
  const std::string ep = "adapter.expert" + std::to_string(m);
  for (auto& [name, t] : ad.named_params()) {
    if (name == ep + ".w1") e_w1 = *t;
    if (name == ep + ".b1") e_b1 = *t;
    if (name == ep + ".w2") e_w2 = *t;
    if (name == ep + ".b2") e_b2 = *t;
  }
  auto zh = layer_norm(z, ln_g, ln_b);
  auto shared = add(matmul(gelu(add(matmul(zh, s_w1), s_b1)), s_w2), s_b2);
  auto expert = add(matmul(gelu(add(matmul(zh, e_w1), e_b1)), e_w2), e_b2);
  const float w = static_cast<float>(res.record.selected_weights[0]);
  for (int i = 0; i < 2; ++i) {
    const float expected = z.at(i) + shared.at(i) + w * expert.at(i);
    CHECK(res.z_adapted.at(i) == doctest::Approx(expected).epsilon(1e-5));
  }
}

TEST_CASE("adapt is deterministic with dropout disabled") {
  AdapterT<float> ad(tiny_cfg(), 8, 33);
  Rng rng(4);
  auto z = Tensor::randn({8}, rng, 1.0);
  auto c = Tensor::randn({8}, rng, 1.0);
  auto r1 = ad.adapt(z, c, 2);
  auto r2 = ad.adapt(z, c, 2);
  for (int i = 0; i < 8; ++i) CHECK(r1.z_adapted.at(i) == r2.z_adapted.at(i));
}

TEST_CASE("balance_loss") {
  SUBCASE("uniform mean routing gives zero") {
    std::vector<Tensor> pis = {Tensor::from_vector({4}, {0.25f, 0.25f, 0.25f, 0.25f}),
                               Tensor::from_vector({4}, {0.25f, 0.25f, 0.25f, 0.25f})};
    CHECK(balance_loss(std::span<const Tensor>(pis)).at(0) == doctest::Approx(0.0));
  }
  SUBCASE("per-input specialization with uniform mean is also zero") {
    std::vector<Tensor> pis = {Tensor::from_vector({2}, {1.0f, 0.0f}),
                               Tensor::from_vector({2}, {0.0f, 1.0f})};
    CHECK(balance_loss(std::span<const Tensor>(pis)).at(0) ==
          doctest::Approx(0.0).epsilon(1e-7));
  }
  SUBCASE("M=4 collapsed routing gives 0.1875") {
    std::vector<double> mean_pi = {1.0, 0.0, 0.0, 0.0};
    CHECK(balance_loss_from_mean(mean_pi) == doctest::Approx(0.1875).epsilon(1e-9));
    std::vector<Tensor> pis = {Tensor::from_vector({4}, {1.0f, 0.0f, 0.0f, 0.0f})};
    CHECK(balance_loss(std::span<const Tensor>(pis)).at(0) ==
          doctest::Approx(0.1875).epsilon(1e-6));
  }
  SUBCASE("M=2 [0.75, 0.25] gives 0.0625") {
    std::vector<double> mean_pi = {0.75, 0.25};
    CHECK(balance_loss_from_mean(mean_pi) == doctest::Approx(0.0625).epsilon(1e-9));
  }
  SUBCASE("empty record set rejected") {
    std::vector<Tensor> none;
    CHECK_THROWS_AS((void)balance_loss(std::span<const Tensor>(none)), std::invalid_argument);
    CHECK_THROWS_AS((void)balance_loss_from_mean(std::span<const double>()),
                    std::invalid_argument);
  }
  SUBCASE("nonnegative, zero only at uniform (random probes)") {
    Rng rng(12);
    for (int t = 0; t < 50; ++t) {
      std::vector<double> p(4);
      double s = 0;
      for (auto& x : p) {
        x = rng.next_double() + 1e-3;
        s += x;
      }
      for (auto& x : p) x /= s;
      const double l = balance_loss_from_mean(p);
      CHECK(l >= 0.0);
      double dev = 0;
      for (double x : p) dev = std::max(dev, std::abs(x - 0.25));
      if (dev > 1e-3) CHECK(l > 0.0);
    }
  }
}

TEST_CASE("adapt gradients pass check_gradients (router, experts, step embeddings)") {
  auto cfg = tiny_cfg(2, 2, 2);
  AdapterT<double> ad(cfg, 4, 71);
  // give output projections real values so gradients are informative
  Rng r(88);
  for (auto& [name, t] : ad.named_params()) {
    if (name.find(".w2") != std::string::npos || name.find(".b2") != std::string::npos) {
      for (auto& v : t->vec()) v = r.normal() * 0.3;
    }
  }
  Rng rng(13);
  auto z0 = Tensor64::randn({4}, rng, 1.0);
  auto c0 = Tensor64::randn({4}, rng, 1.0);

  auto params = ad.named_params();
  std::vector<Tensor64> point;
  std::vector<std::string> names;
  for (auto& [name, t] : params) {
    point.push_back(*t);
    names.push_back(name);
  }
  auto f = [&](const std::vector<Tensor64>& p) {
    for (std::size_t i = 0; i < p.size(); ++i) *params[i].second = p[i];
    auto res = ad.adapt(z0, c0, 1, false, nullptr);
    auto res2 = ad.adapt(res.z_adapted, c0, 2, false, nullptr);
    return mean(mul(res2.z_adapted, res2.z_adapted));
  };
  auto rep = lre::check_gradients(f, point, 1e-4, 1e-6, &names);
  INFO("worst " << rep.worst_coordinate << " rel " << rep.max_relative_error);
  CHECK(rep.passed);
}
