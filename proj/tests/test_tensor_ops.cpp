#include <doctest.h>

#include <cmath>
#include <span>
#include <vector>

#include "lre/gradcheck.hpp"
#include "lre/ops.hpp"
#include "lre/rng.hpp"
#include "lre/tensor.hpp"

using lre::Rng;
using lre::Tensor;
using lre::Tensor64;

namespace {

std::vector<Tensor64> random_points(std::vector<std::vector<int>> shapes, Rng& rng) {
  std::vector<Tensor64> out;
  for (auto& s : shapes) out.push_back(Tensor64::randn(std::move(s), rng, 0.7));
  return out;
}

}  // namespace

TEST_CASE("softmax matches hand values and invariants") {
  SUBCASE("equal logits give a uniform distribution") {
    auto y = lre::softmax(Tensor::from_vector({4}, {0, 0, 0, 0}));
    for (int i = 0; i < 4; ++i) CHECK(y.at(i) == doctest::Approx(0.25).epsilon(1e-6));
  }
  SUBCASE("[ln4,0,0,0] -> [4/7,1/7,1/7,1/7]") {
    auto y = lre::softmax(Tensor::from_vector({4}, {std::log(4.0f), 0, 0, 0}));
    CHECK(y.at(0) == doctest::Approx(4.0 / 7.0).epsilon(1e-6));
    for (int i = 1; i < 4; ++i) CHECK(y.at(i) == doctest::Approx(1.0 / 7.0).epsilon(1e-6));
  }
  SUBCASE("shift invariance") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<float> v(6);
      for (auto& x : v) x = static_cast<float>(rng.normal() * 3.0);
      auto a = lre::softmax(Tensor::from_vector({6}, v));
      const float c = 2.5f;
      for (auto& x : v) x += c;
      auto b = lre::softmax(Tensor::from_vector({6}, v));
      for (int i = 0; i < 6; ++i) CHECK(a.at(i) == doctest::Approx(b.at(i)).epsilon(1e-5));
    }
  }
  SUBCASE("outputs sum to 1 within 1e-6 over random vectors") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
      const int n = rng.next_int(1, 12);
      std::vector<float> v(static_cast<std::size_t>(n));
      for (auto& x : v) x = static_cast<float>(rng.normal() * 10.0);
      auto y = lre::softmax(Tensor::from_vector({n}, v));
      double s = 0;
      for (int i = 0; i < n; ++i) {
        s += y.at(i);
        CHECK(y.at(i) >= 0.0f);
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
  SUBCASE("non-finite input is rejected with a diagnostic") {
    auto bad = Tensor::from_vector({2}, {1.0f, std::numeric_limits<float>::infinity()});
    CHECK_THROWS_AS((void)lre::softmax(bad), std::domain_error);
  }
}

TEST_CASE("layer_norm matches hand values") {
  auto gain = Tensor::full({2}, 1.0f);
  auto bias = Tensor::zeros({2});
  SUBCASE("constant vector maps to zero") {
    auto y = lre::layer_norm(Tensor::from_vector({2}, {3.0f, 3.0f}), gain, bias);
    CHECK(y.at(0) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(y.at(1) == doctest::Approx(0.0).epsilon(1e-6));
  }
  SUBCASE("[1,-1] is already normalized") {
    auto y = lre::layer_norm(Tensor::from_vector({2}, {1.0f, -1.0f}), gain, bias);
    CHECK(y.at(0) == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(y.at(1) == doctest::Approx(-1.0).epsilon(1e-4));
  }
  SUBCASE("zero gain collapses to the bias") {
    auto g0 = Tensor::zeros({3});
    auto b = Tensor::from_vector({3}, {0.5f, 0.5f, 0.5f});
    auto y = lre::layer_norm(Tensor::from_vector({3}, {2.0f, -1.0f, 7.0f}), g0, b);
    for (int i = 0; i < 3; ++i) CHECK(y.at(i) == doctest::Approx(0.5).epsilon(1e-6));
  }
  SUBCASE("shape mismatch rejected") {
    auto g = Tensor::full({3}, 1.0f);
    CHECK_THROWS_AS((void)lre::layer_norm(Tensor::zeros({2}), g, bias),
                    std::invalid_argument);
  }
}

TEST_CASE("gelu: exact erf form") {
  CHECK(lre::gelu(Tensor::scalar(0.0f)).at(0) == doctest::Approx(0.0));
  CHECK(lre::gelu(Tensor::scalar(20.0f)).at(0) == doctest::Approx(20.0).epsilon(1e-6));
  // x = 1 against a separately computed exact-Phi value
  const double expected = 1.0 * 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
  CHECK(lre::gelu(Tensor::scalar(1.0f)).at(0) == doctest::Approx(expected).epsilon(1e-3));
  CHECK(expected == doctest::Approx(0.8413447461).epsilon(1e-9));
}

TEST_CASE("cosine_similarity") {
  auto v = Tensor::from_vector({3}, {1.0f, 2.0f, -1.0f});
  CHECK(lre::cosine_similarity(v, v).at(0) == doctest::Approx(1.0).epsilon(1e-6));
  auto a = Tensor::from_vector({2}, {1.0f, 0.0f});
  auto b = Tensor::from_vector({2}, {0.0f, 1.0f});
  CHECK(lre::cosine_similarity(a, b).at(0) == doctest::Approx(0.0).epsilon(1e-6));
  auto c = Tensor::from_vector({2}, {1.0f, 1.0f});
  CHECK(lre::cosine_similarity(c, a).at(0) ==
        doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-6));
  CHECK_THROWS_AS((void)lre::cosine_similarity(Tensor::zeros({2}), a), std::domain_error);
}

TEST_CASE("check_gradients basics") {
  SUBCASE("f(x) = x.x at x = 3") {
    auto f = [](const std::vector<Tensor64>& p) { return lre::dot(p[0], p[0]); };
    auto rep = lre::check_gradients(f, {Tensor64::scalar(3.0)}, 1e-6);
    CHECK(rep.passed);
    CHECK(rep.max_relative_error < 1e-6);
  }
  SUBCASE("softmax over matmul on a 3x3 instance") {
    Rng rng(42);
    auto pts = random_points({{3, 3}, {3, 3}}, rng);
    auto f = [](const std::vector<Tensor64>& p) {
      auto y = lre::softmax(lre::matmul(p[0], p[1]));
      // weighted sum keeps the probe scalar-valued but shape-sensitive
      auto w = Tensor64::from_vector({9}, {0.3, -1.2, 0.7, 0.1, 0.9, -0.4, 1.1, -0.2, 0.5});
      return lre::dot(y.reshaped({9}), w);
    };
    auto rep = lre::check_gradients(f, pts, 1e-4);
    INFO("worst " << rep.worst_coordinate << " analytic " << rep.analytic_at_worst
                  << " numeric " << rep.numeric_at_worst);
    CHECK(rep.passed);
  }
  SUBCASE("a corrupted gradient fails with the worst coordinate reported") {
    // custom op whose declared backward is deliberately wrong
    auto broken_square = [](const Tensor64& x) {
      auto out = Tensor64::make_op_output(x.shape(), {x});
      for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * x.data()[i];
      if (out.node()) {
        auto og = out.grad_ptr(), xg = x.grad_ptr();
        auto xv = x.values_ptr();
        out.node()->backward = [og, xg, xv]() {
          for (std::size_t i = 0; i < xv->size(); ++i) {
            (*xg)[i] += (*og)[i] * (*xv)[i];  // missing the factor 2
          }
        };
      }
      return out;
    };
    auto f = [&](const std::vector<Tensor64>& p) { return lre::sum(broken_square(p[0])); };
    auto rep = lre::check_gradients(f, {Tensor64::from_vector({2}, {1.5, -2.0})}, 1e-4);
    CHECK_FALSE(rep.passed);
    CHECK_FALSE(rep.worst_coordinate.empty());
  }
}

TEST_CASE("every differentiable kernel passes gradcheck on randomized shapes") {
  Rng rng(1234);
  const double tol = 1e-4;

  auto scalarize = [](Tensor64 t) {
    // pseudo-random but fixed projection to a scalar
    std::vector<double> w(t.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] = 0.1 + 0.37 * static_cast<double>((i * 2654435761u) % 97) / 97.0;
    }
    return lre::dot(t.reshaped({static_cast<int>(t.size())}),
                    Tensor64::from_vector({static_cast<int>(t.size())}, w));
  };

  SUBCASE("add/sub/mul/scale/div chain") {
    auto pts = random_points({{3, 4}, {3, 4}}, rng);
    auto f = [&](const std::vector<Tensor64>& p) {
      auto m = lre::mul(lre::add(p[0], p[1]), lre::sub(p[0], p[1]));
      auto d = lre::div(m, lre::add_const(lre::mul(p[1], p[1]), 1.0));
      return scalarize(lre::scale(d, 0.7));
    };
    CHECK(lre::check_gradients(f, pts, tol).passed);
  }
  SUBCASE("matmul and matmul_nt and transpose") {
    auto pts = random_points({{2, 5}, {5, 3}, {4, 3}}, rng);
    auto f = [&](const std::vector<Tensor64>& p) {
      auto a = lre::matmul(p[0], p[1]);              // [2,3]
      auto b = lre::matmul_nt(a, p[2]);              // [2,4]
      return scalarize(lre::transpose(b));
    };
    CHECK(lre::check_gradients(f, pts, tol).passed);
  }
  SUBCASE("layer_norm") {
    auto pts = random_points({{4, 6}, {6}, {6}}, rng);
    auto f = [&](const std::vector<Tensor64>& p) {
      return scalarize(lre::layer_norm(p[0], p[1], p[2]));
    };
    CHECK(lre::check_gradients(f, pts, tol).passed);
  }
  SUBCASE("gelu") {
    auto pts = random_points({{3, 5}}, rng);
    auto f = [&](const std::vector<Tensor64>& p) { return scalarize(lre::gelu(p[0])); };
    CHECK(lre::check_gradients(f, pts, tol).passed);
  }
  SUBCASE("softmax rows") {
    auto pts = random_points({{3, 7}}, rng);
    auto f = [&](const std::vector<Tensor64>& p) { return scalarize(lre::softmax(p[0])); };
    CHECK(lre::check_gradients(f, pts, tol).passed);
  }
  SUBCASE("l2_normalize and cosine") {
    auto pts = random_points({{5}, {5}}, rng);
    auto f = [&](const std::vector<Tensor64>& p) {
      return lre::cosine_similarity(p[0], p[1]);
    };
    CHECK(lre::check_gradients(f, pts, tol).passed);
  }
  SUBCASE("add_bias, concat, slicing, element, scale_by") {
    auto pts = random_points({{3, 4}, {4}, {2, 4}, {1}}, rng);
    auto f = [&](const std::vector<Tensor64>& p) {
      auto x = lre::add_bias(p[0], p[1]);
      std::vector<Tensor64> blocks = {x, p[2]};
      auto cat = lre::concat_rows(std::span<const Tensor64>(blocks));  // [5,4]
      auto sl = lre::slice_rows(cat, 1, 4);
      auto r = lre::row(sl, 2);
      return lre::add(lre::dot(lre::scale_by(r, p[3]), r), lre::element(r, 1));
    };
    CHECK(lre::check_gradients(f, pts, tol).passed);
  }
  SUBCASE("cross entropy masked sum") {
    auto pts = random_points({{4, 6}}, rng);
    std::vector<int> targets = {2, 0, 5, 3};
    std::vector<std::uint8_t> mask = {1, 0, 1, 1};
    auto f = [&](const std::vector<Tensor64>& p) {
      return lre::cross_entropy_masked_sum(p[0], targets, mask);
    };
    CHECK(lre::check_gradients(f, pts, tol).passed);
  }
  SUBCASE("embedding gather") {
    auto pts = random_points({{6, 4}}, rng);
    std::vector<int> ids = {1, 3, 1, 5};
    auto f = [&](const std::vector<Tensor64>& p) {
      return scalarize(lre::embedding_rows(p[0], ids));
    };
    CHECK(lre::check_gradients(f, pts, tol).passed);
  }
}

TEST_CASE("cross entropy closed forms") {
  // uniform logits over V classes -> ln V per token
  const int v = 11;
  auto logits = Tensor::zeros({3, v});
  std::vector<int> targets = {1, 5, 3};
  std::vector<std::uint8_t> mask = {1, 1, 1};
  auto s = lre::cross_entropy_masked_sum(logits, targets, mask);
  CHECK(s.at(0) / 3.0 == doctest::Approx(std::log(static_cast<double>(v))).epsilon(1e-6));

  // probability ~1 on the reference -> ~0
  auto peaked = Tensor::zeros({1, 4});
  peaked.at(0, 2) = 80.0f;
  auto z = lre::cross_entropy_masked_sum(peaked, {2}, {1});
  CHECK(z.at(0) == doctest::Approx(0.0).epsilon(1e-6));

  // empty mask -> 0
  auto e = lre::cross_entropy_masked_sum(peaked, {2}, {0});
  CHECK(e.at(0) == 0.0f);
}

TEST_CASE("kernels are bitwise deterministic for fixed seed and order") {
  auto run = []() {
    Rng rng(99);
    auto a = Tensor::randn({8, 8}, rng, 1.0);
    auto b = Tensor::randn({8, 8}, rng, 1.0);
    auto y = lre::softmax(lre::matmul(a, b));
    return y;
  };
  auto y1 = run();
  auto y2 = run();
  REQUIRE(y1.size() == y2.size());
  for (std::size_t i = 0; i < y1.size(); ++i) {
    CHECK(y1.data()[i] == y2.data()[i]);
  }
}
