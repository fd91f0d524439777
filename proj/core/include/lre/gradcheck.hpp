#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lre/tensor.hpp"

namespace lre {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_coordinate;  // "<param index>[<flat index>]" or param name
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  bool passed = false;
};

// Central finite differences against the reverse-mode gradient, coordinate by
// coordinate, in 64-bit. The function must be scalar-valued and may be
// re-evaluated freely (it is called 2x per coordinate).
//
// Error metric: |a - n| / max(1, |a|, |n|) -- relative for large gradients,
// absolute below magnitude 1, so near-zero coordinates do not blow up.
class GradChecker {
 public:
  using Fn = std::function<Tensor64(const std::vector<Tensor64>&)>;

  static GradCheckReport check(const Fn& f, std::vector<Tensor64> point,
                               double tolerance, double step = 1e-5,
                               const std::vector<std::string>* names = nullptr) {
    for (auto& p : point) p.set_requires_grad(true);

    Tensor64 loss = f(point);
    if (loss.size() != 1 || !std::isfinite(loss.at(0))) {
      throw std::domain_error("check_gradients: function value is not a finite scalar");
    }
    for (auto& p : point) p.zero_grad();
    backward(loss);

    GradCheckReport report;
    for (std::size_t pi = 0; pi < point.size(); ++pi) {
      auto& p = point[pi];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double saved = p.at(static_cast<int>(i));
        const double h = step * std::max(1.0, std::abs(saved));
        p.at(static_cast<int>(i)) = saved + h;
        const double up = eval(f, point);
        p.at(static_cast<int>(i)) = saved - h;
        const double down = eval(f, point);
        p.at(static_cast<int>(i)) = saved;

        const double numeric = (up - down) / (2.0 * h);
        const double analytic = p.grad()[i];
        const double err = std::abs(analytic - numeric) /
                           std::max({1.0, std::abs(analytic), std::abs(numeric)});
        if (err > report.max_relative_error) {
          report.max_relative_error = err;
          report.worst_coordinate =
              (names && pi < names->size() ? (*names)[pi] : std::to_string(pi)) + "[" +
              std::to_string(i) + "]";
          report.analytic_at_worst = analytic;
          report.numeric_at_worst = numeric;
        }
      }
    }
    report.passed = report.max_relative_error < tolerance;
    return report;
  }

 private:
  static double eval(const Fn& f, const std::vector<Tensor64>& point) {
    NoGradGuard ng;
    Tensor64 v = f(point);
    const double x = v.at(0);
    if (!std::isfinite(x)) {
      throw std::domain_error("check_gradients: non-finite value during probing");
    }
    return x;
  }
};

inline GradCheckReport check_gradients(const GradChecker::Fn& f,
                                       std::vector<Tensor64> point, double tolerance,
                                       double step = 1e-5,
                                       const std::vector<std::string>* names = nullptr) {
  return GradChecker::check(f, std::move(point), tolerance, step, names);
}

}  // namespace lre
