#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ctesret {

// Gauss-Legendre nodes and weights on [-1, 1].
struct GaussLegendre {
  explicit GaussLegendre(int n);

  int order() const { return static_cast<int>(nodes.size()); }

  // Integrates f over [a, b] with the stored rule.
  template <typename F>
  double integrate(F&& f, double a, double b) const {
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    double acc = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i)
      acc += weights[i] * f(mid + half * nodes[i]);
    return half * acc;
  }

  std::vector<double> nodes;
  std::vector<double> weights;
};

}  // namespace ctesret
