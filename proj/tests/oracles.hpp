#pragma once

// Test-side oracles built only on Boost quadrature, never on library code.

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <functional>
#include <numbers>

namespace oracle {

using F = std::function<double(double)>;

inline double phi(double x) { return std::exp(-x * x / 2) / std::sqrt(2 * std::numbers::pi); }

// Gaussian mass beyond |x| = 12 is below 1e-32, so finite ranges suffice
// and keep the adaptive rule from chasing the bulk on a mapped interval.
inline constexpr double kCut = 12.0;

inline double integrate(const F& f, double a, double b) {
  using boost::math::quadrature::gauss_kronrod;
  return gauss_kronrod<double, 61>::integrate(f, a, b, 25, 1e-14);
}

// E[f(Z)], Z ~ N(0,1); split at 0 so kinks there are harmless
inline double gauss_expect(const F& f) {
  auto g = [&](double x) { return f(x) * phi(x); };
  return integrate(g, -kCut, 0.0) + integrate(g, 0.0, kCut);
}

// E[f(X) g(Y)] for standard normals with correlation u, |u| < 1. The inner
// integral is split at the point where Y crosses 0.
inline double bivariate_expect(const F& f, const F& g, double u) {
  using boost::math::quadrature::gauss_kronrod;
  const double r = std::sqrt(1 - u * u);
  auto gk = [](const F& h, double a, double b) {
    return gauss_kronrod<double, 31>::integrate(h, a, b, 20, 1e-13);
  };
  auto outer = [&](double x) {
    double w0 = -u * x / r;
    F inner = [&](double w) { return g(u * x + r * w) * phi(w); };
    double in = (w0 > -kCut && w0 < kCut) ? gk(inner, -kCut, w0) + gk(inner, w0, kCut) : gk(inner, -kCut, kCut);
    return f(x) * phi(x) * in;
  };
  return gk(outer, -kCut, 0.0) + gk(outer, 0.0, kCut);
}

}  // namespace oracle
