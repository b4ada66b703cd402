#pragma once

#include <vector>

#include "nnspec/activation.hpp"

namespace nnspec {

inline constexpr int kMaxTowerOrder = 8;

// Depth-L covariance: kappa_1 composed with itself L - 1 times.
class DeepKernel {
 public:
  DeepKernel(ShallowKernel base, int depth);

  Real operator()(Real t) const;
  double operator()(double t) const { return static_cast<double>((*this)(Real(t))); }

  const ShallowKernel& base() const { return base_; }
  int depth() const { return depth_; }

 private:
  ShallowKernel base_;
  int depth_;
};

// Clamp a computed correlation to [-1,1]. Overshoot up to 1e-9 is rounding;
// anything larger throws NumericalIntegrityError.
Real clamp_correlation(Real v);

// One composition step u -> kappa_1(u), clamped.
inline Real compose_step(const ShallowKernel& k, Real u) { return clamp_correlation(k(u)); }

// DomainError when |t| > 1 + 1e-12.
Real compose_eval(const DeepKernel& k, Real t);

// Incomplete exponential Bell polynomial B_{n,s}(x_1, ..., x_{n-s+1});
// x[0] is x_1. Needs 1 <= s <= n and at least n - s + 1 entries.
Real bell_polynomial(int n, int s, const std::vector<Real>& x);

struct DerivativeTower {
  std::vector<Real> values;  // values[n - 1] = kappa_L^(n)(1)
  int depth = 1;
  int max_order = 0;
  // |kappa_1(1) - 1|: the recursion treats 1 as an exact fixed point
  double fixed_point_residual = 0;

  Real operator[](int n) const { return values.at(n - 1); }
};

// InsufficientSmoothness when N exceeds the base kernel's smoothness,
// DomainError for N outside 1..8 or L < 1.
DerivativeTower deep_derivative_tower(const ShallowKernel& base, int L, int N);

// Towers for depths 1..L_max in one pass; result[L - 1] is depth L.
std::vector<DerivativeTower> deep_derivative_towers(const ShallowKernel& base, int L_max, int N);

}  // namespace nnspec
