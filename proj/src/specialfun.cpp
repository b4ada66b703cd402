#include "nnspec/specialfun.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <utility>

#include "nnspec/errors.hpp"
#include "nnspec/parallel.hpp"

namespace nnspec {

namespace {

constexpr double kDomainTol = 1e-12;

template <class T>
T clamp_unit(T t, const char* who) {
  if (!(std::abs(t) <= T(1) + T(kDomainTol))) {
    std::ostringstream os;
    os << who << ": argument " << static_cast<double>(t) << " outside [-1,1]";
    throw DomainError(os.str());
  }
  return std::clamp(t, T(-1), T(1));
}

void check_dim(int d) {
  if (d < 1) throw DomainError("sphere dimension must be >= 1");
}

template <class T>
T gegenbauer_impl(int ell, int d, T t) {
  if (ell < 0) throw DomainError("gegenbauer: negative degree");
  check_dim(d);
  t = clamp_unit(t, "gegenbauer");
  if (ell == 0) return T(1);
  T g0 = 1, g1 = t;
  for (int l = 1; l < ell; ++l) {
    T g2 = (T(2 * l + d - 1) * t * g1 - T(l) * g0) / T(l + d - 1);
    g0 = g1;
    g1 = g2;
  }
  return g1;
}

}  // namespace

double gegenbauer_eval(int ell, int d, double t) { return gegenbauer_impl(ell, d, t); }
Real gegenbauer_eval(int ell, int d, Real t) { return gegenbauer_impl(ell, d, t); }

void gegenbauer_table(int ell_max, int d, Real t, Real* out) {
  out[0] = 1;
  if (ell_max < 1) return;
  out[1] = t;
  for (int l = 1; l < ell_max; ++l)
    out[l + 1] = (Real(2 * l + d - 1) * t * out[l] - Real(l) * out[l - 1]) / Real(l + d - 1);
}

double gegenbauer_derivative_eval(int ell, int d, double t, int order) {
  if (order < 1) throw DomainError("gegenbauer derivative: order must be >= 1");
  check_dim(d);
  t = clamp_unit(t, "gegenbauer derivative");
  if (order > ell) return 0.0;
  long double factor = 1;
  for (int j = 0; j < order; ++j)
    factor *= (long double)(ell - j) * (ell + d + j - 1) / (d + 2 * j);
  return static_cast<double>(factor * gegenbauer_eval(ell - order, d + 2 * order, (Real)t));
}

Real jacobi_weight_mass(int d) {
  check_dim(d);
  // sqrt(pi) Gamma(d/2) / Gamma((d+1)/2)
  Real half = Real(d) / 2;
  return std::sqrt(std::numbers::pi_v<Real>) * std::exp(std::lgamma(half) - std::lgamma(half + Real(0.5)));
}

QuadratureRule jacobi_quadrature(int d, int n) {
  check_dim(d);
  if (n < 1) throw DomainError("jacobi_quadrature: need at least one node");

  const Real lambda = Real(d - 1) / 2;
  const Real mu0 = jacobi_weight_mass(d);
  // b[k] = sqrt(beta_k), monic recurrence coefficients of the symmetric weight
  std::vector<Real> b(n + 1, 0);
  for (int k = 1; k <= n; ++k) {
    Real beta;
    if (d == 1)
      beta = k == 1 ? Real(0.5) : Real(0.25);
    else
      beta = Real(k) * (k + 2 * lambda - 1) / (4 * (k + lambda) * (k + lambda - 1));
    b[k] = std::sqrt(beta);
  }
  const Real p0 = 1 / std::sqrt(mu0);

  struct Eval { Real p, dp, pm1, dpm1; };
  auto evaluate = [&](Real t) {
    Real pm = 0, p = p0, dpm = 0, dp = 0;
    for (int k = 0; k < n; ++k) {
      Real pn = (t * p - b[k] * pm) / b[k + 1];
      Real dpn = (p + t * dp - b[k] * dpm) / b[k + 1];
      pm = p; p = pn;
      dpm = dp; dp = dpn;
    }
    return Eval{p, dp, pm, dpm};
  };

  QuadratureRule rule;
  rule.dim_d = d;
  rule.nodes.assign(n, 0);
  rule.weights.assign(n, 0);

  const int half = n / 2;
  const Real a = Real(d) / 2 - 1;
  const Real pi = std::numbers::pi_v<Real>;
  std::vector<Real> resid(half, 0);

  // Positive half only; node k (1-based, largest first) goes to slot n - k.
  parallel_for(half, 64, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const int k = static_cast<int>(i) + 1;
      Real t = std::cos((k + a / 2 - Real(0.25)) * pi / (n + a + Real(0.5)));
      Real step = 1, prev = 2;
      Eval e{};
      for (int it = 0; it < 100; ++it) {
        e = evaluate(t);
        step = e.p / e.dp;
        t -= step;
        Real as = std::abs(step);
        // stop at roundoff: tiny, or no longer shrinking quadratically
        if (as <= 4 * std::numeric_limits<Real>::epsilon() || (as < 1e-15L && as > prev / 4)) break;
        prev = as;
      }
      resid[i] = std::abs(step);
      rule.nodes[n - k] = t;
      // Full Christoffel-Darboux sum: near the ends the p_n term that
      // vanishes at an exact root still matters at 1e-8 relative
      e = evaluate(t);
      rule.weights[n - k] = 1 / (b[n] * (e.dp * e.pm1 - e.dpm1 * e.p));
    }
  });

  for (int i = 0; i < half; ++i) {
    if (!(resid[i] <= 1e-14) || !std::isfinite(static_cast<double>(rule.nodes[n - 1 - i]))) {
      std::ostringstream os;
      os << "jacobi_quadrature(d=" << d << ", n=" << n << "): node " << i
         << " did not converge, residual " << static_cast<double>(resid[i]);
      throw ConvergenceError(os.str());
    }
  }
  for (int k = 1; k <= half; ++k) {
    rule.nodes[k - 1] = -rule.nodes[n - k];
    rule.weights[k - 1] = rule.weights[n - k];
  }
  if (n % 2 == 1) {
    Eval e = evaluate(0);
    rule.nodes[half] = 0;
    rule.weights[half] = 1 / (b[n] * (e.dp * e.pm1 - e.dpm1 * e.p));
  }

  for (int i = 0; i < n; ++i) {
    bool ok = rule.weights[i] > 0 && rule.nodes[i] > -1 && rule.nodes[i] < 1 &&
              (i == 0 || rule.nodes[i] > rule.nodes[i - 1]);
    if (!ok) {
      std::ostringstream os;
      os << "jacobi_quadrature(d=" << d << ", n=" << n << "): node " << i
         << " out of order or with nonpositive weight (t="
         << static_cast<double>(rule.nodes[i]) << ")";
      throw ConvergenceError(os.str());
    }
  }
  return rule;
}

std::shared_ptr<const QuadratureRule> cached_jacobi_quadrature(int d, int n) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::shared_ptr<const QuadratureRule>> cache;
  {
    std::lock_guard lock(mu);
    auto it = cache.find({d, n});
    if (it != cache.end()) return it->second;
  }
  auto rule = std::make_shared<const QuadratureRule>(jacobi_quadrature(d, n));
  std::lock_guard lock(mu);
  return cache.emplace(std::make_pair(d, n), rule).first->second;
}

std::uint64_t eigenspace_dim(int ell, int d) {
  if (ell < 0) throw DomainError("eigenspace_dim: negative multipole");
  check_dim(d);
  if (ell == 0) return 1;
  using u128 = unsigned __int128;
  constexpr u128 kMax = std::numeric_limits<std::uint64_t>::max();
  auto overflow = [&] {
    std::ostringstream os;
    os << "eigenspace_dim(" << ell << ", " << d << ") exceeds 64 bits";
    throw OverflowError(os.str());
  };
  // binom(ell + d - 2, ell - 1), choosing the shorter product
  const std::uint64_t n = std::uint64_t(ell) + d - 2;
  std::uint64_t k = std::min<std::uint64_t>(ell - 1, d - 1);
  u128 c = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    c = c * (n - k + i) / i;
    if (c > kMax) overflow();
  }
  u128 num = c * u128(2 * std::uint64_t(ell) + d - 1);
  u128 r = num / ell;
  if (r > kMax) overflow();
  return static_cast<std::uint64_t>(r);
}

Real eigenspace_dim_real(int ell, int d) {
  try {
    return static_cast<Real>(eigenspace_dim(ell, d));
  } catch (const OverflowError&) {
    Real lc = std::lgamma(Real(ell + d - 1)) - std::lgamma(Real(ell)) - std::lgamma(Real(d));
    return Real(2 * ell + d - 1) / ell * std::exp(lc);
  }
}

double surface_area(int d) {
  check_dim(d);
  double h = (d + 1) / 2.0;
  return 2.0 * std::pow(std::numbers::pi, h) / std::tgamma(h);
}

double double_factorial_ratio(int s, int d) {
  if (s < 1 || d < 2) throw DomainError("double_factorial_ratio: need s >= 1, d >= 2");
  long double r = 1;
  for (int j = 0; j < s; ++j) r *= d + 2 * j;
  return static_cast<double>(r);
}

void assoc_legendre_column(int lmax, int m, double x, double sin_theta, double* out) {
  double pmm = 0.5 / std::sqrt(std::numbers::pi);
  for (int k = 1; k <= m; ++k) pmm *= std::sqrt((2.0 * k + 1) / (2.0 * k)) * sin_theta;
  if (lmax < m) return;
  out[0] = pmm;
  if (lmax == m) return;
  out[1] = std::sqrt(2.0 * m + 3) * x * pmm;
  double a_prev = std::sqrt(2.0 * m + 3);
  for (int l = m + 2; l <= lmax; ++l) {
    double a = std::sqrt((4.0 * l * l - 1) / (double(l) * l - double(m) * m));
    out[l - m] = a * (x * out[l - m - 1] - out[l - m - 2] / a_prev);
    a_prev = a;
  }
}

double real_sph_harm(int ell, int m, double theta, double phi) {
  if (ell < 0 || m < 1 || m > 2 * ell + 1) {
    std::ostringstream os;
    os << "real_sph_harm: index (" << ell << ", " << m << ") out of range";
    throw DomainError(os.str());
  }
  const int order = m / 2;
  std::vector<double> col(ell - order + 1);
  assoc_legendre_column(ell, order, std::cos(theta), std::sin(theta), col.data());
  double p = col[ell - order];
  if (order == 0) return p;
  return std::numbers::sqrt2 * p * (m % 2 == 0 ? std::cos(order * phi) : std::sin(order * phi));
}

GaussHermiteRule gauss_hermite(int n) {
  if (n < 1) throw DomainError("gauss_hermite: need at least one node");
  GaussHermiteRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  if (n == 1) {
    rule.nodes[0] = 0;
    rule.weights[0] = 1;
    return rule;
  }
  // Starting values from the Jacobi matrix, then Newton in extended precision
  // on the Hermite functions psi_k = h_k exp(-x^2/4), which stay bounded.
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd sub(n - 1);
  for (int k = 1; k < n; ++k) sub[k - 1] = std::sqrt(double(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw ConvergenceError("gauss_hermite: eigenvalue solver failed");

  std::vector<Real> sq(n + 1);
  for (int k = 0; k <= n; ++k) sq[k] = std::sqrt(Real(k));

  parallel_for(n, 32, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      Real x = es.eigenvalues()[i];
      Real sum = 0;
      for (int it = 0; it < 20; ++it) {
        Real pm = 0, p = std::exp(-x * x / 4);
        sum = 0;
        for (int k = 0; k < n; ++k) {
          sum += p * p;
          Real pn = (x * p - sq[k] * pm) / sq[k + 1];
          pm = p;
          p = pn;
        }
        Real dp = sq[n] * pm - x / 2 * p;
        Real step = p / dp;
        x -= step;
        if (std::abs(step) <= 8 * std::numeric_limits<Real>::epsilon() * std::max(Real(1), std::abs(x))) break;
      }
      rule.nodes[i] = x;
      rule.weights[i] = std::exp(-x * x / 2) / sum;
    }
  });
  for (int i = 0; i < n / 2; ++i) {
    Real x = (rule.nodes[n - 1 - i] - rule.nodes[i]) / 2;
    Real w = (rule.weights[n - 1 - i] + rule.weights[i]) / 2;
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    rule.weights[i] = rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0;
  return rule;
}

std::shared_ptr<const GaussHermiteRule> cached_gauss_hermite(int n) {
  static std::mutex mu;
  static std::map<int, std::shared_ptr<const GaussHermiteRule>> cache;
  {
    std::lock_guard lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
  }
  auto rule = std::make_shared<const GaussHermiteRule>(gauss_hermite(n));
  std::lock_guard lock(mu);
  return cache.emplace(n, rule).first->second;
}

}  // namespace nnspec
