#include "nnspec/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <sstream>

#include "nnspec/errors.hpp"
#include "nnspec/summation.hpp"

namespace nnspec {

namespace {

constexpr Real kClampTolerance = 1e-9L;

// One element of Q_{n,s}: multiplicities j_1..j_{n-s+1} with sum j_i = s and
// sum i j_i = n, together with n! / prod(j_i! (i!)^j_i).
struct BellTerm {
  Real coefficient;
  std::vector<int> j;
};

Real factorial(int n) {
  Real f = 1;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

void enumerate(int n, int s, int i, int left_n, int left_s, std::vector<int>& j, std::vector<BellTerm>& out) {
  const int width = n - s + 1;
  if (i > width) {
    if (left_n == 0 && left_s == 0) {
      Real c = factorial(n);
      for (int k = 1; k <= width; ++k) c /= factorial(j[k - 1]) * std::pow(factorial(k), Real(j[k - 1]));
      out.push_back({c, j});
    }
    return;
  }
  for (int m = 0; m * i <= left_n && m <= left_s; ++m) {
    j[i - 1] = m;
    enumerate(n, s, i + 1, left_n - m * i, left_s - m, j, out);
  }
  j[i - 1] = 0;
}

// Map nodes never move, so references stay valid after the lock is released.
const std::vector<BellTerm>& bell_terms(int n, int s) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::vector<BellTerm>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto [it, fresh] = cache.try_emplace({n, s});
  if (fresh) {
    std::vector<int> j(n - s + 1, 0);
    enumerate(n, s, 1, n, s, j, it->second);
  }
  return it->second;
}

Real eval_terms(const std::vector<BellTerm>& terms, const Real* x) {
  CompensatedSum<Real> sum;
  for (const auto& t : terms) {
    Real v = t.coefficient;
    for (std::size_t i = 0; i < t.j.size(); ++i)
      for (int m = 0; m < t.j[i]; ++m) v *= x[i];
    sum.add(v);
  }
  return sum.value();
}

void check_orders(int L, int N) {
  if (L < 1) throw DomainError("depth must be >= 1");
  if (N < 1 || N > kMaxTowerOrder) {
    std::ostringstream os;
    os << "tower order must be in 1.." << kMaxTowerOrder << ", got " << N;
    throw DomainError(os.str());
  }
}

}  // namespace

Real clamp_correlation(Real v) {
  if (!std::isfinite(v)) throw NumericalIntegrityError("non-finite kernel value");
  if (v > 1) {
    if (v - 1 > kClampTolerance) {
      std::ostringstream os;
      os << "kernel value " << static_cast<double>(v) << " exceeds 1";
      throw NumericalIntegrityError(os.str());
    }
    return 1;
  }
  if (v < -1) {
    if (-1 - v > kClampTolerance) {
      std::ostringstream os;
      os << "kernel value " << static_cast<double>(v) << " below -1";
      throw NumericalIntegrityError(os.str());
    }
    return -1;
  }
  return v;
}

DeepKernel::DeepKernel(ShallowKernel base, int depth) : base_(std::move(base)), depth_(depth) {
  if (depth < 1) throw DomainError("depth must be >= 1");
}

Real DeepKernel::operator()(Real t) const { return compose_eval(*this, t); }

Real compose_eval(const DeepKernel& k, Real t) {
  if (!(std::abs(t) <= 1 + 1e-12L)) {
    std::ostringstream os;
    os << "correlation " << static_cast<double>(t) << " outside [-1,1]";
    throw DomainError(os.str());
  }
  Real u = std::clamp(t, Real(-1), Real(1));
  for (int l = 0; l < k.depth(); ++l) u = compose_step(k.base(), u);
  return u;
}

Real bell_polynomial(int n, int s, const std::vector<Real>& x) {
  if (s < 1 || s > n) throw DomainError("Bell polynomial needs 1 <= s <= n");
  if (static_cast<int>(x.size()) < n - s + 1) throw DomainError("Bell polynomial: too few arguments");
  return eval_terms(bell_terms(n, s), x.data());
}

std::vector<DerivativeTower> deep_derivative_towers(const ShallowKernel& base, int L_max, int N) {
  check_orders(L_max, N);
  std::vector<Real> d(N);
  for (int s = 1; s <= N; ++s) d[s - 1] = base.derivative_at_one(s);
  const double residual = static_cast<double>(std::abs(base(Real(1)) - 1));

  std::vector<std::vector<const std::vector<BellTerm>*>> terms(N + 1);
  for (int n = 1; n <= N; ++n)
    for (int s = 1; s <= n; ++s) terms[n].push_back(&bell_terms(n, s));

  std::vector<DerivativeTower> out;
  out.reserve(L_max);
  std::vector<Real> cur = d;
  for (int L = 1; L <= L_max; ++L) {
    if (L > 1) {
      // Faa di Bruno for kappa o kappa_{L-1} at the fixed point 1
      std::vector<Real> next(N);
      for (int n = 1; n <= N; ++n) {
        CompensatedSum<Real> sum;
        for (int s = 1; s <= n; ++s) sum.add(d[s - 1] * eval_terms(*terms[n][s - 1], cur.data()));
        next[n - 1] = sum.value();
      }
      cur = std::move(next);
      for (Real v : cur)
        if (!std::isfinite(v)) throw OverflowError("derivative tower overflows extended precision");
    }
    out.push_back({cur, L, N, residual});
  }
  return out;
}

DerivativeTower deep_derivative_tower(const ShallowKernel& base, int L, int N) {
  check_orders(L, N);
  return deep_derivative_towers(base, L, N).back();
}

}  // namespace nnspec
