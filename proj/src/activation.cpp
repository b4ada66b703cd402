#include "nnspec/activation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "nnspec/errors.hpp"
#include "nnspec/jet.hpp"

namespace nnspec {

namespace {

constexpr Real kPi = std::numbers::pi_v<Real>;
constexpr int kJetOrder = 9;  // derivatives up to order 8
using KJet = Jet<Real, kJetOrder>;

struct CatalogEntry {
  ActivationKind kind;
  const char* name;
  std::map<std::string, double> defaults;
};

const std::vector<CatalogEntry>& catalog() {
  static const std::vector<CatalogEntry> c = {
      {ActivationKind::relu, "relu", {}},
      {ActivationKind::lrelu, "lrelu", {{"a", 0.01}}},
      {ActivationKind::prelu, "prelu", {{"a", 0.25}}},
      {ActivationKind::repu, "repu", {{"p", 2}}},
      {ActivationKind::gelu, "gelu", {}},
      {ActivationKind::tanh, "tanh", {}},
      {ActivationKind::normal_cdf, "normal_cdf", {}},
      {ActivationKind::exponential, "exponential", {{"a", 1}}},
      {ActivationKind::gaussian, "gaussian", {{"a", 1}}},
      {ActivationKind::cosine, "cosine", {{"a", 1}}},
      {ActivationKind::identity, "identity", {}},
  };
  return c;
}

// E|Z|^k
Real abs_moment(int k) {
  return std::pow(Real(2), Real(k) / 2) * std::exp(std::lgamma(Real(k + 1) / 2)) / std::sqrt(kPi);
}

// sigma = x_+^p + c (-x)_+^p for the kinked activations
bool arccos_family(const Activation& act, int& p, double& c) {
  switch (act.kind) {
    case ActivationKind::relu: p = 1; c = 0; return true;
    case ActivationKind::lrelu:
    case ActivationKind::prelu: p = 1; c = -act.param("a"); return true;
    case ActivationKind::repu: p = static_cast<int>(act.param("p")); c = 0; return true;
    case ActivationKind::identity: p = 1; c = -1; return true;
    default: return false;
  }
}

template <class T>
T eval_impl(const Activation& act, T x) {
  using std::erfc, std::exp, std::cos, std::tanh, std::pow;
  switch (act.kind) {
    case ActivationKind::relu: return x > 0 ? x : T(0);
    case ActivationKind::lrelu:
    case ActivationKind::prelu: return x >= 0 ? x : T(act.param("a")) * x;
    case ActivationKind::repu: return x > 0 ? pow(x, T(act.param("p"))) : T(0);
    case ActivationKind::gelu: return x * erfc(-x / std::numbers::sqrt2_v<T>) / 2;
    case ActivationKind::tanh: return tanh(x);
    case ActivationKind::normal_cdf: return erfc(-x / std::numbers::sqrt2_v<T>) / 2;
    case ActivationKind::exponential: return exp(T(act.param("a")) * x);
    case ActivationKind::gaussian: {
      T a = act.param("a");
      return exp(-a * a * x * x / 2);
    }
    case ActivationKind::cosine: return cos(T(act.param("a")) * x);
    case ActivationKind::identity: return x;
  }
  return T(0);
}

// Gamma_sigma where a closed form exists; negative means "integrate".
Real analytic_gamma_sigma(const Activation& act) {
  int p;
  double c;
  if (arccos_family(act, p, c)) return (1 + Real(c) * c) * abs_moment(2 * p) / 2;
  Real a = act.params.count("a") ? Real(act.param("a")) : Real(0);
  switch (act.kind) {
    case ActivationKind::exponential: return std::exp(2 * a * a);
    case ActivationKind::gaussian: return 1 / std::sqrt(1 + 2 * a * a);
    case ActivationKind::cosine: return (1 + std::exp(-2 * a * a)) / 2;
    case ActivationKind::normal_cdf: return Real(1) / 3;
    default: return -1;
  }
}

Real gh_gamma_sigma(const Activation& act, const GaussHermiteRule& gh) {
  Real s = 0;
  for (std::size_t i = 0; i < gh.nodes.size(); ++i) {
    Real v = eval_activation(act, gh.nodes[i]);
    s += gh.weights[i] * v * v;
  }
  return s;
}

// beta_q, q = 0..Q, for sigma = x_+^p + c (-x)_+^p
std::vector<Real> arccos_beta(int p, double c, int Q) {
  std::vector<Real> plus(Q + 1, 0);
  Real pf = std::tgamma(Real(p + 1));
  for (int q = 0; q <= std::min(p, Q); ++q)
    plus[q] = pf / std::tgamma(Real(p - q + 1)) * abs_moment(p - q) / 2 / std::sqrt(std::tgamma(Real(q + 1)));
  // q > p: J_q = p! phi(0) He_{q-p-1}(0), nonzero for even q - p - 1
  if (p + 1 <= Q) {
    Real b = pf / std::sqrt(2 * kPi) / std::sqrt(std::tgamma(Real(p + 2)));
    for (int q = p + 1; q <= Q; q += 2) {
      plus[q] = b;
      int m = q - p - 1;
      b = -b * Real(m + 1) / std::sqrt(Real(q + 1) * Real(q + 2));
    }
  }
  std::vector<Real> beta(Q + 1);
  for (int q = 0; q <= Q; ++q) beta[q] = (1 + Real(c) * (q % 2 ? -1 : 1)) * plus[q];
  return beta;
}

// beta_q, q = 0..Q, by Gauss-Hermite. Works with Hermite functions
// psi_q = h_q exp(-x^2/4) so nothing overflows at the outer nodes.
std::vector<Real> gh_beta(const Activation& act, const GaussHermiteRule& gh, int Q) {
  std::vector<Real> beta(Q + 1, 0);
  std::vector<Real> sq(Q + 2);
  for (int k = 0; k <= Q + 1; ++k) sq[k] = std::sqrt(Real(k));
  for (std::size_t i = 0; i < gh.nodes.size(); ++i) {
    Real x = gh.nodes[i];
    Real psi0 = std::exp(-x * x / 4);
    Real g = gh.weights[i] * eval_activation(act, x) / psi0;
    if (!std::isfinite(static_cast<double>(g)) && std::isfinite(static_cast<double>(gh.weights[i])))
      throw NumericalIntegrityError("activation " + act.label() + " is not integrable against the Gaussian");
    Real pm = 0, p = psi0;
    for (int q = 0; q <= Q; ++q) {
      beta[q] += g * p;
      Real pn = (x * p - sq[q] * pm) / sq[q + 1];
      pm = p;
      p = pn;
    }
  }
  return beta;
}

Real tail_of(const std::vector<Real>& beta, int Q, Real gamma_sigma) {
  Real s = 0;
  for (int q = Q; q >= 0; --q) s += beta[q] * beta[q];
  return 1 - s / gamma_sigma;
}

HermiteExpansion finish_expansion(std::vector<Real> beta, int Q, Real gamma_sigma, double gamma_b, int gh_nodes) {
  if (gamma_b < 0 || gamma_b >= 1) throw DomainError("gamma_b must lie in [0, 1)");
  HermiteExpansion e;
  beta.resize(Q + 1);
  e.beta = std::move(beta);
  e.order = Q;
  e.gamma_sigma = gamma_sigma;
  e.gamma_b = gamma_b;
  e.gamma_w0 = 1 - gamma_b;
  e.gamma_w = static_cast<double>((1 - Real(gamma_b)) / gamma_sigma);
  e.tail_bound = tail_of(e.beta, Q, gamma_sigma);
  e.gh_nodes = gh_nodes;
  return e;
}

// --- arc-cosine family polynomials -------------------------------------

using Poly = std::vector<Real>;

Real poly_eval(const Poly& p, Real x) {
  Real r = 0;
  for (auto it = p.rbegin(); it != p.rend(); ++it) r = r * x + *it;
  return r;
}

void poly_axpy(Poly& y, Real a, const Poly& x, int shift = 0) {
  if (y.size() < x.size() + shift) y.resize(x.size() + shift, 0);
  for (std::size_t k = 0; k < x.size(); ++k) y[k + shift] += a * x[k];
}

// Antiderivatives in the basis {poly * s, const * phi} with s = sqrt(1 - r^2)
// and phi = acos(-r), so s' = -r/s and phi' = 1/s.
struct SPhi {
  Poly s;
  Real phi = 0;
};

// I_m = antiderivative of r^m / s
std::vector<SPhi> inverse_sqrt_integrals(int mmax) {
  std::vector<SPhi> I(mmax + 1);
  if (mmax >= 0) I[0].phi = 1;
  if (mmax >= 1) I[1].s = {-1};
  for (int m = 2; m <= mmax; ++m) {
    Poly lead(m, 0);
    lead[m - 1] = Real(-1) / m;
    I[m].s = lead;
    poly_axpy(I[m].s, Real(m - 1) / m, I[m - 2].s);
    I[m].phi = Real(m - 1) / m * I[m - 2].phi;
  }
  return I;
}

}  // namespace

// --- catalog ---------------------------------------------------------------

double Activation::param(const std::string& key) const {
  auto it = params.find(key);
  if (it == params.end()) throw UsageError("activation " + name + " has no parameter '" + key + "'");
  return it->second;
}

std::string Activation::label() const {
  if (params.empty()) return name;
  std::ostringstream os;
  os << name << "(";
  bool first = true;
  for (const auto& [k, v] : params) {
    os << (first ? "" : ",") << k << "=" << v;
    first = false;
  }
  os << ")";
  return os.str();
}

const std::vector<std::string>& activation_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& e : catalog()) v.emplace_back(e.name);
    return v;
  }();
  return names;
}

Activation make_activation(const std::string& name, const std::map<std::string, double>& params) {
  auto it = std::find_if(catalog().begin(), catalog().end(), [&](const CatalogEntry& e) { return name == e.name; });
  if (it == catalog().end()) throw UsageError("unknown activation '" + name + "'");
  Activation act;
  act.kind = it->kind;
  act.name = it->name;
  act.params = it->defaults;
  for (const auto& [k, v] : params) {
    if (!act.params.count(k)) throw UsageError("activation " + name + " takes no parameter '" + k + "'");
    if (!std::isfinite(v)) throw DomainError("parameter " + k + " must be finite");
    act.params[k] = v;
  }
  switch (act.kind) {
    case ActivationKind::relu:
    case ActivationKind::lrelu:
    case ActivationKind::prelu: act.kernel_smoothness = 1; break;
    case ActivationKind::repu: {
      double p = act.param("p");
      if (p < 2 || p != std::floor(p) || p > 12) throw DomainError("repu needs an integer power 2 <= p <= 12");
      // kappa^(s)(1) = E[sigma^(s)(Z)^2] / Gamma_sigma, infinite once s > p
      act.kernel_smoothness = static_cast<int>(p);
      break;
    }
    default: act.kernel_smoothness = kInfiniteSmoothness;
  }
  Real gs = analytic_gamma_sigma(act);
  if (gs < 0) gs = gh_gamma_sigma(act, *cached_gauss_hermite(256));
  if (!(gs > 0) || !std::isfinite(static_cast<double>(gs)))
    throw DomainError("activation " + act.label() + " has no finite positive second moment");
  act.gamma_sigma = static_cast<double>(gs);
  return act;
}

double eval_activation(const Activation& act, double x) { return eval_impl(act, x); }
Real eval_activation(const Activation& act, Real x) { return eval_impl(act, x); }

// --- Hermite expansions ----------------------------------------------------

Real HermiteExpansion::raw(int q) const {
  return beta.at(q) * std::sqrt(std::tgamma(Real(q + 1)));
}

HermiteExpansion hermite_coefficients(const Activation& act, int Q, int gh_nodes, double gamma_b) {
  if (Q < 0) throw DomainError("hermite_coefficients: negative order");
  int p;
  double c;
  if (arccos_family(act, p, c))
    return finish_expansion(arccos_beta(p, c, Q), Q, analytic_gamma_sigma(act), gamma_b, 0);
  if (gh_nodes < Q + 16) throw DomainError("hermite_coefficients: need at least Q + 16 Gauss-Hermite nodes");
  auto gh = cached_gauss_hermite(gh_nodes);
  return finish_expansion(gh_beta(act, *gh, Q), Q, gh_gamma_sigma(act, *gh), gamma_b, gh_nodes);
}

HermiteExpansion adaptive_hermite_expansion(const Activation& act, double gamma_b, const SeriesOptions& opts) {
  if (gamma_b < 0 || gamma_b >= 1) throw DomainError("gamma_b must lie in [0, 1)");
  const Real target = opts.tail_target;

  // smallest Q with tail below target, then extended until the order-8
  // weighted terms are negligible so derivative sums at 1 converge too
  auto choose = [&](const std::vector<Real>& beta, int qcap, Real gs, bool smooth) -> int {
    Real s = 0;
    int Q = -1;
    for (int q = 0; q <= qcap; ++q) {
      s += beta[q] * beta[q];
      if (1 - s / gs < target) {
        Q = q;
        break;
      }
    }
    if (Q < 0 || !smooth) return Q;
    auto w8 = [&](int q) { return std::pow(Real(q), 8) * beta[q] * beta[q]; };
    Real total = 0;
    for (int q = 0; q <= qcap; ++q) total += w8(q);
    Real rest = 0;
    int last = qcap;
    for (int q = qcap; q > Q; --q) {
      rest += w8(q);
      if (rest > 1e-15L * total) break;
      last = q - 1;
    }
    return std::max(Q, last);
  };

  int p;
  double c;
  const bool smooth = act.kernel_smoothness == kInfiniteSmoothness;
  if (arccos_family(act, p, c)) {
    Real gs = analytic_gamma_sigma(act);
    // sum of beta^2 is known exactly, so grow in blocks until the tail fits
    for (int qcap = std::min(opts.q_max, 1024);; qcap = std::min(opts.q_max, 2 * qcap)) {
      auto beta = arccos_beta(p, c, qcap);
      int Q = choose(beta, qcap, gs, smooth);
      if (Q >= 0) return finish_expansion(std::move(beta), Q, gs, gamma_b, 0);
      if (qcap >= opts.q_max) {
        Real tail = tail_of(beta, qcap, gs);
        if (opts.allow_partial) return finish_expansion(std::move(beta), qcap, gs, gamma_b, 0);
        std::ostringstream os;
        os << "Hermite tail for " << act.label() << " is " << static_cast<double>(tail) << " at Q = " << qcap
           << ", above the target " << opts.tail_target;
        throw TailNotReached(os.str(), static_cast<double>(tail));
      }
    }
  }

  std::vector<Real> prev;
  int prev_q = -1;
  Real best_tail = 1;
  for (int n = opts.gh_start; n <= opts.gh_max; n *= 2) {
    auto gh = cached_gauss_hermite(n);
    const int qa = std::min(n - 16, opts.q_max);
    auto beta = gh_beta(act, *gh, qa);
    Real gs = gh_gamma_sigma(act, *gh);
    if (prev_q >= 0) {
      Real diff = 0;
      for (int q = 0; q <= prev_q; ++q) diff = std::max(diff, std::abs(beta[q] - prev[q]));
      diff /= std::sqrt(gs);
      if (diff < opts.gh_tolerance) {
        int Q = choose(beta, prev_q, gs, smooth);
        best_tail = tail_of(beta, prev_q, gs);
        if (Q >= 0) return finish_expansion(std::move(beta), Q, gs, gamma_b, n);
        if (prev_q >= opts.q_max) {
          if (opts.allow_partial) return finish_expansion(std::move(beta), prev_q, gs, gamma_b, n);
          break;
        }
      } else if (n * 2 > opts.gh_max) {
        std::ostringstream os;
        os << "Gauss-Hermite coefficients for " << act.label() << " did not stabilize (change "
           << static_cast<double>(diff) << " at " << n << " nodes)";
        throw ConvergenceError(os.str());
      }
    }
    prev = std::move(beta);
    prev_q = qa;
  }
  std::ostringstream os;
  os << "Hermite tail for " << act.label() << " stuck at " << static_cast<double>(best_tail)
     << ", above the target " << opts.tail_target;
  throw TailNotReached(os.str(), static_cast<double>(best_tail));
}

// --- kernels -----------------------------------------------------------------

bool has_closed_form(const Activation& act) {
  switch (act.kind) {
    case ActivationKind::gelu:
    case ActivationKind::tanh:
    case ActivationKind::normal_cdf: return false;
    default: return true;
  }
}

ShallowKernel make_closed_form(const Activation& act, double gamma_b) {
  if (gamma_b < 0 || gamma_b >= 1) throw DomainError("gamma_b must lie in [0, 1)");
  ShallowKernel k;
  k.act_ = act;
  k.gamma_b_ = gamma_b;
  k.smoothness_ = act.kernel_smoothness;
  int p;
  double c;
  if (act.kind == ActivationKind::identity) {
    k.form_ = KernelForm::identity;
  } else if (arccos_family(act, p, c)) {
    k.form_ = KernelForm::arccos;
    k.p_ = p;
    k.c_ = c;
    // 2 pi F_0 = phi; 2 pi F_n = pi M_n^2 / 2 + n^2 (H(r) - H(0)), H' = 2 pi F_{n-1}
    auto tables = std::make_shared<ShallowKernel::Arccos>();
    tables->A.push_back({});
    tables->B.push_back({1});
    auto I = inverse_sqrt_integrals(2 * p + 4);
    std::vector<Poly> Cpoly{{}};
    for (int n = 1; n <= p; ++n) {
      const Poly& A = tables->A[n - 1];
      const Poly& B = tables->B[n - 1];
      const Poly& C = Cpoly[n - 1];
      Poly hs, hphi, hc;
      // int r^k s = I_k - I_{k+2}
      for (std::size_t j = 0; j < A.size(); ++j) {
        poly_axpy(hs, A[j], I[j].s);
        poly_axpy(hphi, A[j] * I[j].phi, Poly{1});
        poly_axpy(hs, -A[j], I[j + 2].s);
        poly_axpy(hphi, -A[j] * I[j + 2].phi, Poly{1});
      }
      // int r^k phi = r^(k+1) phi / (k+1) - I_{k+1} / (k+1)
      for (std::size_t j = 0; j < B.size(); ++j) {
        Poly mono(j + 2, 0);
        mono[j + 1] = B[j] / Real(j + 1);
        poly_axpy(hphi, 1, mono);
        poly_axpy(hs, -B[j] / Real(j + 1), I[j + 1].s);
        poly_axpy(hphi, -B[j] / Real(j + 1) * I[j + 1].phi, Poly{1});
      }
      for (std::size_t j = 0; j < C.size(); ++j) {
        Poly mono(j + 2, 0);
        mono[j + 1] = C[j] / Real(j + 1);
        poly_axpy(hc, 1, mono);
      }
      Real h0 = poly_eval(hs, 0) + poly_eval(hphi, 0) * kPi / 2 + poly_eval(hc, 0);
      Real mn = abs_moment(n);
      Real n2 = Real(n) * n;
      Poly An, Bn, Cn;
      poly_axpy(An, n2, hs);
      poly_axpy(Bn, n2, hphi);
      poly_axpy(Cn, n2, hc);
      poly_axpy(Cn, kPi * mn * mn / 2 - n2 * h0, Poly{1});
      tables->A.push_back(An);
      tables->B.push_back(Bn);
      Cpoly.push_back(Cn);
    }
    // the polynomial part vanishes identically; anything else is a bug
    for (int n = 0; n <= p; ++n) {
      Real worst = 0;
      for (Real r : {Real(-1), Real(0), Real(0.5), Real(1)}) worst = std::max(worst, std::abs(poly_eval(Cpoly[n], r)));
      if (worst > 1e-12L) throw NumericalIntegrityError("arc-cosine recursion left a polynomial remainder");
    }
    k.arccos_ = tables;
  } else {
    switch (act.kind) {
      case ActivationKind::gaussian: k.form_ = KernelForm::gaussian; break;
      case ActivationKind::exponential: k.form_ = KernelForm::exponential; break;
      case ActivationKind::cosine: k.form_ = KernelForm::cosine; break;
      default: throw UsageError("no closed-form kernel for activation " + act.label());
    }
    k.a_ = act.param("a");
  }
  return k;
}

ShallowKernel make_series_kernel(const Activation& act, HermiteExpansion expansion) {
  ShallowKernel k;
  k.act_ = act;
  k.form_ = KernelForm::hermite_series;
  k.gamma_b_ = expansion.gamma_b;
  k.smoothness_ = act.kernel_smoothness;
  k.coeff_.resize(expansion.beta.size());
  const Real gw = (1 - Real(expansion.gamma_b)) / expansion.gamma_sigma;
  for (std::size_t q = 0; q < expansion.beta.size(); ++q) k.coeff_[q] = gw * expansion.beta[q] * expansion.beta[q];
  k.series_ = std::make_shared<const HermiteExpansion>(std::move(expansion));
  return k;
}

ShallowKernel shallow_kernel(const Activation& act, double gamma_b, const SeriesOptions& opts) {
  return make_series_kernel(act, adaptive_hermite_expansion(act, gamma_b, opts));
}

ShallowKernel closed_form_kernel(const std::string& name, const std::map<std::string, double>& params,
                                 double gamma_b) {
  Activation act = make_activation(name, params);
  if (!has_closed_form(act)) throw UsageError("no closed-form kernel for activation " + name);
  return make_closed_form(act, gamma_b);
}

ShallowKernel default_kernel(const Activation& act, double gamma_b) {
  if (has_closed_form(act)) return make_closed_form(act, gamma_b);
  return shallow_kernel(act, gamma_b);
}

double kernel_derivative_at_one(const ShallowKernel& k, int order) { return k.derivative_at_one(order); }

double ShallowKernel::tail_bound() const {
  return series_ ? static_cast<double>(series_->tail_bound) : 0.0;
}

std::string ShallowKernel::describe() const {
  std::ostringstream os;
  switch (form_) {
    case KernelForm::arccos: os << "arc-cosine closed form (p=" << p_ << ", c=" << c_ << ")"; break;
    case KernelForm::gaussian: os << "gaussian closed form"; break;
    case KernelForm::exponential: os << "exponential closed form"; break;
    case KernelForm::cosine: os << "cosine closed form"; break;
    case KernelForm::identity: os << "identity"; break;
    case KernelForm::hermite_series:
      os << "Hermite series, Q=" << series_->order << ", tail=" << static_cast<double>(series_->tail_bound);
      break;
  }
  if (gamma_b_ != 0) os << ", gamma_b=" << gamma_b_;
  return os.str();
}

Real ShallowKernel::base(Real rho) const {
  const Real a2 = Real(a_) * a_;
  switch (form_) {
    case KernelForm::identity: return rho;
    case KernelForm::gaussian: return std::sqrt((1 + 2 * a2) / ((a2 + 1) * (a2 + 1) - a2 * a2 * rho * rho));
    case KernelForm::exponential: return std::exp(a2 * (rho - 1));
    case KernelForm::cosine:
      return (std::exp(-a2 * (1 - rho)) + std::exp(-a2 * (1 + rho))) / (1 + std::exp(-2 * a2));
    case KernelForm::arccos: {
      auto F = [&](int n, Real r) {
        Real s = std::sqrt(std::max(Real(0), (1 - r) * (1 + r)));
        return poly_eval(arccos_->A[n], r) * s + poly_eval(arccos_->B[n], r) * std::acos(-r);
      };
      Real norm = (1 + Real(c_) * c_) * F(p_, 1);
      return ((1 + Real(c_) * c_) * F(p_, rho) + 2 * Real(c_) * F(p_, -rho)) / norm;
    }
    case KernelForm::hermite_series: {
      // gamma_w sum beta_q^2 rho^q; the gamma_b shift is applied by the caller
      Real r = 0;
      for (auto it = coeff_.rbegin(); it != coeff_.rend(); ++it) r = r * rho + *it;
      return r / (1 - Real(gamma_b_));
    }
  }
  return 0;
}

Real ShallowKernel::base_derivative(Real rho, int order) const {
  if (order == 0) return base(rho);
  switch (form_) {
    case KernelForm::identity: return order == 1 ? 1 : 0;
    case KernelForm::hermite_series: {
      Real r = 0;
      const int Q = static_cast<int>(coeff_.size()) - 1;
      for (int q = Q; q >= order; --q) {
        Real f = 1;
        for (int j = 0; j < order; ++j) f *= Real(q - j);
        r = r * rho + f * coeff_[q];
      }
      return r / (1 - Real(gamma_b_));
    }
    case KernelForm::arccos: {
      // Price: d/dr E[f(X) g(Y)] = E[f'(X) g'(Y)]
      auto F = [&](int n, Real r) {
        Real s = std::sqrt(std::max(Real(0), (1 - r) * (1 + r)));
        return poly_eval(arccos_->A[n], r) * s + poly_eval(arccos_->B[n], r) * std::acos(-r);
      };
      const Real cc = c_;
      const Real norm = (1 + cc * cc) * F(p_, 1);
      const Real sign = order % 2 ? -1 : 1;
      if (order <= p_) {
        Real f = 1;
        for (int j = 0; j < order; ++j) f *= Real(p_ - j) * Real(p_ - j);
        return f * ((1 + cc * cc) * F(p_ - order, rho) + sign * 2 * cc * F(p_ - order, -rho)) / norm;
      }
      // beyond p only the interior makes sense: derivatives of acos(-r)
      if (std::abs(rho) >= 1) throw InsufficientSmoothness("arc-cosine kernel derivative diverges at |u| = 1");
      Real f = 1;
      for (int j = 0; j < p_; ++j) f *= Real(p_ - j) * Real(p_ - j);
      const int k = order - p_;  // k-th derivative of phi = (k-1)-th of (1-r^2)^(-1/2)
      if (k > kJetOrder) throw DomainError("derivative order too high");
      auto dphi = [&](Real r) {
        KJet x = KJet::variable(r);
        KJet g = pow(Real(1) - x * x, Real(-0.5));
        return g.derivative(k - 1);
      };
      return f * ((1 + cc * cc) * dphi(rho) + sign * 2 * cc * dphi(-rho)) / norm;
    }
    default: break;
  }
  if (order >= kJetOrder) throw DomainError("derivative order too high");
  const Real a2 = Real(a_) * a_;
  KJet x = KJet::variable(rho);
  KJet r;
  switch (form_) {
    case KernelForm::gaussian:
      r = std::sqrt(1 + 2 * a2) * pow((a2 + 1) * (a2 + 1) - a2 * a2 * (x * x), Real(-0.5));
      break;
    case KernelForm::exponential: r = exp(a2 * (x + Real(-1))); break;
    case KernelForm::cosine:
      r = (exp(-a2 * (Real(1) - x)) + exp(-a2 * (x + Real(1)))) * (1 / (1 + std::exp(-2 * a2)));
      break;
    default: break;
  }
  return r.derivative(order);
}

Real ShallowKernel::operator()(Real u) const {
  const Real gb = gamma_b_;
  const Real rho = gb + (1 - gb) * u;
  return gb + (1 - gb) * base(rho);
}

Real ShallowKernel::derivative(Real u, int order) const {
  if (order < 0) throw DomainError("negative derivative order");
  const Real gb = gamma_b_;
  const Real rho = gb + (1 - gb) * u;
  return std::pow(1 - gb, Real(order + 1)) * base_derivative(rho, order);
}

double ShallowKernel::derivative_at_one(int order) const {
  if (order < 1) throw DomainError("derivative order must be >= 1");
  if (order > smoothness_) {
    std::ostringstream os;
    os << "kernel of " << act_.label() << " has only " << smoothness_ << " derivative(s) at u = 1; asked for "
       << order;
    throw InsufficientSmoothness(os.str());
  }
  const Real scale = std::pow(1 - Real(gamma_b_), Real(order + 1));
  int p;
  double c;
  if (form_ == KernelForm::hermite_series && arccos_family(act_, p, c) && act_.kind != ActivationKind::identity) {
    // truncated derivative sums converge too slowly here; Price's theorem
    // gives E[sigma^(s)(Z)^2] / Gamma_sigma exactly
    Real f = 1;
    for (int j = 0; j < order; ++j) f *= Real(p - j) * Real(p - j);
    return static_cast<double>(scale * f * abs_moment(2 * (p - order)) / abs_moment(2 * p));
  }
  return static_cast<double>(scale * base_derivative(1, order));
}

}  // namespace nnspec
