#pragma once

#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "nnspec/specialfun.hpp"

namespace nnspec {

inline constexpr int kInfiniteSmoothness = std::numeric_limits<int>::max();

enum class ActivationKind {
  relu, lrelu, prelu, repu, gelu, tanh, normal_cdf, exponential, gaussian, cosine, identity
};

struct Activation {
  ActivationKind kind = ActivationKind::relu;
  std::string name;                      // catalog name, lowercase
  std::map<std::string, double> params;  // every parameter, defaults filled in
  int kernel_smoothness = 1;             // derivatives of kappa at u = 1
  double gamma_sigma = 0;                // E[sigma(Z)^2]

  double param(const std::string& key) const;
  // "relu", "prelu(a=0.25)", ...
  std::string label() const;
};

// Throws UsageError for unknown names or parameters, DomainError for bad values.
Activation make_activation(const std::string& name, const std::map<std::string, double>& params = {});
const std::vector<std::string>& activation_names();

double eval_activation(const Activation& act, double x);
Real eval_activation(const Activation& act, Real x);

// Coefficients in the orthonormal Hermite basis h_q = He_q / sqrt(q!):
// beta_q = E[sigma(Z) h_q(Z)] = J_q / sqrt(q!). Stored this way because J_q
// itself overflows long before the series is truncated.
struct HermiteExpansion {
  std::vector<Real> beta;  // q = 0..Q
  int order = 0;           // Q
  Real gamma_sigma = 0;
  double gamma_b = 0;
  double gamma_w0 = 1;     // 1 - gamma_b
  double gamma_w = 0;      // (1 - gamma_b) / gamma_sigma
  Real tail_bound = 0;     // 1 - sum_q beta_q^2 / gamma_sigma
  int gh_nodes = 0;        // 0 when the coefficients are analytic

  // J_q = beta_q sqrt(q!); only sensible for moderate q
  Real raw(int q) const;
};

// Exactly Q + 1 coefficients. The kinked activations (relu, lrelu, prelu,
// repu) and identity use exact formulas; everything else Gauss-Hermite with
// gh_nodes points.
HermiteExpansion hermite_coefficients(const Activation& act, int Q, int gh_nodes, double gamma_b = 0);

struct SeriesOptions {
  double tail_target = 1e-12;
  int q_max = 4096;
  bool allow_partial = false;  // return the best expansion instead of throwing
  int gh_start = 256;
  int gh_max = 4096;
  double gh_tolerance = 1e-13;
};

// Adaptive expansion: grows Q (and the Gauss-Hermite rule) until the tail at
// u = 1 drops below the target. Throws TailNotReached otherwise.
HermiteExpansion adaptive_hermite_expansion(const Activation& act, double gamma_b, const SeriesOptions& opts = {});

enum class KernelForm { arccos, gaussian, exponential, cosine, identity, hermite_series };

class ShallowKernel {
 public:
  Real operator()(Real u) const;
  double operator()(double u) const { return static_cast<double>((*this)(Real(u))); }

  // s-th derivative at an interior point (|u| < 1), s <= 8.
  Real derivative(Real u, int order) const;
  // s-th derivative at u = 1; InsufficientSmoothness beyond smoothness().
  double derivative_at_one(int order) const;

  int smoothness() const { return smoothness_; }
  KernelForm form() const { return form_; }
  double gamma_b() const { return gamma_b_; }
  double tail_bound() const;  // 0 for closed forms
  const Activation& activation() const { return act_; }
  const HermiteExpansion* series() const { return series_.get(); }
  std::string describe() const;

 private:
  friend ShallowKernel make_closed_form(const Activation&, double);
  friend ShallowKernel make_series_kernel(const Activation&, HermiteExpansion);

  Real base(Real rho) const;  // the gamma_b = 0 kernel
  Real base_derivative(Real rho, int order) const;

  Activation act_;
  KernelForm form_ = KernelForm::identity;
  double gamma_b_ = 0;
  int smoothness_ = kInfiniteSmoothness;
  double a_ = 0;  // scale parameter of the smooth closed forms
  // arccos family: sigma = x_+^p + c (-x)_+^p
  int p_ = 1;
  double c_ = 0;
  // F_k(rho) = E[X_+^k Y_+^k] = (A_k(rho) s + B_k(rho) acos(-rho)) / (2 pi)
  struct Arccos {
    std::vector<std::vector<Real>> A, B;
  };
  std::shared_ptr<const Arccos> arccos_;
  std::shared_ptr<const HermiteExpansion> series_;
  std::vector<Real> coeff_;  // gamma_w * beta_q^2, series form
};

ShallowKernel make_closed_form(const Activation& act, double gamma_b);
ShallowKernel make_series_kernel(const Activation& act, HermiteExpansion expansion);

// The Hermite series route with adaptive Q.
ShallowKernel shallow_kernel(const Activation& act, double gamma_b = 0, const SeriesOptions& opts = {});

// Closed forms: relu, lrelu, prelu, repu (arc-cosine family), gaussian,
// exponential, cosine, identity. UsageError for anything else.
ShallowKernel closed_form_kernel(const std::string& name, const std::map<std::string, double>& params = {},
                                 double gamma_b = 0);
bool has_closed_form(const Activation& act);

// Closed form when available, otherwise the series.
ShallowKernel default_kernel(const Activation& act, double gamma_b = 0);

double kernel_derivative_at_one(const ShallowKernel& k, int order);

}  // namespace nnspec
