#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nnspec/kernel.hpp"

namespace nnspec {

struct LawOptions {
  // fixed truncation when >= 0; otherwise grow from 64 until tail < tail_target
  int ell_max = -1;
  double tail_target = 1e-6;
  int ell_cap = 4096;
  int nodes = 0;          // 0: max(nodes_per_ell * ell_max + 32, 128)
  int nodes_per_ell = 4;
};

struct SpectralLaw {
  int d = 2;
  int depth = 1;
  std::vector<double> masses;  // D_0 .. D_ell_max
  double tail_mass = 0;        // 1 - sum of masses
  int ell_max = 0;
  int nodes = 0;
  double tail_target = 0;      // 0 for a fixed truncation
  bool cap_hit = false;        // tail_target asked for but not reached by ell_cap
  int clamped = 0;             // masses in (-1e-9, 0) set to zero
  // carried from the kernel for reports and divergence flags
  std::string activation;
  double gamma_b = 0;
  int kernel_smoothness = kInfiniteSmoothness;

  double mass(int ell) const { return ell <= ell_max ? masses[ell] : 0.0; }
};

int default_node_count(int ell_max, int nodes_per_ell = 4);

// n_l / mu0 * sum_i w_i f_i G_l(x_i) for l <= ell_max, f given at the nodes
std::vector<double> project_samples(const QuadratureRule& rule, const double* f, int ell_max);

SpectralLaw spectral_law(const DeepKernel& k, int d, const LawOptions& opts = {});

// One law per requested depth. The composition is iterated once and each
// Gegenbauer table is shared across depths.
std::vector<SpectralLaw> spectral_laws(const ShallowKernel& base, const std::vector<int>& depths, int d,
                                       const LawOptions& opts = {});

// Laws truncated for sums of l^k D_l with k <= k_max rather than for mass.
// Kernels of finite smoothness get ell_max = 2048 and rely on tail
// completion. Smooth kernels double ell_max from 64 until the top octave
// contributes below 1e-12 of the k_max-th sum, or until that contribution
// stops shrinking: the projection carries an absolute noise floor near
// 1e-20 l per mass, which l^k amplifies.
std::vector<SpectralLaw> moment_laws(const ShallowKernel& base, const std::vector<int>& depths, int d, int k_max);
SpectralLaw moment_law(const DeepKernel& k, int d, int k_max);

// A sum over the law, sum_l w(l) D_l, taken from large l to small.
struct MomentEstimate {
  double value = 0;      // best estimate: completed when possible, else truncated
  double truncated = 0;  // plain sum over retained multipoles
  bool completed = false;  // value includes an extrapolated tail
  bool divergent = false;  // the exact quantity is infinite for this kernel
};

// E[X^k]. Finite iff k <= 2 * smoothness. For kernels of finite smoothness
// the algebraic tail is completed by Richardson extrapolation in ell_max.
MomentEstimate moment(const SpectralLaw& law, int k);
std::vector<MomentEstimate> moments(const SpectralLaw& law, int K);

// a_{1;s} .. a_{2s;s}: sum_i a_{i;s} l^i = prod_{j<s} (l - j)(l + d + j - 1)
std::vector<double> moment_identity_coeffs(int s, int d);

// E[p_s(X)] with p_s as above
MomentEstimate falling_moment(const SpectralLaw& law, int s);

struct IdentityCheck {
  int s = 1;
  double lhs = 0;  // sum_i a_{i;s} E[X^i]
  double rhs = 0;  // (d + 2s - 2)!! / (d - 2)!! * kappa_L^(s)(1)
  double residual = 0;  // |lhs - rhs| / max(1, |rhs|)
  bool completed = false;
};

IdentityCheck verify_moment_identity(const SpectralLaw& law, const DerivativeTower& tower, int s);

enum class Regime { Low, Sparse, High };
std::string regime_name(Regime r);

struct RegimeReport {
  double kappa_prime_1 = 0;
  Regime regime = Regime::Sparse;
  double band = 1e-6;
};

RegimeReport classify(const ShallowKernel& base, double band = 1e-6);

// Parameter value in [lo, hi] where kappa'(1) = 1 for a one-parameter family
// (gamma_b = 0, closed form when available). DomainError if not bracketed.
double regime_boundary(const std::string& activation, const std::string& param, double lo, double hi);

// UnderResolved when tail_mass > alpha.
int effective_support(const SpectralLaw& law, double alpha);
std::uint64_t effective_dimension(const SpectralLaw& law, double alpha);

// E[(X (X + d - 1))^r]
MomentEstimate derivative_variance(const SpectralLaw& law, int r);

struct LawReport {
  std::vector<MomentEstimate> moments;
  std::optional<RegimeReport> regime;
  std::vector<std::pair<double, int>> supports;  // (alpha, C_alpha)
};

nlohmann::json law_to_json(const SpectralLaw& law, const LawReport& report = {});
// Inverse of law_to_json for the law itself; doubles round-trip exactly.
SpectralLaw law_from_json(const nlohmann::json& j);
// Header line then one row per ell: ell,mass,cumulative,n_ell_d
void write_law_csv(std::ostream& os, const SpectralLaw& law);

}  // namespace nnspec
