#pragma once

#include <cstdint>
#include <memory>
#include <vector>

namespace nnspec {

// Extended precision for the quadrature/projection paths. On x86-64 this is
// the 80-bit format; the relu spectral tail needs the extra digits.
using Real = long double;

// Gauss rule for the weight (1 - t^2)^(d/2 - 1) on (-1, 1).
struct QuadratureRule {
  int dim_d = 2;
  std::vector<Real> nodes;    // strictly increasing
  std::vector<Real> weights;  // all positive
  std::size_t size() const { return nodes.size(); }
};

// Normalized so that G(1) = 1. d = 1 Chebyshev T, d = 2 Legendre.
double gegenbauer_eval(int ell, int d, double t);
Real gegenbauer_eval(int ell, int d, Real t);

// out[0..ell_max] = G_{0,d}(t) .. G_{ell_max,d}(t)
void gegenbauer_table(int ell_max, int d, Real t, Real* out);

// s-th derivative in t; zero once s > ell.
double gegenbauer_derivative_eval(int ell, int d, double t, int order);

QuadratureRule jacobi_quadrature(int d, int n);

// Process-wide cache keyed by (d, n). Rules are immutable once built.
std::shared_ptr<const QuadratureRule> cached_jacobi_quadrature(int d, int n);

// integral of (1 - t^2)^(d/2 - 1) over [-1, 1] (= omega_d / omega_{d-1})
Real jacobi_weight_mass(int d);

// Exact; throws OverflowError when the value does not fit in 64 bits.
std::uint64_t eigenspace_dim(int ell, int d);
// Same quantity in floating point, never overflows for sane arguments.
Real eigenspace_dim_real(int ell, int d);

double surface_area(int d);

// (d + 2s - 2)!! / (d - 2)!!  =  d (d + 2) ... (d + 2s - 2)
double double_factorial_ratio(int s, int d);

// Real orthonormal harmonics on S^2. Index m runs 1..2l+1:
// m = 1 is order 0, m = 2k is cos(k phi), m = 2k + 1 is sin(k phi).
double real_sph_harm(int ell, int m, double theta, double phi);

// Fully normalized associated Legendre values (unit L2 norm of the complex
// harmonic, no Condon-Shortley phase) for a fixed order m at x = cos(theta):
// out[l - m] for l = m..lmax. sin_theta passed separately to keep the pole
// rows exact.
void assoc_legendre_column(int lmax, int m, double x, double sin_theta,
                           double* out);

// Gauss rule for E[f(Z)], Z ~ N(0,1): weights sum to 1.
struct GaussHermiteRule {
  std::vector<Real> nodes;
  std::vector<Real> weights;
};

GaussHermiteRule gauss_hermite(int n);
std::shared_ptr<const GaussHermiteRule> cached_gauss_hermite(int n);

}  // namespace nnspec
