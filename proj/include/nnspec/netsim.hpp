#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include <json.hpp>

#include "nnspec/activation.hpp"
#include "nnspec/kernel.hpp"
#include "nnspec/spectrum.hpp"

namespace nnspec {

struct NetworkConfig {
  int d = 2;                // inputs live on S^d in R^{d+1}
  std::vector<int> widths;  // n_1 .. n_L; empty is the L = 0 network
  Activation activation;
  double gamma_b = 0;
  std::uint64_t seed = 0;
  // Independent output rows sharing the hidden layers. Each is a copy of the
  // scalar output; the kernel estimate averages their products.
  int output_units = 1;
  // Nonzero: hidden units of each layer draw their weights in a shuffled
  // order. Same distribution, different realisation.
  std::uint64_t unit_order_seed = 0;

  int depth() const { return static_cast<int>(widths.size()); }
  double gamma_w0() const { return 1 - gamma_b; }
  double gamma_w() const { return (1 - gamma_b) / activation.gamma_sigma; }
};

void validate(const NetworkConfig& cfg);

// Outputs of network replica `replica` at each point: [unit][point].
std::vector<std::vector<double>> forward(const NetworkConfig& cfg, const std::vector<std::vector<double>>& points,
                                         std::uint64_t replica = 0);

// x(t) = (sqrt(1 - t^2), 0, ..., 0, t); the pole is x(1)
std::vector<double> place_point(int d, double t);

struct EmpiricalKernel {
  std::vector<double> t;
  std::vector<double> mean;  // kappa-hat(t)
  std::vector<double> se;
  int replicas = 0;
  // per-replica products, [replica][t]; kept for downstream error bars
  std::vector<std::vector<double>> samples;
};

// Cov(T(pole), T(x(t))) as the replica mean of T(pole) T(x(t)); outputs have
// mean zero by construction so no centring is applied.
EmpiricalKernel empirical_kernel(const NetworkConfig& cfg, const std::vector<double>& t, int replicas);

struct EmpiricalSpectrum {
  int d = 2;
  int ell_max = 0;
  int replicas = 0;
  std::vector<double> t_nodes;
  std::vector<double> kernel, kernel_se;
  std::vector<double> masses, mass_se;
};

// Samples must sit exactly on the nodes of `rule`.
EmpiricalSpectrum empirical_spectrum(const EmpiricalKernel& k, const QuadratureRule& rule, int ell_max);

// Rule with default_node_count(ell_max) nodes, kernel, spectrum.
EmpiricalSpectrum simulate(const NetworkConfig& cfg, int ell_max, int replicas);

struct Comparison {
  double sup_kernel_err = 0;
  double l1_mass_err = 0;  // over l <= min(20, ell_max)
  double max_abs_z = 0;
  int z_over_3 = 0;
  int ell_compared = 0;
};

// Without an exact kernel the analytic side is resummed from the law's masses.
Comparison compare(const SpectralLaw& analytic, const EmpiricalSpectrum& emp, const DeepKernel* exact = nullptr);

nlohmann::json comparison_to_json(const Comparison& c);
// t,kappa_hat,se
void write_kernel_csv(std::ostream& os, const EmpiricalSpectrum& e);

// Two-sample Kolmogorov-Smirnov statistic and its asymptotic critical value
double ks_statistic(std::vector<double> a, std::vector<double> b);
double ks_critical(std::size_t n, std::size_t m, double alpha);

// Summation in a fixed binary tree over the index range.
double pairwise_sum(const double* v, std::size_t n);

}  // namespace nnspec
