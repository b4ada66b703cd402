#include "nnspec/netsim.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "nnspec/errors.hpp"
#include "nnspec/parallel.hpp"
#include "nnspec/philox.hpp"

namespace nnspec {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr int kRowBlock = 64;
constexpr std::uint32_t kWeights = 0, kBiases = 1;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t replica_key(std::uint64_t seed, std::uint64_t replica) {
  return splitmix64(seed ^ splitmix64(replica + 1));
}

std::vector<std::uint32_t> unit_order(std::uint64_t order_seed, int layer, int n) {
  std::vector<std::uint32_t> p(n);
  std::iota(p.begin(), p.end(), 0u);
  if (order_seed != 0) {
    std::mt19937_64 g(splitmix64(order_seed + std::uint64_t(layer)));
    std::shuffle(p.begin(), p.end(), g);
  }
  return p;
}

// One affine layer: out = sqrt(var_w) W in + sqrt(var_b) b, with W streamed in
// row blocks so only kRowBlock x fan_in weights are held at once.
Mat affine(const Mat& in, int out_dim, double var_w, double var_b, std::uint64_t key, int layer,
           std::uint64_t order_seed) {
  const int fan_in = static_cast<int>(in.rows());
  NormalStream wz(key, std::uint32_t(layer), kWeights), bz(key, std::uint32_t(layer), kBiases);
  auto order = unit_order(order_seed, layer, out_dim);
  Mat out(out_dim, in.cols());
  RowMat W(std::min(kRowBlock, out_dim), fan_in);
  const double sw = std::sqrt(var_w), sb = std::sqrt(var_b);
  for (int r0 = 0; r0 < out_dim; r0 += kRowBlock) {
    const int rows = std::min(kRowBlock, out_dim - r0);
    for (int r = 0; r < rows; ++r) wz.fill(W.row(r).data(), fan_in, std::uint64_t(order[r0 + r]) * fan_in);
    out.middleRows(r0, rows).noalias() = W.topRows(rows) * in;
    for (int r = 0; r < rows; ++r) {
      const double b = sb * bz.at(order[r0 + r]);
      out.row(r0 + r) = (sw * out.row(r0 + r).array() + b).matrix();
    }
  }
  return out;
}

Mat run(const NetworkConfig& cfg, const Mat& X, std::uint64_t replica) {
  const std::uint64_t key = replica_key(cfg.seed, replica);
  const int L = cfg.depth();
  const int first = L == 0 ? cfg.output_units : cfg.widths[0];
  Mat H = affine(X, first, cfg.gamma_w0(), cfg.gamma_b, key, 0, cfg.unit_order_seed);
  for (int s = 1; s <= L; ++s) {
    H = H.unaryExpr([&](double v) { return eval_activation(cfg.activation, v); });
    const int out = s < L ? cfg.widths[s] : cfg.output_units;
    H = affine(H, out, cfg.gamma_w() / cfg.widths[s - 1], cfg.gamma_b, key, s, s < L ? cfg.unit_order_seed : 0);
  }
  return H;
}

double sq(double x) { return x * x; }

}  // namespace

double pairwise_sum(const double* v, std::size_t n) {
  if (n == 0) return 0;
  if (n == 1) return v[0];
  const std::size_t h = n / 2;
  return pairwise_sum(v, h) + pairwise_sum(v + h, n - h);
}

void validate(const NetworkConfig& cfg) {
  if (cfg.d < 1) throw DomainError("d must be >= 1");
  for (int w : cfg.widths)
    if (w < 1) throw DomainError("every width must be >= 1");
  if (cfg.output_units < 1) throw DomainError("output_units must be >= 1");
  if (!(cfg.gamma_b >= 0 && cfg.gamma_b < 1)) throw DomainError("gamma_b must lie in [0, 1)");
  if (!(cfg.activation.gamma_sigma > 0)) throw DomainError("activation has zero second moment");
}

std::vector<std::vector<double>> forward(const NetworkConfig& cfg, const std::vector<std::vector<double>>& points,
                                         std::uint64_t replica) {
  validate(cfg);
  const int dim = cfg.d + 1;
  Mat X(dim, points.size());
  for (std::size_t p = 0; p < points.size(); ++p) {
    if (static_cast<int>(points[p].size()) != dim) throw DomainError("point has the wrong dimension");
    double n2 = 0;
    for (int k = 0; k < dim; ++k) n2 += sq(points[p][k]);
    if (std::abs(std::sqrt(n2) - 1) > 1e-9) {
      std::ostringstream os;
      os << "input point " << p << " has norm " << std::sqrt(n2) << ", expected 1";
      throw DomainError(os.str());
    }
    for (int k = 0; k < dim; ++k) X(k, p) = points[p][k];
  }
  Mat H = run(cfg, X, replica);
  std::vector<std::vector<double>> out(H.rows(), std::vector<double>(H.cols()));
  for (Eigen::Index u = 0; u < H.rows(); ++u)
    for (Eigen::Index p = 0; p < H.cols(); ++p) out[u][p] = H(u, p);
  return out;
}

std::vector<double> place_point(int d, double t) {
  if (!(std::abs(t) <= 1)) throw DomainError("t outside [-1, 1]");
  std::vector<double> x(d + 1, 0.0);
  x[0] = std::sqrt(1 - t * t);
  x[d] = t;
  return x;
}

EmpiricalKernel empirical_kernel(const NetworkConfig& cfg, const std::vector<double>& t, int replicas) {
  validate(cfg);
  if (replicas < 30) throw DomainError("need at least 30 replicas");
  if (t.empty()) throw DomainError("no t values");
  std::vector<std::vector<double>> pts;
  pts.push_back(place_point(cfg.d, 1));
  for (double v : t) pts.push_back(place_point(cfg.d, v));

  EmpiricalKernel k;
  k.t = t;
  k.replicas = replicas;
  k.samples.assign(replicas, std::vector<double>(t.size()));
  parallel_for(replicas, 1, [&](std::size_t b, std::size_t e) {
    for (std::size_t r = b; r < e; ++r) {
      auto y = forward(cfg, pts, r);
      for (std::size_t j = 0; j < t.size(); ++j) {
        double acc = 0;
        for (const auto& unit : y) acc += unit[0] * unit[j + 1];
        k.samples[r][j] = acc / cfg.output_units;
      }
    }
  });

  std::vector<double> col(replicas);
  k.mean.resize(t.size());
  k.se.resize(t.size());
  for (std::size_t j = 0; j < t.size(); ++j) {
    for (int r = 0; r < replicas; ++r) col[r] = k.samples[r][j];
    const double m = pairwise_sum(col.data(), col.size()) / replicas;
    for (int r = 0; r < replicas; ++r) col[r] = sq(k.samples[r][j] - m);
    k.mean[j] = m;
    k.se[j] = std::sqrt(pairwise_sum(col.data(), col.size()) / (replicas - 1) / replicas);
  }
  return k;
}

EmpiricalSpectrum empirical_spectrum(const EmpiricalKernel& k, const QuadratureRule& rule, int ell_max) {
  if (k.t.size() != rule.size()) throw DomainError("kernel samples do not match the quadrature rule");
  for (std::size_t i = 0; i < rule.size(); ++i)
    if (k.t[i] != static_cast<double>(rule.nodes[i])) throw DomainError("kernel samples are not on the rule's nodes");
  EmpiricalSpectrum e;
  e.d = rule.dim_d;
  e.ell_max = ell_max;
  e.replicas = k.replicas;
  e.t_nodes = k.t;
  e.kernel = k.mean;
  e.kernel_se = k.se;

  // the projection is linear: project every replica, then take moments
  const int R = k.replicas;
  std::vector<std::vector<double>> per(R);
  parallel_for(R, 8, [&](std::size_t b, std::size_t end) {
    for (std::size_t r = b; r < end; ++r) per[r] = project_samples(rule, k.samples[r].data(), ell_max);
  });
  e.masses.resize(ell_max + 1);
  e.mass_se.resize(ell_max + 1);
  std::vector<double> col(R);
  for (int l = 0; l <= ell_max; ++l) {
    for (int r = 0; r < R; ++r) col[r] = per[r][l];
    const double m = pairwise_sum(col.data(), R) / R;
    for (int r = 0; r < R; ++r) col[r] = sq(per[r][l] - m);
    e.masses[l] = m;
    e.mass_se[l] = std::sqrt(pairwise_sum(col.data(), R) / (R - 1) / R);
  }
  return e;
}

EmpiricalSpectrum simulate(const NetworkConfig& cfg, int ell_max, int replicas) {
  auto rule = cached_jacobi_quadrature(cfg.d, default_node_count(ell_max));
  std::vector<double> t(rule->size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(rule->nodes[i]);
  return empirical_spectrum(empirical_kernel(cfg, t, replicas), *rule, ell_max);
}

Comparison compare(const SpectralLaw& analytic, const EmpiricalSpectrum& emp, const DeepKernel* exact) {
  if (analytic.d != emp.d) throw DomainError("analytic and empirical spectra live on different spheres");
  Comparison c;
  std::vector<double> g(analytic.ell_max + 1);
  for (std::size_t i = 0; i < emp.t_nodes.size(); ++i) {
    const double t = emp.t_nodes[i];
    double ref;
    if (exact) {
      ref = (*exact)(t);
    } else {
      std::vector<Real> gl(analytic.ell_max + 1);
      gegenbauer_table(analytic.ell_max, analytic.d, Real(t), gl.data());
      Real s = 0;
      for (int l = analytic.ell_max; l >= 0; --l) s += analytic.masses[l] * gl[l];
      ref = static_cast<double>(s);
    }
    c.sup_kernel_err = std::max(c.sup_kernel_err, std::abs(emp.kernel[i] - ref));
  }
  c.ell_compared = std::min({20, analytic.ell_max, emp.ell_max});
  for (int l = 0; l <= c.ell_compared; ++l) {
    const double diff = emp.masses[l] - analytic.masses[l];
    c.l1_mass_err += std::abs(diff);
    if (emp.mass_se[l] > 0) {
      const double z = std::abs(diff) / emp.mass_se[l];
      c.max_abs_z = std::max(c.max_abs_z, z);
      if (z > 3) ++c.z_over_3;
    }
  }
  return c;
}

nlohmann::json comparison_to_json(const Comparison& c) {
  return {{"sup_kernel_err", c.sup_kernel_err},
          {"l1_mass_err", c.l1_mass_err},
          {"max_abs_z", c.max_abs_z},
          {"z_over_3", c.z_over_3},
          {"ell_compared", c.ell_compared}};
}

void write_kernel_csv(std::ostream& os, const EmpiricalSpectrum& e) {
  os << "t,kappa_hat,se\n";
  char buf[96];
  for (std::size_t i = 0; i < e.t_nodes.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", e.t_nodes[i], e.kernel[i], e.kernel_se[i]);
    os << buf;
  }
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw DomainError("empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double D = 0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    D = std::max(D, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  return D;
}

double ks_critical(std::size_t n, std::size_t m, double alpha) {
  if (!(alpha > 0 && alpha < 1)) throw DomainError("alpha must lie in (0, 1)");
  return std::sqrt(-std::log(alpha / 2) / 2) * std::sqrt(double(n + m) / (double(n) * m));
}

}  // namespace nnspec
