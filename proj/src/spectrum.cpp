#include "nnspec/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include <boost/math/tools/roots.hpp>

#include "nnspec/errors.hpp"
#include "nnspec/parallel.hpp"
#include "nnspec/summation.hpp"

namespace nnspec {

namespace {

constexpr double kNegativeMassTolerance = 1e-9;
constexpr int kFirstEllMax = 64;
constexpr int kMaxBlocks = 8;
constexpr int kCompletionEllMax = 2048;
constexpr int kMomentNodesPerEll = 8;
constexpr double kOctaveTolerance = 1e-12;

struct Projection {
  std::vector<std::vector<Real>> D;  // per depth index
  int nodes = 0;
};

// Gegenbauer coefficients of kappa_L for every requested depth, all with the
// same truncation. Node blocks are fixed by n alone, so the reduction order
// (and therefore every bit of the result) does not depend on the thread count.
Projection project(const ShallowKernel& base, const std::vector<int>& depths, int d, int ell_max, int n) {
  auto rule = cached_jacobi_quadrature(d, n);
  const auto& x = rule->nodes;
  const auto& w = rule->weights;
  const std::size_t half = n / 2;
  const bool middle = n % 2 == 1;
  const std::size_t npos = half + (middle ? 1 : 0);
  const int max_depth = *std::max_element(depths.begin(), depths.end());
  const std::size_t nd = depths.size();

  // kp[j][i], km[j][i]: kappa_{depth j} at +x_i and -x_i, where x_i >= 0 runs
  // over the upper half of the rule (index n - 1 - i)
  std::vector<std::vector<Real>> kp(nd, std::vector<Real>(npos)), km(nd, std::vector<Real>(npos));
  std::vector<int> slot(max_depth + 1, -1);
  for (std::size_t j = 0; j < nd; ++j) slot[depths[j]] = static_cast<int>(j);
  parallel_for(npos, 64, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      Real up = x[n - 1 - i], dn = -up;
      for (int L = 1; L <= max_depth; ++L) {
        up = compose_step(base, up);
        dn = compose_step(base, dn);
        if (int j = slot[L]; j >= 0) {
          kp[j][i] = up;
          km[j][i] = dn;
        }
      }
    }
  });

  const std::size_t block = std::max<std::size_t>(256, (npos + kMaxBlocks - 1) / kMaxBlocks);
  const std::size_t nblocks = (npos + block - 1) / block;
  const std::size_t width = ell_max + 1;
  std::vector<Real> partial(nblocks * nd * width, 0);
  parallel_for(nblocks, 1, [&](std::size_t b0, std::size_t b1) {
    std::vector<Real> g(width);
    for (std::size_t blk = b0; blk < b1; ++blk) {
      Real* acc = &partial[blk * nd * width];
      for (std::size_t i = blk * block; i < std::min(npos, (blk + 1) * block); ++i) {
        const std::size_t idx = n - 1 - i;
        gegenbauer_table(ell_max, d, x[idx], g.data());
        // the middle node of an odd rule is x = 0 and has no mirror
        const bool single = middle && i == half;
        for (std::size_t j = 0; j < nd; ++j) {
          Real* a = acc + j * width;
          Real even = w[idx] * (single ? kp[j][i] : kp[j][i] + km[j][i]);
          Real odd = single ? Real(0) : w[idx] * (kp[j][i] - km[j][i]);
          for (std::size_t l = 0; l < width; l += 2) a[l] += even * g[l];
          for (std::size_t l = 1; l < width; l += 2) a[l] += odd * g[l];
        }
      }
    }
  });

  Projection out;
  out.nodes = n;
  const Real mu0 = jacobi_weight_mass(d);
  out.D.assign(nd, std::vector<Real>(width, 0));
  for (std::size_t j = 0; j < nd; ++j)
    for (std::size_t l = 0; l < width; ++l) {
      Real s = 0;
      for (std::size_t blk = 0; blk < nblocks; ++blk) s += partial[(blk * nd + j) * width + l];
      out.D[j][l] = s * eigenspace_dim_real(static_cast<int>(l), d) / mu0;
    }
  return out;
}

SpectralLaw finish(const ShallowKernel& base, int d, int depth, const std::vector<Real>& D, int nodes,
                   double tail_target) {
  SpectralLaw law;
  law.d = d;
  law.depth = depth;
  law.ell_max = static_cast<int>(D.size()) - 1;
  law.nodes = nodes;
  law.tail_target = tail_target;
  law.activation = base.activation().label();
  law.gamma_b = base.gamma_b();
  law.kernel_smoothness = base.smoothness();
  law.masses.resize(D.size());
  for (std::size_t l = 0; l < D.size(); ++l) {
    Real v = D[l];
    if (!std::isfinite(v)) throw NumericalIntegrityError("non-finite spectral mass");
    if (v < 0) {
      if (v < -kNegativeMassTolerance) {
        std::ostringstream os;
        os << "spectral mass D_" << l << " = " << static_cast<double>(v) << " is negative beyond roundoff";
        throw NumericalIntegrityError(os.str());
      }
      v = 0;
      ++law.clamped;
    }
    law.masses[l] = static_cast<double>(v);
  }
  CompensatedSum<Real> sum;
  for (std::size_t l = D.size(); l-- > 0;) sum.add(law.masses[l]);
  Real tail = 1 - sum.value();
  if (tail < -kNegativeMassTolerance) {
    std::ostringstream os;
    os << "spectral masses sum to " << static_cast<double>(sum.value()) << " > 1";
    throw NumericalIntegrityError(os.str());
  }
  law.tail_mass = static_cast<double>(std::max(tail, Real(0)));
  return law;
}

void check_law_args(int d, const std::vector<int>& depths, const LawOptions& opts) {
  if (d < 2) throw DomainError("spectral law needs d >= 2");
  if (depths.empty()) throw DomainError("no depths requested");
  for (int L : depths)
    if (L < 1) throw DomainError("depth must be >= 1");
  if (opts.ell_max < 0 && !(opts.tail_target > 0 && opts.tail_target < 1))
    throw DomainError("tail_target must lie in (0, 1)");
  if (opts.ell_cap < 0) throw DomainError("ell_cap must be >= 0");
}

int node_count(const LawOptions& opts, int ell_max) {
  if (opts.nodes_per_ell < 2) throw DomainError("nodes_per_ell must be >= 2");
  if (opts.nodes <= 0) return default_node_count(ell_max, opts.nodes_per_ell);
  if (opts.nodes < 2 * ell_max + 32) {
    std::ostringstream os;
    os << opts.nodes << " quadrature nodes cannot resolve ell_max = " << ell_max << "; need at least "
       << 2 * ell_max + 32;
    throw DomainError(os.str());
  }
  return opts.nodes;
}

// sum_{l <= M} weight(l) D_l, large l first
Real partial_sum(const SpectralLaw& law, int M, const std::function<Real(int)>& weight) {
  CompensatedSum<Real> s;
  for (int l = M; l >= 0; --l)
    if (law.masses[l] != 0) s.add(weight(l) * Real(law.masses[l]));
  return s.value();
}

// Tail of sum weight(l) D_l when weight grows like l^degree. Finite smoothness
// s gives D_l ~ l^{-2s-2}, so the partial sums approach the limit like
// M^{-(2s+1-degree)} with corrections in integer powers. Three Richardson
// steps on M/8, M/4, M/2, M remove the first three terms.
MomentEstimate weighted_sum(const SpectralLaw& law, int degree, const std::function<Real(int)>& weight) {
  MomentEstimate m;
  const int smooth = law.kernel_smoothness;
  m.divergent = smooth != kInfiniteSmoothness && degree > 2 * smooth;
  const Real full = partial_sum(law, law.ell_max, weight);
  m.truncated = static_cast<double>(full);
  m.value = m.truncated;
  if (m.divergent || smooth == kInfiniteSmoothness || law.ell_max < 64) return m;

  const int M = law.ell_max - law.ell_max % 8;
  Real T[4];
  for (int j = 0; j < 4; ++j) T[j] = partial_sum(law, (M / 8) << j, weight);
  int e = 2 * smooth + 1 - degree;
  for (int level = 0; level < 3; ++level, ++e) {
    Real f = std::ldexp(Real(1), e);
    for (int j = 0; j + 1 < 4 - level; ++j) T[j] = (f * T[j + 1] - T[j]) / (f - 1);
  }
  m.value = static_cast<double>(T[0]);
  m.completed = true;
  return m;
}

}  // namespace

int default_node_count(int ell_max, int nodes_per_ell) { return std::max(nodes_per_ell * ell_max + 32, 128); }

std::vector<double> project_samples(const QuadratureRule& rule, const double* f, int ell_max) {
  if (ell_max < 0) throw DomainError("ell_max must be >= 0");
  const int d = rule.dim_d;
  std::vector<Real> acc(ell_max + 1, 0), g(ell_max + 1);
  for (std::size_t i = 0; i < rule.size(); ++i) {
    gegenbauer_table(ell_max, d, rule.nodes[i], g.data());
    const Real wf = rule.weights[i] * Real(f[i]);
    for (int l = 0; l <= ell_max; ++l) acc[l] += wf * g[l];
  }
  const Real mu0 = jacobi_weight_mass(d);
  std::vector<double> out(ell_max + 1);
  for (int l = 0; l <= ell_max; ++l) out[l] = static_cast<double>(acc[l] * eigenspace_dim_real(l, d) / mu0);
  return out;
}

std::vector<SpectralLaw> spectral_laws(const ShallowKernel& base, const std::vector<int>& depths, int d,
                                       const LawOptions& opts) {
  check_law_args(d, depths, opts);
  std::vector<SpectralLaw> out(depths.size());
  if (opts.ell_max >= 0) {
    const int n = node_count(opts, opts.ell_max);
    auto p = project(base, depths, d, opts.ell_max, n);
    for (std::size_t j = 0; j < depths.size(); ++j) out[j] = finish(base, d, depths[j], p.D[j], n, 0);
    return out;
  }

  std::vector<std::size_t> pending(depths.size());
  for (std::size_t j = 0; j < depths.size(); ++j) pending[j] = j;
  int ell = std::min(kFirstEllMax, opts.ell_cap);
  while (!pending.empty()) {
    std::vector<int> ds;
    for (auto j : pending) ds.push_back(depths[j]);
    const int n = node_count(opts, ell);
    auto p = project(base, ds, d, ell, n);
    std::vector<std::size_t> still;
    for (std::size_t k = 0; k < pending.size(); ++k) {
      auto law = finish(base, d, ds[k], p.D[k], n, opts.tail_target);
      if (law.tail_mass < opts.tail_target || ell >= opts.ell_cap) {
        law.cap_hit = law.tail_mass >= opts.tail_target;
        out[pending[k]] = std::move(law);
      } else {
        still.push_back(pending[k]);
      }
    }
    pending = std::move(still);
    ell = std::min(2 * ell, opts.ell_cap);
  }
  return out;
}

SpectralLaw spectral_law(const DeepKernel& k, int d, const LawOptions& opts) {
  return spectral_laws(k.base(), {k.depth()}, d, opts).front();
}

std::vector<SpectralLaw> moment_laws(const ShallowKernel& base, const std::vector<int>& depths, int d, int k_max) {
  if (k_max < 0) throw DomainError("k_max must be >= 0");
  LawOptions opts;
  opts.nodes_per_ell = kMomentNodesPerEll;
  if (base.smoothness() != kInfiniteSmoothness) {
    // projection noise near 2e-20 l per mass grows like M^{k + 3/2} in the
    // l^k sum; keep that below 1e-6 but never go under 256
    opts.ell_max = kCompletionEllMax;
    while (opts.ell_max > 256 && 2e-20 * std::pow(double(opts.ell_max), k_max + 1.5) > 1e-6) opts.ell_max /= 2;
    return spectral_laws(base, depths, d, opts);
  }
  check_law_args(d, depths, opts);
  auto octave = [k_max](const SpectralLaw& law, Real& total) {
    CompensatedSum<Real> top, all;
    for (int l = law.ell_max; l >= 0; --l) {
      Real v = std::pow(Real(l), Real(k_max)) * Real(law.masses[l]);
      all.add(v);
      if (2 * l > law.ell_max) top.add(v);
    }
    total = all.value();
    return top.value();
  };

  std::vector<SpectralLaw> out(depths.size());
  std::vector<Real> last(depths.size(), -1);
  std::vector<std::size_t> pending(depths.size());
  for (std::size_t j = 0; j < depths.size(); ++j) pending[j] = j;
  for (int ell = kFirstEllMax; !pending.empty(); ell *= 2) {
    opts.ell_max = ell;
    std::vector<int> ds;
    for (auto j : pending) ds.push_back(depths[j]);
    auto laws = spectral_laws(base, ds, d, opts);
    std::vector<std::size_t> still;
    for (std::size_t k = 0; k < pending.size(); ++k) {
      const auto j = pending[k];
      Real total;
      Real top = octave(laws[k], total);
      if (last[j] >= 0 && top >= last[j]) continue;  // noise floor: keep the previous law
      out[j] = std::move(laws[k]);
      last[j] = top;
      if (top > kOctaveTolerance * std::abs(total) && ell < opts.ell_cap) still.push_back(j);
    }
    pending = std::move(still);
  }
  return out;
}

SpectralLaw moment_law(const DeepKernel& k, int d, int k_max) {
  return moment_laws(k.base(), {k.depth()}, d, k_max).front();
}

MomentEstimate moment(const SpectralLaw& law, int k) {
  if (k < 1) throw DomainError("moment order must be >= 1");
  return weighted_sum(law, k, [k](int l) { return std::pow(Real(l), Real(k)); });
}

std::vector<MomentEstimate> moments(const SpectralLaw& law, int K) {
  std::vector<MomentEstimate> out;
  for (int k = 1; k <= K; ++k) out.push_back(moment(law, k));
  return out;
}

std::vector<double> moment_identity_coeffs(int s, int d) {
  if (s < 1) throw DomainError("identity order must be >= 1");
  // a[i] for i = 0..2s, a[0] stays zero
  std::vector<double> a = {0, double(d - 1), 1};
  for (int t = 1; t < s; ++t) {
    std::vector<double> b(2 * t + 3, 0);
    for (int i = 1; i <= 2 * t + 2; ++i) {
      double v = 0;
      if (i - 2 >= 1) v += a[i - 2];
      if (i - 1 >= 1 && i - 1 <= 2 * t) v += (d - 1) * a[i - 1];
      if (i <= 2 * t) v -= double(t) * (d + t - 1) * a[i];
      b[i] = v;
    }
    a = std::move(b);
  }
  return std::vector<double>(a.begin() + 1, a.end());
}

MomentEstimate falling_moment(const SpectralLaw& law, int s) {
  if (s < 1) throw DomainError("identity order must be >= 1");
  const int d = law.d;
  return weighted_sum(law, 2 * s, [s, d](int l) {
    Real p = 1;
    for (int j = 0; j < s; ++j) p *= Real(l - j) * Real(l + d + j - 1);
    return p;
  });
}

IdentityCheck verify_moment_identity(const SpectralLaw& law, const DerivativeTower& tower, int s) {
  if (tower.depth != law.depth) throw DomainError("tower and law have different depths");
  if (s < 1 || s > tower.max_order) throw DomainError("identity order outside the tower");
  if (s > law.kernel_smoothness) {
    std::ostringstream os;
    os << "E[X^" << 2 * s << "] is infinite for a kernel with " << law.kernel_smoothness << " derivative(s) at 1";
    throw InsufficientSmoothness(os.str());
  }
  IdentityCheck c;
  c.s = s;
  auto lhs = falling_moment(law, s);
  c.lhs = lhs.value;
  c.completed = lhs.completed;
  c.rhs = double_factorial_ratio(s, law.d) * static_cast<double>(tower[s]);
  c.residual = std::abs(c.lhs - c.rhs) / std::max(1.0, std::abs(c.rhs));
  return c;
}

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::Low: return "low";
    case Regime::Sparse: return "sparse";
    case Regime::High: return "high";
  }
  return "?";
}

RegimeReport classify(const ShallowKernel& base, double band) {
  if (!(band >= 0)) throw DomainError("band must be >= 0");
  RegimeReport r;
  r.band = band;
  r.kappa_prime_1 = base.derivative_at_one(1);
  if (std::abs(r.kappa_prime_1 - 1) <= band)
    r.regime = Regime::Sparse;
  else
    r.regime = r.kappa_prime_1 < 1 ? Regime::Low : Regime::High;
  return r;
}

double regime_boundary(const std::string& activation, const std::string& param, double lo, double hi) {
  auto f = [&](double a) {
    auto act = make_activation(activation, {{param, a}});
    return default_kernel(act).derivative_at_one(1) - 1;
  };
  double flo = f(lo), fhi = f(hi);
  if (flo == 0) return lo;
  if (fhi == 0) return hi;
  if ((flo < 0) == (fhi < 0)) throw DomainError("kappa'(1) - 1 does not change sign on the interval");
  std::uintmax_t iters = 200;
  auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi, boost::math::tools::eps_tolerance<double>(50),
                                                  iters);
  return (a + b) / 2;
}

int effective_support(const SpectralLaw& law, double alpha) {
  if (!(alpha > 0 && alpha < 1)) throw DomainError("alpha must lie in (0, 1)");
  if (law.tail_mass > alpha) {
    std::ostringstream os;
    os << "tail mass " << law.tail_mass << " exceeds alpha = " << alpha << "; raise ell_max";
    throw UnderResolved(os.str());
  }
  CompensatedSum<Real> cum;
  for (int l = 0; l <= law.ell_max; ++l) {
    cum.add(law.masses[l]);
    if (cum.value() >= Real(1) - Real(alpha) - Real(1e-12)) return l;
  }
  return law.ell_max;
}

std::uint64_t effective_dimension(const SpectralLaw& law, double alpha) {
  const int C = effective_support(law, alpha);
  std::uint64_t total = 0;
  for (int l = 0; l <= C; ++l) {
    std::uint64_t n = eigenspace_dim(l, law.d);
    if (total > UINT64_MAX - n) throw OverflowError("effective dimension exceeds 64 bits");
    total += n;
  }
  return total;
}

MomentEstimate derivative_variance(const SpectralLaw& law, int r) {
  if (r < 1) throw DomainError("derivative order r must be >= 1");
  const int d = law.d;
  return weighted_sum(law, 2 * r, [r, d](int l) { return std::pow(Real(l) * Real(l + d - 1), Real(r)); });
}

nlohmann::json law_to_json(const SpectralLaw& law, const LawReport& report) {
  nlohmann::json j;
  j["d"] = law.d;
  j["L"] = law.depth;
  j["activation"] = law.activation;
  j["gamma_b"] = law.gamma_b;
  j["masses"] = law.masses;
  j["tail_mass"] = law.tail_mass;
  j["quadrature"] = {{"nodes", law.nodes},
                     {"ell_max", law.ell_max},
                     {"tail_target", law.tail_target},
                     {"cap_hit", law.cap_hit},
                     {"clamped", law.clamped}};
  if (law.kernel_smoothness == kInfiniteSmoothness)
    j["kernel_smoothness"] = "infinite";
  else
    j["kernel_smoothness"] = law.kernel_smoothness;
  auto& mj = j["moments"] = nlohmann::json::array();
  for (std::size_t k = 0; k < report.moments.size(); ++k) {
    const auto& m = report.moments[k];
    mj.push_back({{"k", k + 1},
                  {"value", m.value},
                  {"truncated", m.truncated},
                  {"completed", m.completed},
                  {"divergent", m.divergent}});
  }
  if (report.regime)
    j["regime"] = {{"kappa_prime_1", report.regime->kappa_prime_1},
                   {"regime", regime_name(report.regime->regime)},
                   {"band", report.regime->band}};
  else
    j["regime"] = nullptr;
  auto& ca = j["C_alpha"] = nlohmann::json::array();
  auto& da = j["D_alpha"] = nlohmann::json::array();
  for (auto [alpha, C] : report.supports) {
    std::uint64_t dim = 0;
    for (int l = 0; l <= C; ++l) dim += eigenspace_dim(l, law.d);
    ca.push_back({{"alpha", alpha}, {"value", C}});
    da.push_back({{"alpha", alpha}, {"value", dim}});
  }
  return j;
}

SpectralLaw law_from_json(const nlohmann::json& j) {
  SpectralLaw law;
  try {
    law.d = j.at("d");
    law.depth = j.at("L");
    law.activation = j.at("activation");
    law.gamma_b = j.at("gamma_b");
    law.masses = j.at("masses").get<std::vector<double>>();
    law.tail_mass = j.at("tail_mass");
    const auto& q = j.at("quadrature");
    law.nodes = q.at("nodes");
    law.ell_max = q.at("ell_max");
    law.tail_target = q.at("tail_target");
    law.cap_hit = q.at("cap_hit");
    law.clamped = q.at("clamped");
    const auto& ks = j.at("kernel_smoothness");
    law.kernel_smoothness = ks.is_string() ? kInfiniteSmoothness : ks.get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("not a spectral law document: ") + e.what());
  }
  if (law.ell_max + 1 != static_cast<int>(law.masses.size())) throw DomainError("law document: ell_max and masses disagree");
  return law;
}

void write_law_csv(std::ostream& os, const SpectralLaw& law) {
  os << "ell,mass,cumulative,n_ell_d\n";
  CompensatedSum<Real> cum;
  char buf[128];
  for (int l = 0; l <= law.ell_max; ++l) {
    cum.add(law.masses[l]);
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", l, law.masses[l], static_cast<double>(cum.value()),
                  static_cast<double>(eigenspace_dim_real(l, law.d)));
    os << buf;
  }
}

}  // namespace nnspec
