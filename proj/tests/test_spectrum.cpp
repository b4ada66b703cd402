#include <doctest.h>

#include <boost/math/special_functions/legendre.hpp>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "nnspec/errors.hpp"
#include "nnspec/parallel.hpp"
#include "nnspec/spectrum.hpp"
#include "oracles.hpp"

using namespace nnspec;

namespace {

// relu kernel at u = cos(theta), smooth in theta
double relu_angle(double th) {
  return (std::cos(th) * (std::numbers::pi - th) + std::sin(th)) / std::numbers::pi;
}

// D_l on S^2 by adaptive quadrature against Legendre polynomials, in the angle
double legendre_mass(const std::function<double(double)>& k_angle, int l) {
  auto f = [&](double th) { return k_angle(th) * boost::math::legendre_p(l, std::cos(th)) * std::sin(th); };
  return (2 * l + 1) / 2.0 * oracle::integrate(f, 0, std::numbers::pi);
}

// D_l on S^3: G_l = U_l / (l + 1), weight sqrt(1 - t^2), n_l = (l + 1)^2,
// total weight pi / 2. With t = cos(theta) the integrand is smooth.
double s3_mass(const std::function<double(double)>& k, int l) {
  auto f = [&](double th) { return k(std::cos(th)) * std::sin((l + 1) * th) * std::sin(th); };
  return (l + 1) * oracle::integrate(f, 0, std::numbers::pi) / (std::numbers::pi / 2);
}

LawOptions fixed(int ell_max) {
  LawOptions o;
  o.ell_max = ell_max;
  return o;
}

void check_probability(const SpectralLaw& law) {
  long double s = 0;
  for (double m : law.masses) {
    CHECK(m >= 0);
    s += m;
  }
  CHECK(law.tail_mass >= 0);
  CHECK(std::abs(double(s + law.tail_mass) - 1) <= 1e-10);
}

}  // namespace

TEST_CASE("identity kernel is a point mass at one") {
  auto id = closed_form_kernel("identity");
  for (int L : {1, 4}) {
    auto law = spectral_law(DeepKernel(id, L), 2, fixed(20));
    CHECK(law.masses[1] == doctest::Approx(1.0).epsilon(1e-15));
    for (int l = 0; l <= 20; ++l)
      if (l != 1) CHECK(std::abs(law.masses[l]) < 1e-15);
    for (auto& m : moments(law, 6)) CHECK(m.value == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(effective_support(law, 0.5) == 1);
    CHECK(effective_dimension(law, 0.5) == 4);
    CHECK(derivative_variance(law, 1).value == doctest::Approx(2.0).epsilon(1e-14));
    auto tower = deep_derivative_tower(id, L, 2);
    auto c = verify_moment_identity(law, tower, 2);
    CHECK(std::abs(c.lhs) < 1e-13);
    CHECK(c.rhs == 0.0);
  }
}

TEST_CASE("relu shallow law against quadrature") {
  auto law = spectral_law(DeepKernel(closed_form_kernel("relu"), 1), 2, fixed(32));
  CHECK(law.masses[0] == doctest::Approx(0.375).epsilon(1e-10));
  CHECK(law.masses[1] == doctest::Approx(0.5).epsilon(1e-10));
  for (int l : {0, 1, 2, 4, 10, 20})
    CHECK(law.masses[l] == doctest::Approx(legendre_mass(relu_angle, l)).epsilon(1e-6));
  // the (1-t)^{3/2} endpoint limits Gauss accuracy; more nodes per l fixes it
  auto fine = spectral_law(DeepKernel(closed_form_kernel("relu"), 1), 2, fixed(256));
  for (int l : {2, 4, 10, 20})
    CHECK(fine.masses[l] == doctest::Approx(legendre_mass(relu_angle, l)).epsilon(1e-9));
  // relu's odd part is u / 2 exactly
  for (int l = 3; l <= 31; l += 2) CHECK(law.masses[l] < 1e-16);
  CHECK(law.nodes == 160);
  check_probability(law);
  CHECK(effective_support(law, 0.2) == 1);

  auto m1 = moment(law, 1), m2 = moment(law, 2);
  CHECK_FALSE(m1.completed);  // too short for completion
  CHECK(moment(moment_law(DeepKernel(closed_form_kernel("relu"), 1), 2, 2), 1).completed);
  CHECK_FALSE(m2.divergent);
  CHECK(moment(law, 3).divergent);
  CHECK_FALSE(moment(law, 3).completed);
}

TEST_CASE("masses on S^3 against quadrature") {
  for (const auto& k : {closed_form_kernel("relu"), closed_form_kernel("gaussian", {{"a", 0.8}}),
                        shallow_kernel(make_activation("tanh"))}) {
    CAPTURE(k.describe());
    DeepKernel deep(k, 2);
    auto law = spectral_law(deep, 3, fixed(24));
    check_probability(law);
    auto f = [&](double t) { return deep(t); };
    for (int l : {0, 1, 2, 3, 7, 12}) CHECK(std::abs(law.masses[l] - s3_mass(f, l)) <= 1e-6 * law.masses[l] + 1e-14);
  }
}

TEST_CASE("law bookkeeping") {
  auto relu = closed_form_kernel("relu");
  auto tanh_k = shallow_kernel(make_activation("tanh"));

  LawOptions t;
  t.tail_target = 1e-8;
  auto law = spectral_law(DeepKernel(relu, 3), 2, t);
  CHECK(law.tail_mass < 1e-8);
  CHECK_FALSE(law.cap_hit);
  CHECK(law.ell_max >= 64);
  CHECK(law.tail_target == 1e-8);
  check_probability(law);

  t.ell_cap = 64;
  t.tail_target = 1e-12;
  auto capped = spectral_law(DeepKernel(tanh_k, 40), 2, t);
  CHECK(capped.cap_hit);
  CHECK(capped.ell_max == 64);
  CHECK(capped.tail_mass >= 1e-12);
  check_probability(capped);

  LawOptions bad;
  bad.ell_max = 100;
  bad.nodes = 200;
  CHECK_THROWS_AS(spectral_law(DeepKernel(relu, 1), 2, bad), DomainError);
  CHECK_THROWS_AS(spectral_law(DeepKernel(relu, 1), 1, fixed(10)), DomainError);
  bad.nodes = 232;
  CHECK_NOTHROW(spectral_law(DeepKernel(relu, 1), 2, bad));
  CHECK(default_node_count(10) == 128);
  CHECK(default_node_count(100) == 432);

  // batch and single paths agree bit for bit
  auto batch = spectral_laws(tanh_k, {1, 5, 9}, 2, fixed(48));
  auto single = spectral_law(DeepKernel(tanh_k, 5), 2, fixed(48));
  CHECK(batch[1].masses == single.masses);
  CHECK(batch[1].depth == 5);
  CHECK(batch[2].activation == "tanh");
}

TEST_CASE("results do not depend on the thread count") {
  auto k = shallow_kernel(make_activation("gelu"));
  set_thread_count(1);
  auto a = spectral_laws(k, {1, 3, 7}, 2, fixed(300));
  set_thread_count(4);
  auto b = spectral_laws(k, {1, 3, 7}, 2, fixed(300));
  set_thread_count(3);
  auto c = spectral_laws(k, {1, 3, 7}, 4, fixed(300));
  set_thread_count(1);
  auto e = spectral_laws(k, {1, 3, 7}, 4, fixed(300));
  set_thread_count(0);
  for (int i = 0; i < 3; ++i) {
    CHECK(a[i].masses == b[i].masses);
    CHECK(c[i].masses == e[i].masses);
    CHECK(a[i].tail_mass == b[i].tail_mass);
  }
}

TEST_CASE("moment identity coefficients") {
  for (int d : {2, 3, 5}) {
    auto a1 = moment_identity_coeffs(1, d);
    CHECK(a1 == std::vector<double>{double(d - 1), 1});
    auto a2 = moment_identity_coeffs(2, d);
    CHECK(a2 == std::vector<double>{-double(d) * (d - 1), double((d - 1) * (d - 1) - d), 2.0 * (d - 1), 1});
    for (int s = 1; s <= 6; ++s) {
      auto a = moment_identity_coeffs(s, d);
      REQUIRE(a.size() == std::size_t(2 * s));
      CHECK(a[2 * s - 1] == 1);
      CHECK(a[2 * s - 2] == s * (d - 1));
      // sum_i a_i x^i against the product form
      for (double x : {0.0, 1.0, 2.5, 7.0, 13.0}) {
        double lhs = 0, rhs = 1;
        for (int i = 1; i <= 2 * s; ++i) lhs += a[i - 1] * std::pow(x, i);
        for (int j = 0; j < s; ++j) rhs *= (x - j) * (x + d + j - 1);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12).scale(1));
      }
    }
  }
  CHECK_THROWS_AS(moment_identity_coeffs(0, 2), DomainError);
}

TEST_CASE("moment identity across both paths") {
  auto tanh_k = shallow_kernel(make_activation("tanh"));
  auto laws = moment_laws(tanh_k, {1, 2, 4}, 2, 6);
  for (const auto& law : laws) {
    auto tower = deep_derivative_tower(tanh_k, law.depth, 3);
    for (int s = 1; s <= 3; ++s) {
      CAPTURE(law.depth);
      CAPTURE(s);
      auto c = verify_moment_identity(law, tower, s);
      CHECK(c.residual <= 1e-6);
      // falling-factorial sum against the coefficient form on plain moments
      auto a = moment_identity_coeffs(s, 2);
      double lhs = 0;
      for (int i = 1; i <= 2 * s; ++i) lhs += a[i - 1] * moment(law, i).value;
      CHECK(lhs == doctest::Approx(c.lhs).epsilon(1e-9));
    }
  }

  auto relu = closed_form_kernel("relu");
  std::vector<int> depths = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  auto rl = moment_laws(relu, depths, 2, 2);
  for (const auto& law : rl) {
    CAPTURE(law.depth);
    auto tower = deep_derivative_tower(relu, law.depth, 1);
    auto c = verify_moment_identity(law, tower, 1);
    CHECK(c.completed);
    CHECK(c.residual <= 1e-6);
    CHECK(c.rhs == 2.0);
    CHECK_THROWS_AS(verify_moment_identity(law, tower, 2), DomainError);
  }
  auto t2 = deep_derivative_tower(closed_form_kernel("gaussian"), 1, 2);
  CHECK_THROWS_AS(verify_moment_identity(rl[1], t2, 1), DomainError);
  // (d - 1) E[X] + E[X^2] = d at the edge of chaos
  CHECK(moment(rl[0], 1).value + moment(rl[0], 2).value == doctest::Approx(2.0).epsilon(1e-6));
  CHECK_THROWS_AS(verify_moment_identity(rl[0], deep_derivative_tower(closed_form_kernel("repu"), 1, 2), 2),
                  InsufficientSmoothness);
}

TEST_CASE("repu moments with tail completion") {
  auto repu = closed_form_kernel("repu");
  auto law = moment_law(DeepKernel(repu, 2), 2, 4);
  auto tower = deep_derivative_tower(repu, 2, 2);
  CHECK(verify_moment_identity(law, tower, 1).residual <= 1e-6);
  CHECK(verify_moment_identity(law, tower, 2).residual <= 1e-5);
  CHECK(moment(law, 5).divergent);
  CHECK_FALSE(moment(law, 4).divergent);
}

TEST_CASE("Hoelder consistency of moments") {
  auto law = moment_law(DeepKernel(shallow_kernel(make_activation("tanh")), 3), 2, 8);
  for (int k = 1; k <= 6; ++k) {
    double a = moment(law, k).value, b = moment(law, k + 2).value;
    CHECK(a <= std::pow(b, double(k) / (k + 2)) * (1 + 1e-12));
  }
}

TEST_CASE("regimes") {
  CHECK(classify(closed_form_kernel("relu")).regime == Regime::Sparse);
  CHECK(classify(closed_form_kernel("lrelu")).regime == Regime::Sparse);
  CHECK(classify(closed_form_kernel("prelu")).regime == Regime::Sparse);
  CHECK(classify(closed_form_kernel("repu")).regime == Regime::High);
  CHECK(classify(shallow_kernel(make_activation("tanh"))).regime == Regime::High);
  CHECK(classify(closed_form_kernel("gaussian")).regime == Regime::Low);
  CHECK(classify(closed_form_kernel("exponential", {{"a", 0.9}})).regime == Regime::Low);
  CHECK(classify(closed_form_kernel("exponential", {{"a", 1.1}})).regime == Regime::High);
  CHECK(classify(closed_form_kernel("identity")).regime == Regime::Sparse);
  // E[Phi'(Z)^2] / E[Phi(Z)^2] = 3 / (2 pi sqrt 3) < 1
  auto cdf = classify(shallow_kernel(make_activation("normal_cdf")));
  CHECK(cdf.regime == Regime::Low);
  CHECK(cdf.kappa_prime_1 == doctest::Approx(std::sqrt(3.0) / (2 * std::numbers::pi)).epsilon(1e-10));
  // gelu's slope sits above 1
  CHECK(classify(shallow_kernel(make_activation("gelu"))).regime == Regime::High);

  double g = std::sqrt(1 + std::sqrt(2.0));
  CHECK(classify(closed_form_kernel("gaussian", {{"a", g}})).regime == Regime::Sparse);
  auto wide = classify(closed_form_kernel("exponential", {{"a", 1.01}}), 0.05);
  CHECK(wide.regime == Regime::Sparse);
  CHECK(wide.band == 0.05);
  CHECK(regime_name(Regime::High) == "high");

  CHECK(regime_boundary("exponential", "a", 0.5, 1.5) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(regime_boundary("gaussian", "a", 1, 2) == doctest::Approx(g).epsilon(1e-12));
  // positive root of a^2 tanh(a^2) = 1 by bisection on the test side
  double lo = 1, hi = 1.2;
  for (int i = 0; i < 100; ++i) {
    double mid = (lo + hi) / 2;
    (mid * mid * std::tanh(mid * mid) < 1 ? lo : hi) = mid;
  }
  double c = regime_boundary("cosine", "a", 0.5, 2);
  CHECK(c == doctest::Approx(lo).epsilon(1e-12));
  CHECK(c > 1.09);
  CHECK(c < 1.1);
  CHECK_THROWS_AS(regime_boundary("exponential", "a", 2, 3), DomainError);
}

TEST_CASE("effective support and dimension") {
  auto relu = closed_form_kernel("relu");
  auto law = spectral_law(DeepKernel(relu, 1), 2, fixed(64));
  CHECK(effective_support(law, 0.2) == 1);
  CHECK(effective_dimension(law, 0.2) == 4);
  for (double alpha : {0.1, 0.05, 0.02, 0.01}) {
    int C = effective_support(law, alpha);
    CHECK(effective_dimension(law, alpha) == std::uint64_t((C + 1) * (C + 1)));
    // minimality
    double cum = 0;
    for (int l = 0; l < C; ++l) cum += law.masses[l];
    CHECK(cum < 1 - alpha);
    CHECK(cum + law.masses[C] >= 1 - alpha - 1e-12);
  }
  LawOptions coarse;
  coarse.ell_max = 4;
  auto rough = spectral_law(DeepKernel(relu, 30), 2, coarse);
  CHECK_THROWS_AS(effective_support(rough, rough.tail_mass / 2), UnderResolved);
  CHECK_THROWS_AS(effective_support(law, 0), DomainError);
  CHECK_THROWS_AS(effective_support(law, 1), DomainError);
  // S^3: dimensions (l + 1)^2
  auto l3 = spectral_law(DeepKernel(relu, 1), 3, fixed(64));
  int C = effective_support(l3, 0.05);
  std::uint64_t dim = 0;
  for (int l = 0; l <= C; ++l) dim += (l + 1) * (l + 1);
  CHECK(effective_dimension(l3, 0.05) == dim);
}

TEST_CASE("derivative variance") {
  std::vector<ShallowKernel> ks = {closed_form_kernel("relu"), closed_form_kernel("gaussian"),
                                   shallow_kernel(make_activation("tanh"))};
  for (const auto& k : ks) {
    CAPTURE(k.describe());
    auto laws = moment_laws(k, {1, 3, 8}, 2, 2);
    for (const auto& law : laws) {
      double ref = 2 * std::pow(k.derivative_at_one(1), law.depth);
      CHECK(derivative_variance(law, 1).value == doctest::Approx(ref).epsilon(1e-6));
    }
  }
  auto law = moment_law(DeepKernel(closed_form_kernel("relu"), 2), 2, 4);
  CHECK(derivative_variance(law, 2).divergent);
  CHECK_THROWS_AS(derivative_variance(law, 0), DomainError);
}

TEST_CASE("serialization") {
  auto law = spectral_law(DeepKernel(closed_form_kernel("relu"), 2), 2, fixed(16));
  LawReport rep;
  rep.moments = moments(law, 3);
  rep.regime = classify(closed_form_kernel("relu"));
  rep.supports = {{0.05, effective_support(law, 0.05)}};
  auto j = law_to_json(law, rep);
  for (const char* key : {"d", "L", "activation", "gamma_b", "masses", "tail_mass", "moments", "regime", "C_alpha",
                          "D_alpha"})
    CHECK(j.contains(key));
  CHECK(j["L"] == 2);
  CHECK(j["masses"].size() == 17);
  CHECK(j["regime"]["regime"] == "sparse");
  auto back = law_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.masses == law.masses);
  CHECK(back.tail_mass == law.tail_mass);
  CHECK(back.kernel_smoothness == 1);
  CHECK(moment(back, 2).value == moment(law, 2).value);
  CHECK_THROWS_AS(law_from_json(nlohmann::json{{"d", 2}}), DomainError);
  CHECK(j["moments"][2]["divergent"] == true);
  int C = rep.supports[0].second;
  CHECK(j["D_alpha"][0]["value"] == (C + 1) * (C + 1));
  CHECK(j["kernel_smoothness"] == 1);

  std::ostringstream os;
  write_law_csv(os, law);
  std::string s = os.str();
  CHECK(s.rfind("ell,mass,cumulative,n_ell_d\n", 0) == 0);
  CHECK(std::count(s.begin(), s.end(), '\n') == 18);
  CHECK(s.find("\n1,") != std::string::npos);
}
