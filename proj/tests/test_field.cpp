#include <doctest.h>

#include <boost/math/special_functions/spherical_harmonic.hpp>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "nnspec/errors.hpp"
#include "nnspec/field.hpp"
#include "nnspec/parallel.hpp"

using namespace nnspec;

namespace {

constexpr double kPi = std::numbers::pi;

SpectralLaw point_law(std::vector<double> masses) {
  SpectralLaw law;
  law.d = 2;
  law.ell_max = int(masses.size()) - 1;
  law.masses = std::move(masses);
  law.activation = "test";
  return law;
}

SpectralLaw relu_law(int L, int ell_max) {
  LawOptions o;
  o.ell_max = ell_max;
  return spectral_law(DeepKernel(closed_form_kernel("relu"), L), 2, o);
}

// forward Mollweide to pixel coordinates, Newton on 2t + sin 2t = pi sin(lat)
void mollweide_forward(double colat, double lon, int W, int H, double& px, double& py) {
  double lat = kPi / 2 - colat;
  if (lon > kPi) lon -= 2 * kPi;
  double t = lat;
  for (int k = 0; k < 60 && std::abs(std::abs(lat) - kPi / 2) > 1e-12; ++k)
    t -= (2 * t + std::sin(2 * t) - kPi * std::sin(lat)) / (2 + 2 * std::cos(2 * t));
  double x = 2 * std::numbers::sqrt2 / kPi * lon * std::cos(t);
  double y = std::numbers::sqrt2 * std::sin(t);
  px = (x / (2 * std::numbers::sqrt2) + 1) / 2 * W - 0.5;
  py = (1 - y / std::numbers::sqrt2) / 2 * H - 0.5;
}

}  // namespace

TEST_CASE("real harmonics against complex spherical harmonics") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(0, 1);
  for (int rep = 0; rep < 20; ++rep) {
    double th = kPi * U(rng), ph = 2 * kPi * U(rng);
    auto y = real_harmonics(12, th, ph);
    for (int l = 0; l <= 12; ++l) {
      CHECK(y[harmonic_index(l, 0)] == doctest::Approx(boost::math::spherical_harmonic_r(l, 0, th, ph)).scale(1));
      for (int m = 1; m <= l; ++m) {
        double sgn = m % 2 ? -1 : 1;
        double re = std::numbers::sqrt2 * sgn * boost::math::spherical_harmonic_r(l, m, th, ph);
        double im = std::numbers::sqrt2 * sgn * boost::math::spherical_harmonic_i(l, m, th, ph);
        CHECK(y[harmonic_index(l, m)] == doctest::Approx(re).epsilon(1e-12).scale(1));
        CHECK(y[harmonic_index(l, -m)] == doctest::Approx(im).epsilon(1e-12).scale(1));
      }
    }
  }
}

TEST_CASE("coefficient sampling") {
  auto c = sample_coefficients(point_law({1.0}), 11);
  REQUIRE(c.a.size() == 1);
  CHECK(c.C[0] == doctest::Approx(4 * kPi));
  auto g = synthesize(c, 8, 16);
  auto st = field_stats(g);
  CHECK(st.min == doctest::Approx(c.a[0] / std::sqrt(4 * kPi)).epsilon(1e-14));
  CHECK(st.max - st.min < 1e-14);

  auto zero = sample_coefficients(point_law(std::vector<double>(6, 0.0)), 5);
  for (double v : zero.a) CHECK(v == 0);

  CHECK_THROWS_AS(sample_coefficients(spectral_law(DeepKernel(closed_form_kernel("relu"), 1), 3, {16, 1e-6, 64, 0, 4}), 1),
                  DomainError);

  // pooled over m, Var(a_lm) within 3 standard errors of C_l
  auto law = relu_law(1, 16);
  const int N = 2000;
  std::vector<double> ss(5, 0);
  for (int s = 0; s < N; ++s) {
    auto k = sample_coefficients(law, 1000 + s, 4);
    for (int l = 0; l <= 4; ++l)
      for (int m = -l; m <= l; ++m) ss[l] += k.at(l, m) * k.at(l, m);
  }
  auto ref = sample_coefficients(law, 0, 4);
  for (int l = 0; l <= 4; ++l) {
    CAPTURE(l);
    double n = double(N) * (2 * l + 1);
    double se = ref.C[l] * std::sqrt(2 / n);
    CHECK(std::abs(ss[l] / n - ref.C[l]) <= 3 * se);
  }

  // truncation does not change shared coefficients
  auto small = sample_coefficients(law, 9, 5), big = sample_coefficients(law, 9, 16);
  for (std::size_t k = 0; k < small.a.size(); ++k) CHECK(small.a[k] == big.a[k]);
}

TEST_CASE("synthesis matches pointwise evaluation and round trips") {
  auto law = relu_law(2, 24);
  auto c = sample_coefficients(law, 77);
  auto g = synthesize(c, 50, 100, RowLayout::GaussLegendre);
  CHECK_FALSE(g.aliased);
  for (int i : {0, 13, 49})
    for (int j : {0, 31, 99}) CHECK(g(i, j) == doctest::Approx(evaluate(c, g.colatitude[i], g.longitude(j))).epsilon(1e-12).scale(1));

  auto a = analyze(g, 24);
  for (int l = 0; l <= 24; ++l)
    for (int m = -l; m <= l; ++m) {
      double ref = c.at(l, m);
      CHECK(std::abs(a[harmonic_index(l, m)] - ref) <= 1e-3 * std::abs(ref) + 1e-13);
    }
  CHECK_THROWS_AS(analyze(synthesize(c, 50, 100), 24), DomainError);
  CHECK_THROWS_AS(analyze(g, 60), DomainError);
  CHECK(synthesize(c, 20, 40).aliased);

  // uniform rows avoid the poles
  auto u = synthesize(c, 10, 20);
  CHECK(u.colatitude[0] == doctest::Approx(kPi / 20));
  CHECK(u.colatitude[9] == doctest::Approx(19 * kPi / 20));
}

TEST_CASE("field normalization and covariance") {
  auto law = relu_law(3, 64);
  double total = 0;
  for (double m : law.masses) total += m;
  const int N = 1000;
  const double th = kPi / 4, th2 = kPi / 2;
  double v0 = 0, c1 = 0, c1sq = 0, c2 = 0, c2sq = 0, iso = 0, isosq = 0;
  for (int s = 0; s < N; ++s) {
    auto c = sample_coefficients(law, 5000 + s);
    double t0 = evaluate(c, 0, 0), ta = evaluate(c, th, 0.3), tb = evaluate(c, th2, 1.1);
    // a second pair at angle pi/4, away from the pole
    double p = evaluate(c, kPi / 2, 2.0), q = evaluate(c, kPi / 2, 2.0 + kPi / 4);
    v0 += t0 * t0;
    c1 += t0 * ta;
    c1sq += t0 * ta * t0 * ta;
    c2 += t0 * tb;
    c2sq += t0 * tb * t0 * tb;
    iso += p * q;
    isosq += p * q * p * q;
  }
  v0 /= N;
  CHECK(std::abs(v0 - total) <= 0.05 * total);

  DeepKernel k(closed_form_kernel("relu"), 3);
  auto check_cov = [&](double sum, double sumsq, double ref) {
    double mean = sum / N, se = std::sqrt((sumsq / N - mean * mean) / N);
    CHECK(std::abs(mean - ref) <= 3 * se);
    return std::pair{mean, se};
  };
  auto [m1, s1] = check_cov(c1, c1sq, k(std::cos(th)));
  check_cov(c2, c2sq, k(std::cos(th2)));
  auto [mi, si] = check_cov(iso, isosq, k(std::cos(th)));
  CHECK(std::abs(m1 - mi) <= 3 * std::hypot(s1, si));
}

TEST_CASE("determinism across threads") {
  auto law = relu_law(5, 48);
  auto c = sample_coefficients(law, 21);
  set_thread_count(1);
  auto a = synthesize(c, 96, 192);
  auto ga = synthesize(c, 97, 192, RowLayout::GaussLegendre);
  auto ra = analyze(ga, 48);
  set_thread_count(4);
  auto b = synthesize(c, 96, 192);
  auto gb = synthesize(c, 97, 192, RowLayout::GaussLegendre);
  auto rb = analyze(gb, 48);
  set_thread_count(0);
  CHECK(a.values == b.values);
  CHECK(ra == rb);
  CHECK(sample_coefficients(law, 21).a == c.a);
  CHECK(sample_coefficients(law, 22).a != c.a);
}

TEST_CASE("stats") {
  FieldGrid g;
  g.n_lat = 2;
  g.n_lon = 2;
  g.values = {1, 2, 3, 6};
  auto s = field_stats(g);
  CHECK(s.min == 1);
  CHECK(s.max == 6);
  CHECK(s.mean == 3);
  CHECK(s.var == doctest::Approx(3.5));
}

TEST_CASE("mollweide geometry") {
  double th, lon;
  CHECK_FALSE(mollweide_inverse(0, 0, 200, 100, th, lon));
  CHECK_FALSE(mollweide_inverse(199, 99, 200, 100, th, lon));
  REQUIRE(mollweide_inverse(100, 50, 200, 100, th, lon));
  CHECK(th == doctest::Approx(kPi / 2).epsilon(0.02));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> U(0.05, 0.95);
  for (int k = 0; k < 200; ++k) {
    double t0 = kPi * U(rng), l0 = 2 * kPi * U(rng), px, py;
    mollweide_forward(t0, l0, 800, 400, px, py);
    int ix = int(std::lround(px)), iy = int(std::lround(py));
    REQUIRE(mollweide_inverse(ix, iy, 800, 400, th, lon));
    CHECK(std::abs(th - t0) < 0.03);
    double dl = std::remainder(lon - l0, 2 * kPi);
    CHECK(std::abs(dl * std::sin(t0)) < 0.03);
  }
}

TEST_CASE("rendering") {
  auto c = sample_coefficients(point_law({1.0}), 2);
  auto g = synthesize(c, 8, 16);
  auto r = mollweide_render(g, 64);
  CHECK(r.height == 32);
  CHECK(r.rgba[3] == 0);
  std::set<std::array<std::uint8_t, 3>> colors;
  for (std::size_t k = 0; k < r.rgba.size(); k += 4)
    if (r.rgba[k + 3]) colors.insert({r.rgba[k], r.rgba[k + 1], r.rgba[k + 2]});
  CHECK(colors.size() == 1);
  CHECK_THROWS_AS(mollweide_render(g, 32), DomainError);
  CHECK_THROWS_AS(mollweide_render(g, 64, "viridis"), DomainError);

  std::ostringstream os;
  write_ppm(os, r);
  CHECK(os.str().rfind("P6\n64 32\n255\n", 0) == 0);
  CHECK(os.str().size() == 13 + 64 * 32 * 3);
  auto side = raster_sidecar(r, g);
  CHECK(side["min"] == r.min);
  CHECK(side["palette"] == "blue-white-red");

  const std::string path = "test_render.png";
  if (write_png(path, r)) {
    std::ifstream f(path, std::ios::binary);
    char magic[4] = {};
    f.read(magic, 4);
    CHECK(std::string(magic + 1, 3) == "PNG");
    std::remove(path.c_str());
  }
}

TEST_CASE("rendered deep relu map is dominated by low multipoles") {
  const int lmax = 64;
  auto law = relu_law(20, lmax);
  auto c = sample_coefficients(law, 8);
  auto g = synthesize(c, 2 * lmax, 4 * lmax);
  auto r = mollweide_render(g, 1024);
  // invert the palette on pixels hit by a Gauss-Legendre grid, then analyze
  const int bl = 24;
  FieldGrid probe = synthesize(sample_coefficients(point_law({0.0}), 0), bl + 1, 2 * bl + 2, RowLayout::GaussLegendre);
  for (int i = 0; i < probe.n_lat; ++i)
    for (int j = 0; j < probe.n_lon; ++j) {
      double px, py;
      mollweide_forward(probe.colatitude[i], probe.longitude(j), r.width, r.height, px, py);
      int ix = std::clamp(int(std::lround(px)), 0, r.width - 1), iy = std::clamp(int(std::lround(py)), 0, r.height - 1);
      const std::uint8_t* p = &r.rgba[(std::size_t(iy) * r.width + ix) * 4];
      double t = p[0] == 255 ? 1 - p[2] / 255.0 : -(1 - p[0] / 255.0);
      probe.values[std::size_t(i) * probe.n_lon + j] = t * r.scale;
    }
  auto a = analyze(probe, bl);
  int best = 0;
  double best_power = -1;
  for (int l = 1; l <= bl; ++l) {
    double p = 0;
    for (int m = -l; m <= l; ++m) p += a[harmonic_index(l, m)] * a[harmonic_index(l, m)];
    if (p > best_power) best_power = p, best = l;
  }
  CHECK(best < 10);
}

TEST_CASE("grid file round trip") {
  auto c = sample_coefficients(relu_law(2, 16), 3);
  auto g = synthesize(c, 33, 64, RowLayout::GaussLegendre);
  std::stringstream ss;
  write_grid(ss, g);
  std::string raw = ss.str();
  auto nl = raw.find('\n');
  auto h = nlohmann::json::parse(raw.substr(0, nl));
  CHECK(h["n_lat"] == 33);
  CHECK(h["lmax"] == 16);
  CHECK(h["seed"] == 3);
  CHECK(raw.size() - nl - 1 == 33 * 64 * 8);
  double first;
  std::memcpy(&first, raw.data() + nl + 1, 8);  // host is little-endian
  CHECK(first == g.values[0]);
  auto back = read_grid(ss);
  CHECK(back.values == g.values);
  CHECK(back.rows == RowLayout::GaussLegendre);
  CHECK(back.colatitude == g.colatitude);
  std::istringstream bad(raw.substr(0, raw.size() - 3));
  CHECK_THROWS_AS(read_grid(bad), DomainError);
}
