#include "nnspec/field.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>

#ifdef NNSPEC_HAVE_PNG
#include <png.h>
#endif

#include "nnspec/errors.hpp"
#include "nnspec/parallel.hpp"
#include "nnspec/philox.hpp"
#include "nnspec/specialfun.hpp"

namespace nnspec {

namespace {

constexpr double kPi = std::numbers::pi;
// stream words for harmonic coefficients ("FLD", 0)
constexpr std::uint32_t kFieldStream = 0x464C44u;

int tri(int l, int m) { return l * (l + 1) / 2 + m; }

// Orthonormal associated Legendre functions, no Condon-Shortley phase:
// out[tri(l, m)] = sqrt((2l+1)/(4pi) (l-m)!/(l+m)!) P_l^m(x), s = sqrt(1 - x^2).
void legendre_table(int L, double x, double s, std::vector<double>& out) {
  out.assign(std::size_t(tri(L, L) + 1), 0.0);
  double pmm = 1 / std::sqrt(4 * kPi);
  for (int m = 0; m <= L; ++m) {
    if (m > 0) pmm *= std::sqrt((2.0 * m + 1) / (2.0 * m)) * s;
    out[tri(m, m)] = pmm;
    if (m == L) break;
    double p1 = std::sqrt(2.0 * m + 3) * x * pmm;
    out[tri(m + 1, m)] = p1;
    double p0 = pmm;
    for (int l = m + 2; l <= L; ++l) {
      double a = std::sqrt((4.0 * l * l - 1) / (double(l) * l - double(m) * m));
      double b = std::sqrt((double(l - 1) * (l - 1) - double(m) * m) / (4.0 * (l - 1) * (l - 1) - 1));
      double p = a * (x * p1 - b * p0);
      out[tri(l, m)] = p;
      p0 = p1;
      p1 = p;
    }
  }
}

std::vector<double> row_colatitudes(int n_lat, RowLayout rows) {
  std::vector<double> th(n_lat);
  if (rows == RowLayout::Uniform) {
    for (int i = 0; i < n_lat; ++i) th[i] = (i + 0.5) * kPi / n_lat;
  } else {
    auto rule = cached_jacobi_quadrature(2, n_lat);
    for (int i = 0; i < n_lat; ++i) th[i] = std::acos(double(rule->nodes[n_lat - 1 - i]));
  }
  return th;
}

struct Trig {
  std::vector<double> c, s;
  explicit Trig(int n) : c(n), s(n) {
    for (int k = 0; k < n; ++k) {
      c[k] = std::cos(2 * kPi * k / n);
      s[k] = std::sin(2 * kPi * k / n);
    }
  }
};

void check_grid_args(int n_lat, int n_lon) {
  if (n_lat < 1 || n_lon < 1) throw DomainError("grid needs n_lat, n_lon >= 1");
}

std::string layout_name(RowLayout r) { return r == RowLayout::Uniform ? "uniform" : "gauss_legendre"; }

}  // namespace

HarmonicCoefficients sample_coefficients(const SpectralLaw& law, std::uint64_t seed, int ell_max) {
  if (law.d != 2) throw DomainError("field synthesis is implemented on S^2 only (d = 2)");
  if (ell_max < 0) ell_max = law.ell_max;
  HarmonicCoefficients c;
  c.ell_max = ell_max;
  c.seed = seed;
  c.activation = law.activation;
  c.depth = law.depth;
  c.C.resize(ell_max + 1);
  c.a.resize(std::size_t(ell_max + 1) * (ell_max + 1));
  NormalStream z(seed, kFieldStream, 0);
  z.fill(c.a.data(), c.a.size());
  for (int l = 0; l <= ell_max; ++l) {
    c.C[l] = law.mass(l) * 4 * kPi / (2 * l + 1);
    const double sd = std::sqrt(c.C[l]);
    for (int m = -l; m <= l; ++m) c.a[harmonic_index(l, m)] *= sd;
  }
  return c;
}

double FieldGrid::longitude(int j) const { return 2 * kPi * j / n_lon; }

FieldGrid synthesize(const HarmonicCoefficients& c, int n_lat, int n_lon, RowLayout rows) {
  check_grid_args(n_lat, n_lon);
  const int L = c.ell_max;
  FieldGrid g;
  g.n_lat = n_lat;
  g.n_lon = n_lon;
  g.rows = rows;
  g.colatitude = row_colatitudes(n_lat, rows);
  g.values.assign(std::size_t(n_lat) * n_lon, 0.0);
  g.lmax = L;
  g.seed = c.seed;
  g.activation = c.activation;
  g.depth = c.depth;
  g.aliased = n_lat < 2 * L || n_lon < 2 * L;

  const Trig trig(n_lon);
  parallel_for(n_lat, 1, [&](std::size_t b, std::size_t e) {
    std::vector<double> P, F(L + 1), G(L + 1);
    for (std::size_t i = b; i < e; ++i) {
      const double th = g.colatitude[i];
      legendre_table(L, std::cos(th), std::sin(th), P);
      for (int m = 0; m <= L; ++m) {
        double f = 0, h = 0;
        for (int l = L; l >= m; --l) {
          f += c.a[harmonic_index(l, m)] * P[tri(l, m)];
          if (m > 0) h += c.a[harmonic_index(l, -m)] * P[tri(l, m)];
        }
        F[m] = f;
        G[m] = std::numbers::sqrt2 * h;
        if (m > 0) F[m] *= std::numbers::sqrt2;
      }
      double* row = g.values.data() + i * n_lon;
      std::fill(row, row + n_lon, 0.0);
      for (int m = L; m >= 1; --m) {
        const int step = m % n_lon;
        for (int j = 0, k = 0; j < n_lon; ++j) {
          row[j] += F[m] * trig.c[k] + G[m] * trig.s[k];
          k += step;
          if (k >= n_lon) k -= n_lon;
        }
      }
      for (int j = 0; j < n_lon; ++j) row[j] += F[0];
    }
  });
  return g;
}

std::vector<double> analyze(const FieldGrid& g, int ell_max) {
  if (g.rows != RowLayout::GaussLegendre) throw DomainError("analysis needs Gauss-Legendre rows");
  if (g.n_lat <= ell_max || g.n_lon <= 2 * ell_max) throw DomainError("grid too coarse for the requested band limit");
  auto rule = cached_jacobi_quadrature(2, g.n_lat);
  const Trig trig(g.n_lon);
  const int L = ell_max;
  const double dphi = 2 * kPi / g.n_lon;

  // per-row partial coefficients, reduced in row order afterwards
  std::vector<std::vector<double>> part(g.n_lat);
  parallel_for(g.n_lat, 1, [&](std::size_t b, std::size_t e) {
    std::vector<double> P, A(L + 1), B(L + 1);
    for (std::size_t i = b; i < e; ++i) {
      const double w = double(rule->weights[g.n_lat - 1 - i]);
      const double th = g.colatitude[i];
      legendre_table(L, std::cos(th), std::sin(th), P);
      const double* row = g.values.data() + i * g.n_lon;
      for (int m = 0; m <= L; ++m) {
        double a = 0, s = 0;
        const int step = m % g.n_lon;
        for (int j = 0, k = 0; j < g.n_lon; ++j) {
          a += row[j] * trig.c[k];
          s += row[j] * trig.s[k];
          k += step;
          if (k >= g.n_lon) k -= g.n_lon;
        }
        A[m] = a * dphi * w;
        B[m] = s * dphi * w;
      }
      auto& out = part[i];
      out.assign(std::size_t(L + 1) * (L + 1), 0.0);
      for (int l = 0; l <= L; ++l) {
        out[harmonic_index(l, 0)] = A[0] * P[tri(l, 0)];
        for (int m = 1; m <= l; ++m) {
          out[harmonic_index(l, m)] = std::numbers::sqrt2 * A[m] * P[tri(l, m)];
          out[harmonic_index(l, -m)] = std::numbers::sqrt2 * B[m] * P[tri(l, m)];
        }
      }
    }
  });
  std::vector<double> a(std::size_t(L + 1) * (L + 1), 0.0);
  for (const auto& p : part)
    for (std::size_t k = 0; k < a.size(); ++k) a[k] += p[k];
  return a;
}

std::vector<double> real_harmonics(int ell_max, double theta, double phi) {
  std::vector<double> P;
  legendre_table(ell_max, std::cos(theta), std::sin(theta), P);
  std::vector<double> y(std::size_t(ell_max + 1) * (ell_max + 1));
  for (int l = 0; l <= ell_max; ++l) {
    y[harmonic_index(l, 0)] = P[tri(l, 0)];
    for (int m = 1; m <= l; ++m) {
      y[harmonic_index(l, m)] = std::numbers::sqrt2 * P[tri(l, m)] * std::cos(m * phi);
      y[harmonic_index(l, -m)] = std::numbers::sqrt2 * P[tri(l, m)] * std::sin(m * phi);
    }
  }
  return y;
}

double evaluate(const HarmonicCoefficients& c, double theta, double phi) {
  auto y = real_harmonics(c.ell_max, theta, phi);
  double v = 0;
  for (std::size_t k = y.size(); k-- > 0;) v += c.a[k] * y[k];
  return v;
}

FieldStats field_stats(const FieldGrid& g) {
  FieldStats s;
  if (g.values.empty()) return s;
  auto [lo, hi] = std::minmax_element(g.values.begin(), g.values.end());
  s.min = *lo;
  s.max = *hi;
  double sum = 0;
  for (double v : g.values) sum += v;
  s.mean = sum / g.values.size();
  double ss = 0;
  for (double v : g.values) ss += (v - s.mean) * (v - s.mean);
  s.var = ss / g.values.size();
  return s;
}

bool mollweide_inverse(int px, int py, int width, int height, double& colat, double& lon) {
  const double r2 = std::numbers::sqrt2;
  const double x = (2 * (px + 0.5) / width - 1) * 2 * r2;
  const double y = (1 - 2 * (py + 0.5) / height) * r2;
  if (x * x / 8 + y * y / 2 > 1) return false;
  const double t = std::asin(std::clamp(y / r2, -1.0, 1.0));
  const double lat = std::asin(std::clamp((2 * t + std::sin(2 * t)) / kPi, -1.0, 1.0));
  double l = kPi * x / (2 * r2 * std::cos(t));
  if (std::abs(l) > kPi) return false;
  colat = kPi / 2 - lat;
  lon = l < 0 ? l + 2 * kPi : l;
  return true;
}

Raster mollweide_render(const FieldGrid& g, int width, const std::string& palette) {
  if (width < 64) throw DomainError("raster width must be >= 64");
  if (palette != "blue-white-red") throw DomainError("unknown palette: " + palette);
  if (g.values.empty()) throw DomainError("empty grid");
  Raster r;
  r.width = width;
  r.height = width / 2;
  r.palette = palette;
  auto st = field_stats(g);
  r.min = st.min;
  r.max = st.max;
  r.scale = std::max(std::abs(st.min), std::abs(st.max));
  r.rgba.assign(std::size_t(r.width) * r.height * 4, 0);

  auto nearest_row = [&](double th) {
    if (g.rows == RowLayout::Uniform) return std::clamp(int(th / kPi * g.n_lat), 0, g.n_lat - 1);
    auto it = std::lower_bound(g.colatitude.begin(), g.colatitude.end(), th);
    int i = int(it - g.colatitude.begin());
    if (i == g.n_lat) return g.n_lat - 1;
    if (i > 0 && th - g.colatitude[i - 1] < g.colatitude[i] - th) --i;
    return i;
  };

  for (int py = 0; py < r.height; ++py)
    for (int px = 0; px < r.width; ++px) {
      double th, lon;
      if (!mollweide_inverse(px, py, r.width, r.height, th, lon)) continue;
      const int i = nearest_row(th);
      const int j = int(std::lround(lon / (2 * kPi) * g.n_lon)) % g.n_lon;
      const double t = r.scale > 0 ? std::clamp(g(i, j) / r.scale, -1.0, 1.0) : 0.0;
      std::uint8_t* p = &r.rgba[(std::size_t(py) * r.width + px) * 4];
      const auto fade = std::uint8_t(std::lround(255 * (1 - std::abs(t))));
      p[0] = t < 0 ? fade : 255;
      p[1] = fade;
      p[2] = t > 0 ? fade : 255;
      p[3] = 255;
    }
  return r;
}

void write_ppm(std::ostream& os, const Raster& r) {
  os << "P6\n" << r.width << " " << r.height << "\n255\n";
  for (std::size_t k = 0; k < r.rgba.size(); k += 4) {
    // background is mid grey
    const bool in = r.rgba[k + 3] != 0;
    char px[3] = {char(in ? r.rgba[k] : 128), char(in ? r.rgba[k + 1] : 128), char(in ? r.rgba[k + 2] : 128)};
    os.write(px, 3);
  }
}

bool write_png(const std::string& path, const Raster& r) {
#ifdef NNSPEC_HAVE_PNG
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = r.width;
  img.height = r.height;
  img.format = PNG_FORMAT_RGBA;
  if (!png_image_write_to_file(&img, path.c_str(), 0, r.rgba.data(), 0, nullptr))
    throw Error(std::string("png write failed: ") + img.message);
  return true;
#else
  (void)path;
  (void)r;
  return false;
#endif
}

nlohmann::json raster_sidecar(const Raster& r, const FieldGrid& g) {
  return {{"projection", "mollweide"},
          {"width", r.width},
          {"height", r.height},
          {"palette", r.palette},
          {"min", r.min},
          {"max", r.max},
          {"color_scale", r.scale},
          {"lmax", g.lmax},
          {"seed", g.seed},
          {"activation", g.activation},
          {"depth", g.depth}};
}

void write_grid(std::ostream& os, const FieldGrid& g) {
  nlohmann::json h = {{"n_lat", g.n_lat}, {"n_lon", g.n_lon}, {"lmax", g.lmax},
                      {"seed", g.seed},   {"activation", g.activation}, {"depth", g.depth},
                      {"rows", layout_name(g.rows)}, {"dtype", "float64-le"}};
  os << h.dump() << "\n";
  std::vector<char> buf(g.values.size() * 8);
  for (std::size_t k = 0; k < g.values.size(); ++k) {
    auto u = std::bit_cast<std::uint64_t>(g.values[k]);
    for (int b = 0; b < 8; ++b) buf[k * 8 + b] = char((u >> (8 * b)) & 0xFF);
  }
  os.write(buf.data(), std::streamsize(buf.size()));
}

FieldGrid read_grid(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DomainError("grid file: missing header");
  auto h = nlohmann::json::parse(line);
  FieldGrid g;
  g.n_lat = h.at("n_lat");
  g.n_lon = h.at("n_lon");
  check_grid_args(g.n_lat, g.n_lon);
  g.lmax = h.at("lmax");
  g.seed = h.at("seed");
  g.activation = h.at("activation");
  g.depth = h.at("depth");
  g.rows = h.value("rows", "uniform") == "gauss_legendre" ? RowLayout::GaussLegendre : RowLayout::Uniform;
  g.colatitude = row_colatitudes(g.n_lat, g.rows);
  g.aliased = g.n_lat < 2 * g.lmax || g.n_lon < 2 * g.lmax;
  std::vector<unsigned char> buf(std::size_t(g.n_lat) * g.n_lon * 8);
  if (!is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size())))
    throw DomainError("grid file: truncated data");
  g.values.resize(buf.size() / 8);
  for (std::size_t k = 0; k < g.values.size(); ++k) {
    std::uint64_t u = 0;
    for (int b = 0; b < 8; ++b) u |= std::uint64_t(buf[k * 8 + b]) << (8 * b);
    g.values[k] = std::bit_cast<double>(u);
  }
  return g;
}

}  // namespace nnspec
