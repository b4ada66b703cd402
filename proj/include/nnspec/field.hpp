#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "nnspec/spectrum.hpp"

namespace nnspec {

// Real orthonormal harmonics on S^2: Y_l0, sqrt2 P_lm cos(m phi) for m > 0 and
// sqrt2 P_l|m| sin(|m| phi) for m < 0. Flat index l*l + l + m.
inline int harmonic_index(int l, int m) { return l * l + l + m; }

struct HarmonicCoefficients {
  int ell_max = 0;
  std::uint64_t seed = 0;
  std::vector<double> C;  // per-l variance D_l 4 pi / (2l + 1)
  std::vector<double> a;
  std::string activation;
  int depth = 0;

  double at(int l, int m) const { return a[harmonic_index(l, m)]; }
};

// a_lm = sqrt(C_l) Z with Z read from a Philox normal stream at position
// harmonic_index(l, m), so a coefficient does not depend on ell_max.
// ell_max < 0 uses the law's own truncation.
HarmonicCoefficients sample_coefficients(const SpectralLaw& law, std::uint64_t seed, int ell_max = -1);

enum class RowLayout { Uniform, GaussLegendre };

struct FieldGrid {
  int n_lat = 0, n_lon = 0;
  RowLayout rows = RowLayout::Uniform;
  std::vector<double> colatitude;  // n_lat, increasing
  std::vector<double> values;      // row-major n_lat x n_lon
  int lmax = 0;
  std::uint64_t seed = 0;
  std::string activation;
  int depth = 0;
  bool aliased = false;  // n_lat or n_lon below 2 lmax

  double longitude(int j) const;
  double operator()(int i, int j) const { return values[std::size_t(i) * n_lon + j]; }
};

// Uniform rows sit at (i + 1/2) pi / n_lat; Gauss-Legendre rows at the
// arccos of the Legendre nodes. Longitudes 2 pi j / n_lon.
FieldGrid synthesize(const HarmonicCoefficients& c, int n_lat, int n_lon, RowLayout rows = RowLayout::Uniform);

// Quadrature over a Gauss-Legendre grid; exact for band limit <= ell_max when
// n_lat > ell_max and n_lon > 2 ell_max.
std::vector<double> analyze(const FieldGrid& g, int ell_max);

double evaluate(const HarmonicCoefficients& c, double theta, double phi);

// Y_lm at one point, flat-indexed up to ell_max
std::vector<double> real_harmonics(int ell_max, double theta, double phi);

struct FieldStats {
  double min = 0, max = 0, mean = 0, var = 0;
};
FieldStats field_stats(const FieldGrid& g);

struct Raster {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgba;  // alpha 0 outside the ellipse
  double min = 0, max = 0, scale = 0;
  std::string palette;
};

// Pixel centre to (colatitude, longitude in [0, 2pi)); false outside the
// ellipse. Image x grows east, y grows south.
bool mollweide_inverse(int px, int py, int width, int height, double& colat, double& lon);

Raster mollweide_render(const FieldGrid& g, int width, const std::string& palette = "blue-white-red");

void write_ppm(std::ostream& os, const Raster& r);
// false when built without libpng
bool write_png(const std::string& path, const Raster& r);
nlohmann::json raster_sidecar(const Raster& r, const FieldGrid& g);

// One JSON header line, then n_lat * n_lon little-endian doubles
void write_grid(std::ostream& os, const FieldGrid& g);
FieldGrid read_grid(std::istream& is);

}  // namespace nnspec
