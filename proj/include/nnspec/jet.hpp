#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace nnspec {

// Truncated Taylor series c[k] = f^(k)(x0) / k!, k < N. Enough arithmetic to
// push a point through the closed-form kernels and read off derivatives.
template <class T, std::size_t N>
struct Jet {
  std::array<T, N> c{};

  static Jet variable(T x0) {
    Jet j;
    j.c[0] = x0;
    if constexpr (N > 1) j.c[1] = 1;
    return j;
  }
  static Jet constant(T v) {
    Jet j;
    j.c[0] = v;
    return j;
  }

  T derivative(std::size_t k) const {
    T f = 1;
    for (std::size_t i = 2; i <= k; ++i) f *= T(i);
    return c[k] * f;
  }

  friend Jet operator+(Jet a, const Jet& b) {
    for (std::size_t k = 0; k < N; ++k) a.c[k] += b.c[k];
    return a;
  }
  friend Jet operator-(Jet a, const Jet& b) {
    for (std::size_t k = 0; k < N; ++k) a.c[k] -= b.c[k];
    return a;
  }
  friend Jet operator-(Jet a) {
    for (auto& v : a.c) v = -v;
    return a;
  }
  friend Jet operator*(Jet a, T s) {
    for (auto& v : a.c) v *= s;
    return a;
  }
  friend Jet operator*(T s, Jet a) { return a * s; }
  friend Jet operator+(Jet a, T s) {
    a.c[0] += s;
    return a;
  }
  friend Jet operator+(T s, Jet a) { return a + s; }
  friend Jet operator-(T s, const Jet& a) { return -a + s; }

  friend Jet operator*(const Jet& a, const Jet& b) {
    Jet r;
    for (std::size_t k = 0; k < N; ++k)
      for (std::size_t i = 0; i <= k; ++i) r.c[k] += a.c[i] * b.c[k - i];
    return r;
  }
  friend Jet operator/(const Jet& a, const Jet& b) {
    Jet r;
    for (std::size_t k = 0; k < N; ++k) {
      T s = a.c[k];
      for (std::size_t i = 1; i <= k; ++i) s -= b.c[i] * r.c[k - i];
      r.c[k] = s / b.c[0];
    }
    return r;
  }
};

template <class T, std::size_t N>
Jet<T, N> exp(const Jet<T, N>& a) {
  // r' = a' r
  Jet<T, N> r;
  r.c[0] = std::exp(a.c[0]);
  for (std::size_t k = 1; k < N; ++k) {
    T s = 0;
    for (std::size_t i = 1; i <= k; ++i) s += T(i) * a.c[i] * r.c[k - i];
    r.c[k] = s / T(k);
  }
  return r;
}

// a^p for real p, a.c[0] > 0: a r' = p a' r
template <class T, std::size_t N>
Jet<T, N> pow(const Jet<T, N>& a, T p) {
  Jet<T, N> r;
  r.c[0] = std::pow(a.c[0], p);
  for (std::size_t k = 1; k < N; ++k) {
    T s = 0;
    for (std::size_t i = 1; i <= k; ++i) s += (p * T(i) - T(k - i)) * a.c[i] * r.c[k - i];
    r.c[k] = s / (T(k) * a.c[0]);
  }
  return r;
}

}  // namespace nnspec
