#pragma once

// Brute-force reference implementations used by the tests. Everything here is
// written as plain scalar loops so it shares no code path with the library.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "ahstn/tensor.hpp"

namespace oracle {

using ahstn::diff::Shape;
using ahstn::diff::Tensor;

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(gen);
  return v;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, bool requires_grad = true, double lo = -1.0,
                            double hi = 1.0) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return Tensor(shape, random_values(n, seed, lo, hi), requires_grad);
}

// Random row-stochastic N x P matrix with entries bounded away from zero.
inline Tensor random_stochastic(std::size_t n, std::size_t p, std::uint64_t seed, bool requires_grad = false) {
  auto v = random_values(n * p, seed, 0.05, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < p; ++j) s += v[i * p + j];
    for (std::size_t j = 0; j < p; ++j) v[i * p + j] /= s;
  }
  return Tensor({n, p}, v, requires_grad);
}

// Row softmax of uniform logits in [-scale, scale]: assignments of the kind
// the clustering GCN produces.
inline Tensor random_softmax(std::size_t n, std::size_t p, std::uint64_t seed, double scale) {
  auto v = random_values(n * p, seed, -scale, scale);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < p; ++j) s += (v[i * p + j] = std::exp(v[i * p + j]));
    for (std::size_t j = 0; j < p; ++j) v[i * p + j] /= s;
  }
  return Tensor({n, p}, v);
}

inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                  std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t l = 0; l < k; ++l) c[i * n + j] += a[i * k + l] * b[l * n + j];
  return c;
}

inline std::vector<double> transpose(const std::vector<double>& a, std::size_t r, std::size_t c) {
  std::vector<double> t(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = a[i * c + j];
  return t;
}

// Gauss-Jordan inverse with partial pivoting.
inline std::vector<double> inverse(std::vector<double> a, std::size_t n) {
  std::vector<double> inv(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) inv[i * n + i] = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    for (std::size_t j = 0; j < n; ++j) {
      std::swap(a[col * n + j], a[piv * n + j]);
      std::swap(inv[col * n + j], inv[piv * n + j]);
    }
    const double d = a[col * n + col];
    for (std::size_t j = 0; j < n; ++j) {
      a[col * n + j] /= d;
      inv[col * n + j] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r * n + col];
      for (std::size_t j = 0; j < n; ++j) {
        a[r * n + j] -= f * a[col * n + j];
        inv[r * n + j] -= f * inv[col * n + j];
      }
    }
  }
  return inv;
}

// (M^T M + eps I)^{-1} M^T for M: n x p.
inline std::vector<double> pinv(const std::vector<double>& m, std::size_t n, std::size_t p, double eps) {
  const auto mt = transpose(m, n, p);
  auto g = matmul(mt, m, p, n, p);
  for (std::size_t i = 0; i < p; ++i) g[i * p + i] += eps;
  return matmul(inverse(g, p), mt, p, p, n);
}

// Valid time convolution on [N, T, Cin] with weights [K, Cin, Cout].
inline std::vector<double> conv_time(const std::vector<double>& x, std::size_t n, std::size_t t, std::size_t cin,
                                     const std::vector<double>& w, std::size_t k, std::size_t cout,
                                     const std::vector<double>& bias) {
  const auto to = t - k + 1;
  std::vector<double> y(n * to * cout, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < to; ++s)
      for (std::size_t o = 0; o < cout; ++o) {
        double acc = bias[o];
        for (std::size_t d = 0; d < k; ++d)
          for (std::size_t c = 0; c < cin; ++c) acc += x[(i * t + s + d) * cin + c] * w[(d * cin + c) * cout + o];
        y[(i * to + s) * cout + o] = acc;
      }
  return y;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline std::vector<double> glu(const std::vector<double>& z, std::size_t c2) {
  const auto c = c2 / 2, rows = z.size() / c2;
  std::vector<double> out(rows * c);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = z[r * c2 + j] * sigmoid(z[r * c2 + c + j]);
  return out;
}

// D^{-1/2} (A + I) D^{-1/2}
inline std::vector<double> normalized_adjacency(const std::vector<double>& a, std::size_t n) {
  std::vector<double> t = a;
  for (std::size_t i = 0; i < n; ++i) t[i * n + i] += 1.0;
  std::vector<double> d(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d[i] += t[i * n + j];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) t[i * n + j] /= std::sqrt(d[i] * d[j]);
  return t;
}

// Central differences of a scalar function of one input tensor's values.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, Tensor& x, double h = 1e-6) {
  std::vector<double> g(x.numel());
  auto v = x.mutable_data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double orig = v[i];
    v[i] = orig + h;
    const double up = f();
    v[i] = orig - h;
    const double down = f();
    v[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
