#pragma once

// Independent reference computations for the tests. Nothing here calls the
// library's composition algebra; laws are rebuilt from (x, eta) directly.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

struct Params {
  double x;
  double eta;
};

inline double pgf(const Params& p, double s) {
  return 1.0 - (1.0 - s) / (std::exp(-p.x) + p.eta * (1.0 - s));
}

/// Offspring pmf up to k = K.
inline std::vector<double> offspring_pmf(const Params& p, std::size_t K) {
  const double d = std::exp(-p.x) + p.eta;
  const double q = p.eta / d;
  std::vector<double> out(K + 1);
  out[0] = 1.0 - 1.0 / d;
  double t = (1.0 - q) / d;
  for (std::size_t k = 1; k <= K; ++k, t *= q) out[k] = t;
  return out;
}

inline std::vector<double> convolve(const std::vector<double>& a, const std::vector<double>& b,
                                    std::size_t K) {
  std::vector<double> out(K + 1, 0.0);
  for (std::size_t i = 0; i <= K && i < a.size(); ++i) {
    if (a[i] == 0.0) continue;
    for (std::size_t j = 0; i + j <= K && j < b.size(); ++j) out[i + j] += a[i] * b[j];
  }
  return out;
}

/// pmf of Z_n (Z_0 = 1) by brute-force convolution, truncated at K. Mass
/// beyond K is dropped at every generation.
inline std::vector<double> generation_pmf(const std::vector<Params>& laws, std::size_t K) {
  std::vector<double> dist(K + 1, 0.0);
  dist[1] = 1.0;
  for (const auto& law : laws) {
    const std::vector<double> off = offspring_pmf(law, K);
    std::vector<double> next(K + 1, 0.0);
    std::vector<double> power(K + 1, 0.0);
    power[0] = 1.0;  // offspring of zero parents
    for (std::size_t j = 0; j <= K; ++j) {
      if (j > 0) power = convolve(power, off, K);
      if (dist[j] == 0.0) continue;
      for (std::size_t k = 0; k <= K; ++k) next[k] += dist[j] * power[k];
    }
    dist = std::move(next);
  }
  return dist;
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
inline void gauss_legendre(std::size_t n, std::vector<double>& nodes, std::vector<double>& weights) {
  nodes.assign(n, 0.0);
  weights.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double z = std::cos(M_PI * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (std::size_t k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / static_cast<double>(k);
        p0 = p1;
        p1 = p2;
      }
      dp = static_cast<double>(n) * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::fabs(dz) < 1e-15) break;
    }
    nodes[i] = z;
    weights[i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
}

/// Integral of f over [a, b] with an n-point rule on each of `pieces` panels.
inline double integrate(const std::function<double(double)>& f, double a, double b,
                        std::size_t pieces = 64, std::size_t n = 16) {
  std::vector<double> z, w;
  gauss_legendre(n, z, w);
  double total = 0.0;
  const double h = (b - a) / static_cast<double>(pieces);
  for (std::size_t p = 0; p < pieces; ++p) {
    const double lo = a + h * static_cast<double>(p);
    for (std::size_t i = 0; i < n; ++i) total += w[i] * 0.5 * h * f(lo + 0.5 * h * (z[i] + 1.0));
  }
  return total;
}

}  // namespace oracle
