#pragma once

#include <cmath>
#include <limits>
#include <utility>

namespace bpre {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// log(e^a + e^b), exact for -inf arguments.
inline double log_add_exp(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b == kNegInf) return a;
  return a + std::log1p(std::exp(b - a));
}

/// log(e^a - e^b) for a >= b; -inf when a == b.
inline double log_sub_exp(double a, double b) {
  if (b == kNegInf) return a;
  if (b >= a) return kNegInf;
  const double d = b - a;
  // log(1 - e^d): switch at -ln 2 (Maechler's log1mexp)
  return a + (d > -0.6931471805599453 ? std::log(-std::expm1(d)) : std::log1p(-std::exp(d)));
}

/// log(1 + e^x) without overflow.
inline double log1p_exp(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// log(1 - e^x) for x <= 0.
inline double log1m_exp(double x) {
  if (x >= 0.0) return kNegInf;
  return x > -0.6931471805599453 ? std::log(-std::expm1(x)) : std::log1p(-std::exp(x));
}

}  // namespace bpre
