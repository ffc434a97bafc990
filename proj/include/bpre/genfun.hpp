#pragma once

// Log-domain algebra of composed fractional-linear generating functions.
//
// For laws f_{k+1}, ..., f_n the composition f_{k,n} = f_{k+1} o ... o f_n is
// again fractional-linear,
//   1 / (1 - f_{k,n}(s)) = a_{k,n} / (1 - s) + b_{k,n},
// with a_{k,n} = e^{-(S_n - S_k)} and b_{k,n} = sum_{i=k}^{n-1} eta_{i+1} e^{-(S_i - S_k)}.
// Both are stored as logarithms so that walks with |S| in the hundreds stay
// representable.

#include <cstddef>
#include <span>
#include <vector>

#include "bpre/logmath.hpp"
#include "bpre/offspring.hpp"

namespace bpre {

struct Composition {
  /// -log a_{k,n} = S_n - S_k
  double neg_log_a = 0.0;
  /// log b_{k,n}; -inf for the empty composition
  double log_b = kNegInf;
  std::size_t first = 0;  // k
  std::size_t last = 0;   // n

  static Composition identity(std::size_t at) { return {0.0, kNegInf, at, at}; }

  bool empty() const { return first == last; }
  double a() const { return std::exp(-neg_log_a); }
  double b() const { return std::exp(log_b); }
  /// log(a + b) = -log P(Z_n > 0 | Z_k = 1)
  double log_a_plus_b() const { return log_add_exp(-neg_log_a, log_b); }
  /// log(1 - f_{k,n}(0))
  double log_survival() const { return -log_a_plus_b(); }
  double survival() const { return std::exp(log_survival()); }
  /// q = b / (a + b), the geometric ratio of Z_n given Z_n > 0
  double log_q() const { return log_b == kNegInf ? kNegInf : -log1p_exp(-neg_log_a - log_b); }
};

/// Appends f_{n+1} on the inside: (k,n) -> (k,n+1).
Composition extend_right(const Composition& comp, const FracLinLaw& law);

/// Prepends f_{m+1} on the outside: (m+1,n) -> (m,n).
Composition extend_left(const Composition& comp, const FracLinLaw& law);

/// f_{0,j} o f_{j,n}: a = a_j a_{j,n}, b = b_j + a_j b_{j,n}.
Composition splice(const Composition& outer, const Composition& inner);

/// From-scratch build of f_{first,last} over laws[first..last).
Composition compose(std::span<const FracLinLaw> laws, std::size_t first, std::size_t last);

/// f_{k,n}(s) for s in [0,1]; s == 1 returns exactly 1.
double eval(const Composition& comp, double s);

/// log(1 - f_{k,n}(s)) for s in [0,1).
double log1m_eval(const Composition& comp, double s);

/// log(f(r1) - f(r2)) for r1 > r2, given log(r1 - r2), log(1 - r1), log(1 - r2).
/// Uses f(r1) - f(r2) = a (r1 - r2) / ((a + b (1 - r1)) (a + b (1 - r2))).
double log_eval_difference(const Composition& comp, double log_dr, double log1m_r1,
                           double log1m_r2);

/// log(f_{k,n+1}(0) - f_{k,n}(0)) where f_{n+1} = law, without cancellation.
double log_extinction_increment(const Composition& comp, const FracLinLaw& law);

struct ExtinctionPmf {
  /// pmf[k-1] = P(T = k | env), k = 1..env.size()
  std::vector<double> pmf;
  /// P(T > env.size() | env)
  double survival = 1.0;
};

ExtinctionPmf extinction_pmf_given_env(std::span<const FracLinLaw> laws);

/// f_{0,m} for m = 0..n, built by extend_right.
class PrefixTable {
 public:
  PrefixTable(std::span<const FracLinLaw> laws, std::size_t n);

  const Composition& at(std::size_t m) const { return comps_.at(m); }
  std::size_t horizon() const { return comps_.size() - 1; }

 private:
  std::vector<Composition> comps_;
};

/// For a horizon n: f_{m,n} for m = 0..n and the next law f_{n+1}, so that
/// alpha_m = f_{m,n+1}(0) and beta_m = f_{m,n}(0) are available for every m.
/// Built by one backward extend_left sweep.
class SuffixTable {
 public:
  /// Needs laws.size() >= n + 1.
  SuffixTable(std::span<const FracLinLaw> laws, std::size_t n);

  std::size_t horizon() const { return comps_.size() - 1; }
  const Composition& at(std::size_t m) const { return comps_.at(m); }
  const FracLinLaw& next_law() const { return next_; }

  /// log(1 - f_{m,n+1}(0))
  double log1m_alpha(std::size_t m) const { return log1m_alpha_.at(m); }
  /// log(1 - f_{m,n}(0)); -0 at m = n
  double log1m_beta(std::size_t m) const { return comps_.at(m).log_survival(); }
  /// log(f_{m,n+1}(0) - f_{m,n}(0))
  double log_alpha_minus_beta(std::size_t m) const { return log_gap_.at(m); }

 private:
  std::vector<Composition> comps_;
  std::vector<double> log1m_alpha_;
  std::vector<double> log_gap_;
  FracLinLaw next_;
};

}  // namespace bpre
