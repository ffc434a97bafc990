#pragma once

// Laws under the event {T = n+1}, given the environment.
//
// With alpha = f_{m,n+1}(0) and beta = f_{m,n}(0),
//   E[s^{Z_m}; T = n+1 | env] = f_{0,m}(s alpha) - f_{0,m}(s beta),
// and Z_m given {T = n+1} and the environment has
//   P(Z_m = k) proportional to q^{k-1} (alpha^k - beta^k),  q = b_{0,m} / (a_{0,m} + b_{0,m}).

#include <cstddef>
#include <cstdint>
#include <vector>

#include "bpre/genfun.hpp"
#include "bpre/offspring.hpp"
#include "bpre/parallel.hpp"
#include "bpre/stats.hpp"

namespace bpre {

struct ConditionalMarginal {
  std::size_t m = 0;
  std::size_t n = 0;
  double alpha = 0.0;
  double beta = 0.0;
  double q = 0.0;
  double norm = 0.0;

  double log_q = kNegInf;
  double log_alpha = 0.0;
  double log_beta = kNegInf;
  double log_gap = kNegInf;       // log(alpha - beta)
  double log1m_qalpha = 0.0;      // log(1 - q alpha)
  double log1m_qbeta = 0.0;       // log(1 - q beta)
  double log_norm = 0.0;
  /// log P(T = n+1 | env)
  double log_joint = kNegInf;

  double log_pmf(std::uint64_t k) const;
  double pmf(std::uint64_t k) const { return std::exp(log_pmf(k)); }
  double mean() const;
};

/// prefix spans (0,m); suffix has horizon n >= m. Throws std::domain_error
/// when alpha == beta (P(T = n+1 | env) = 0) or the normaliser underflows.
ConditionalMarginal make_conditional_marginal(const Composition& prefix,
                                              const SuffixTable& suffix);

/// Delta_n(s) = E[s^{Z_n}; T = n+1 | env], prefix spanning (0,n), next = f_{n+1}.
double delta_n(const Composition& prefix, const FracLinLaw& next, double s);
double log_delta_n(const Composition& prefix, const FracLinLaw& next, double s);

/// log P(Z_n = k, T = n+1 | env), the k-th coefficient of Delta_n, k >= 1:
/// a f0 (q f0)^{k-1} / (a + b)^2 with f0 = f_{n+1}(0).
double log_delta_n_coefficient(const Composition& prefix, const FracLinLaw& next,
                               std::uint64_t k);

/// E[s^{Z_m}; T = n+1 | env] for s in [0,1].
double conditional_marginal_transform(const SuffixTable& suffix, const Composition& prefix,
                                      double s);
double log_conditional_marginal_transform(const SuffixTable& suffix, const Composition& prefix,
                                          double s);

/// Exact draw. The pmf factors as the law of 1 + G1 + G2 with independent
/// G1 ~ Geometric_0(1 - q alpha) and G2 ~ Geometric_0(1 - q beta), so no
/// partial sums of nearly cancelling terms are needed.
std::uint64_t sample_Zm_given_T(const ConditionalMarginal& marginal, Stream& rng);

struct PathSample {
  StreamAddress env_seed;
  std::uint64_t trial = 0;
  std::vector<std::uint64_t> z;  // Z_0 .. Z_T (or up to the horizon)
  std::vector<double> s;         // S_0 .. same length as z
  bool accepted = false;
  bool capped = false;
  /// generation of extinction, 0 if alive at the horizon
  std::size_t extinction_time = 0;

  /// Z_m e^{-S_m}
  double y(std::size_t m) const { return static_cast<double>(z.at(m)) * std::exp(-s.at(m)); }
};

/// Forward simulation of environment and population from Z_0 = 1 up to
/// generation n+1; accepted iff T = n+1. Populations above `cap` end the
/// trial with capped = true. Streams: (seed, environment, i) and
/// (seed, reproduction, i) with i = stream_index(10, slot, trial).
PathSample rejection_joint_path(const EnvironmentModel& model, std::size_t n,
                                std::uint64_t seed, std::uint64_t trial,
                                std::uint64_t cap = 1000000000ull, std::uint64_t slot = 0);

/// Ratio estimate of E[exp(-lambda Y_t) | T = n+1], Y_t = Z_[nt] e^{-S_[nt]},
/// from environment-exact transforms; metadata holds the denominator
/// E[P(T = n+1 | env)] and its standard error.
EstimateReport laplace_Yt_given_T(const EnvironmentModel& model, std::size_t n, double t,
                                  double lambda, std::uint64_t replicates,
                                  const RunOptions& opt);

/// [n t] computed without rounding surprises for dyadic t.
std::size_t floor_index(std::size_t n, double t);

}  // namespace bpre
