#pragma once

// Drivers behind the command-line experiments. Each one returns plain
// structs; CSV and JSON renderers sit next to them so the files written by
// the CLI and the numbers checked by tests come from the same place.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bpre/conditional.hpp"
#include "bpre/offspring.hpp"
#include "bpre/parallel.hpp"
#include "bpre/stats.hpp"
#include "bpre/walk.hpp"
#include "json.hpp"

namespace bpre {

// ---------------------------------------------------------------------------
// P(T = n+1) ~ c n^{-3/2}

struct TailPoint {
  std::size_t n = 0;
  /// plain environment average of P(T = n+1 | env)
  double p = 0.0;
  double p_se = 0.0;
  /// n^{3/2} p
  double scaled = 0.0;
  double scaled_se = 0.0;
};

struct TailFit {
  std::vector<TailPoint> points;
  std::uint64_t replicates = 0;
  std::uint64_t seed = 0;
  /// log p = intercept + slope log n, weights 1/Var(log p)
  LineFit fit;
  double slope = 0.0;
  double slope_se = 0.0;
  double slope_ci_lo = 0.0;
  double slope_ci_hi = 0.0;
  double intercept = 0.0;
  /// log of the last scaled value; the n^{3/2} p sequence estimates c
  double log_c = 0.0;
  /// Diagnostic only: the same weighted fit with an extra n^{-1/2} column,
  /// log p = a + slope log n + c n^{-1/2}; NaN with fewer than four points.
  double corrected_slope = 0.0;
  double corrected_slope_se = 0.0;
  /// last two scaled values within 3 combined standard errors
  bool stabilized = false;
  double stabilization_z = 0.0;
};

/// Independent environments per grid point (slot = grid index). Requires at
/// least two grid points with max/min >= 10.
TailFit tail_fit(const EnvironmentModel& model, std::span<const std::size_t> n_grid,
                 std::uint64_t replicates, const RunOptions& opt);

std::string tail_fit_csv(const TailFit& fit);
nlohmann::json to_json(const TailFit& fit);

// ---------------------------------------------------------------------------
// L(Z_n | T = n+1)

struct LimitLawSide {
  std::size_t n = 0;
  std::vector<double> pgf;     // E[s^{Z_n} | T = n+1] on the s grid
  std::vector<double> pgf_se;
  std::vector<double> pmf;     // P(Z_n = k | T = n+1), k = 1..k_max
  std::vector<double> pmf_se;
  double joint = 0.0;          // P(T = n+1)
  double joint_se = 0.0;
  bool collapsed = false;      // every environment gave P(T = n+1 | env) == 0
};

struct LimitLaw {
  std::vector<double> s_grid;
  std::uint64_t k_max = 0;
  std::uint64_t replicates = 0;
  std::uint64_t seed = 0;
  double tolerance = 0.02;
  LimitLawSide first;
  LimitLawSide second;
  std::vector<double> distance;  // |pgf_n - pgf_2n|
  std::vector<double> sigma;     // combined standard error
  double sup_distance = 0.0;
  std::size_t sup_index = 0;
  /// distance < max(tolerance, 3 sigma) at every grid point
  bool passed = false;
};

/// Ratio estimators sum_env Delta_n(s) / sum_env Delta_n(1), so s = 1 gives 1
/// and s = 0 gives 0 exactly. The pmf comes from the per-environment
/// coefficients of Delta_n. Each n uses its own environments.
LimitLaw limit_law_Zn(const EnvironmentModel& model, std::size_t n, std::size_t n2,
                      std::span<const double> s_grid, std::uint64_t k_max,
                      std::uint64_t replicates, const RunOptions& opt, double tolerance = 0.02);

std::string limit_law_csv(const LimitLaw& law);
std::string limit_law_pmf_csv(const LimitLaw& law);
nlohmann::json to_json(const LimitLaw& law);

// ---------------------------------------------------------------------------
// Rejection-sampled conditioned paths

struct AcceptedPaths {
  std::size_t n = 0;
  std::vector<PathSample> paths;
  /// trials examined up to and including the last kept acceptance
  std::uint64_t trials = 0;
  /// capped trials among those
  std::uint64_t capped = 0;
  /// fewer than the requested acceptances within the trial budget
  bool partial = false;
};

/// Trials 0, 1, 2, ... on slot `slot`, keeping the first `target` acceptances
/// in trial order. Trials run in chunks, so stopping early does not depend on
/// the worker count.
AcceptedPaths collect_accepted_paths(const EnvironmentModel& model, std::size_t n,
                                     std::uint64_t target, std::uint64_t max_trials,
                                     std::uint64_t cap, std::uint64_t slot,
                                     const RunOptions& opt);

/// One accepted path per line: seed, trial, Z and S arrays.
std::string paths_jsonl(const AcceptedPaths& paths);

struct ConstancyPoint {
  std::size_t n = 0;
  std::size_t m_lo = 0;  // [n delta]
  std::size_t m_hi = 0;  // [n (1 - delta)]
  std::uint64_t accepted = 0;
  std::uint64_t trials = 0;
  std::uint64_t capped = 0;
  bool partial = false;
  double median_y = 0.0;
  double epsilon = 0.0;
  double exceedance = 0.0;
  double exceedance_se = 0.0;
  double acceptance_rate = 0.0;
  /// Y_t > 0 on every accepted path for [n delta] <= [n t] <= [n (1 - delta)]
  bool all_positive = true;
};

struct PathConstancy {
  double delta = 0.25;
  double eps_factor = 0.2;
  std::uint64_t seed = 0;
  std::vector<ConstancyPoint> points;
  /// p_{i+1} <= p_i + sqrt(se_i^2 + se_{i+1}^2) for each step
  bool non_increasing = false;
  bool partial = false;
  /// slope of log acceptance rate against log n
  double acceptance_slope = 0.0;
  double acceptance_slope_se = 0.0;
};

/// epsilon_n = eps_factor * median of Y_{1-delta} over the accepted paths at n.
PathConstancy path_constancy(const EnvironmentModel& model, std::span<const std::size_t> n_grid,
                             double delta, double eps_factor, std::uint64_t target,
                             std::uint64_t max_trials, std::uint64_t cap, const RunOptions& opt,
                             std::vector<AcceptedPaths>* keep = nullptr);

std::string path_constancy_csv(const PathConstancy& pc);
nlohmann::json to_json(const PathConstancy& pc);

// ---------------------------------------------------------------------------
// Algebraic conditional law of Z_n against rejection sampling

struct MarginalBin {
  std::uint64_t k_lo = 0;
  std::uint64_t k_hi = 0;  // inclusive; UINT64_MAX for the open tail bin
  double observed = 0.0;
  double expected = 0.0;
  double sigma = 0.0;
};

struct MarginalCrossCheck {
  std::size_t n = 0;
  std::uint64_t env_replicates = 0;
  std::uint64_t accepted = 0;
  std::uint64_t trials = 0;
  std::uint64_t capped = 0;
  bool partial = false;
  std::vector<MarginalBin> bins;
  double chi2 = 0.0;
  double dof = 0.0;
  double p_value = 0.0;
  bool per_bin_ok = false;
  bool chi2_ok = false;
  double total_variation = 0.0;
};

/// Bins k = 1, 2, ... are kept while the expected count is at least 5; the
/// rest form one tail bin. sigma combines the multinomial spread with the
/// Monte Carlo error of the algebraic pmf.
MarginalCrossCheck cross_validate_marginal(const EnvironmentModel& model, std::size_t n,
                                           std::uint64_t env_replicates, std::uint64_t target,
                                           std::uint64_t max_trials, std::uint64_t cap,
                                           const RunOptions& opt);

std::string cross_check_csv(const MarginalCrossCheck& cc);
nlohmann::json to_json(const MarginalCrossCheck& cc);

// ---------------------------------------------------------------------------
// Conditioned ratios E[g e^{-S_n}; L_n >= 0] / E[e^{-S_n}; L_n >= 0]

/// g(a, b) = 1 / prod_i (alpha_i a + beta_i + gamma_i b), or g = 1.
/// Left side: a = e^{-S_n}, b = b_n = sum_{k<n} eta_{k+1} e^{-S_k}.
/// Right side (event tau(n) = n, weight e^{S_n}): a = e^{S_n}, b = e^{S_n} b_n.
struct RatioFunctional {
  enum class Kind { one, phi };
  Kind kind = Kind::phi;
  std::array<double, 2> alpha{1.0, 1.0};
  std::array<double, 2> beta{1.0, 1.0};
  std::array<double, 2> gamma{1.0, 1.0};

  double operator()(double a, double b) const;
  /// sup g = 1 / (beta_1 beta_2)
  double bound() const;
  std::string describe() const;
};

struct RatioRow {
  std::size_t n = 0;
  double ratio = 0.0;
  double ratio_se = 0.0;
  double weight_mean = 0.0;  // E[e^{-S_n}; L_n >= 0] or the right analogue
  double weight_se = 0.0;
  bool within_bound = true;
};

struct RatioConvergence {
  Side side = Side::plus;
  RatioFunctional functional;
  std::uint64_t replicates = 0;
  std::uint64_t seed = 0;
  std::vector<RatioRow> rows;
  /// |ratio(last) - ratio(previous)| < 3 combined sigma
  bool stabilized = false;
  double last_difference = 0.0;
  double last_difference_se = 0.0;
};

/// Side::plus is the left ratio (L_n >= 0), Side::minus the right one
/// (tau(n) = n, through the reversed walk). Independent paths per n.
RatioConvergence ratio_convergence(const EnvironmentModel& model, Side side,
                                   const RatioFunctional& g, std::span<const std::size_t> n_grid,
                                   std::uint64_t replicates, const RunOptions& opt);

std::string ratio_convergence_csv(const RatioConvergence& rc);
nlohmann::json to_json(const RatioConvergence& rc);

}  // namespace bpre
