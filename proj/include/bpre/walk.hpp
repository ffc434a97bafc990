#pragma once

// The associated random walk S_n = x_1 + ... + x_n and its fluctuation
// functionals: running extrema, the first minimum, the renewal functions u
// and v, expectations under the h-transformed measures P+ and P-, and the
// n^{-3/2} constants of E[e^{-S_n}; L_n >= 0] and E[e^{S_n}; tau(n) = n].

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bpre/offspring.hpp"
#include "bpre/parallel.hpp"
#include "bpre/stats.hpp"

namespace bpre {

struct WalkPath {
  /// S_0, ..., S_n
  std::vector<double> s;

  static WalkPath from_environment(std::span<const FracLinLaw> laws, double start = 0.0);
  std::size_t steps() const { return s.empty() ? 0 : s.size() - 1; }
};

struct WalkSummary {
  double l = 0.0;        // min(S_1..S_n)
  double m = 0.0;        // max(S_1..S_n)
  std::size_t tau = 0;   // first index attaining min(S_0..S_n)
};

/// Throws std::invalid_argument for paths with fewer than one step.
WalkSummary summarize(std::span<const double> s);

enum class Side { plus, minus };

/// Monte Carlo estimate of u(y) (plus) or v(-y) (minus) on a grid y >= 0:
///   u(y)  = 1 + sum_{k<=K} P(-S_k <= y, M_k < 0),
///   v(-y) = 1 + sum_{k<=K} P(S_k < y, L_k >= 0).
struct RenewalTable {
  Side side = Side::plus;
  std::vector<double> grid;
  std::vector<double> values;
  std::vector<double> std_errors;
  std::uint64_t depth = 0;
  std::uint64_t replicates = 0;

  /// Piecewise-linear in y, linear extrapolation past the last grid point,
  /// 0 for y < 0.
  double at(double y) const;
  bool extrapolates(double y) const { return !grid.empty() && y > grid.back(); }

  /// Columns x,value,stderr,K,N.
  std::string to_csv() const;
};

/// Per-grid-point residual E[u(y+X); y+X >= 0] - u(y) (or the v analogue),
/// with the table plugged in for u. The expectation over X is taken exactly
/// with the increment law, path by path, so the standard error accounts for
/// the correlation between the table and the residual. Series cut at K
/// terms obey the identity only up to the remainder
/// P(M_{K+1} < 0, -S_{K+1} > y) (plus side; P(L_{K+1} >= 0, S_{K+1} >= y)
/// for minus), which is estimated on the same paths, added back into
/// `residual` and reported on its own.
struct HarmonicityResidual {
  std::vector<double> grid;
  std::vector<double> residual;
  std::vector<double> std_errors;
  std::vector<double> truncation_remainder;

  bool within(double sigmas) const;
};

struct RenewalEstimate {
  RenewalTable table;
  HarmonicityResidual harmonicity;
};

/// Paths use streams (seed, renewal, i). Requires a sorted grid with grid[0] == 0
/// and an increment law of bounded support.
RenewalEstimate estimate_renewal(const EnvironmentModel& model, Side side,
                                 std::span<const double> grid, std::uint64_t depth,
                                 std::uint64_t replicates, const RunOptions& opt);

using PathFunctional =
    std::function<double(std::span<const FracLinLaw> laws, std::span<const double> s)>;

/// Self-normalised reweighting estimate of E_x^+[g(path up to n)], weight
/// u(S_n) 1{L_n >= 0}. Metadata carries the normalisation mean(w)/u(x0),
/// which should be 1, and the table's K and N as a plug-in bias flag.
/// When every path violates L_n >= 0 the value is NaN and metadata.flag is
/// "zero_effective_sample".
EstimateReport pplus_expectation(const EnvironmentModel& model, const PathFunctional& g,
                                 std::size_t n, double x0, const RenewalTable& u,
                                 std::uint64_t replicates, const RunOptions& opt);

/// Mirror image: weight v(S_n) 1{M_n < 0}, start x0 <= 0.
EstimateReport pminus_expectation(const EnvironmentModel& model, const PathFunctional& g,
                                  std::size_t n, double x0, const RenewalTable& v,
                                  std::uint64_t replicates, const RunOptions& opt);

struct StarRow {
  std::size_t n = 0;
  EstimateReport left;   // E[e^{-S_n}; L_n >= 0]
  EstimateReport right;  // E[e^{S_n}; tau(n) = n]
  double scaled_left = 0.0, scaled_left_se = 0.0;
  double scaled_right = 0.0, scaled_right_se = 0.0;
  /// scaled value over the previous row's; NaN on the first row
  double ratio_left = 0.0, ratio_left_se = 0.0;
  double ratio_right = 0.0, ratio_right_se = 0.0;
};

/// Both expectations per n from independent path sets. The right-hand one
/// uses the time-reversed walk: {tau(n) = n} = {M'_n < 0} for
/// S'_j = S_n - S_{n-j}, so paths can stop at the first exit.
std::vector<StarRow> star_constants(const EnvironmentModel& model,
                                    std::span<const std::size_t> n_grid,
                                    std::uint64_t replicates, const RunOptions& opt);

std::string star_constants_csv(std::span<const StarRow> rows);

}  // namespace bpre
