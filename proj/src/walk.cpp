#include "bpre/walk.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "bpre/format.hpp"

namespace bpre {

WalkPath WalkPath::from_environment(std::span<const FracLinLaw> laws, double start) {
  WalkPath p;
  p.s.reserve(laws.size() + 1);
  p.s.push_back(start);
  for (const auto& law : laws) p.s.push_back(p.s.back() + law.x());
  return p;
}

WalkSummary summarize(std::span<const double> s) {
  if (s.size() < 2) throw std::invalid_argument("summarize needs a path with n >= 1 steps");
  WalkSummary w;
  w.l = w.m = s[1];
  double lowest = s[0];
  for (std::size_t i = 1; i < s.size(); ++i) {
    w.l = std::min(w.l, s[i]);
    w.m = std::max(w.m, s[i]);
    if (s[i] < lowest) {
      lowest = s[i];
      w.tau = i;
    }
  }
  return w;
}

// ---------------------------------------------------------------------------

double RenewalTable::at(double y) const {
  if (y < 0.0) return 0.0;
  if (grid.size() == 1) return values[0];
  auto it = std::upper_bound(grid.begin(), grid.end(), y);
  std::size_t hi = static_cast<std::size_t>(it - grid.begin());
  if (hi == 0) return values[0];
  if (hi >= grid.size()) hi = grid.size() - 1;
  const std::size_t lo = hi - 1;
  const double t = (y - grid[lo]) / (grid[hi] - grid[lo]);
  return values[lo] + t * (values[hi] - values[lo]);
}

std::string RenewalTable::to_csv() const {
  std::ostringstream out;
  out << "x,value,stderr,K,N\n";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double x = side == Side::plus ? grid[i] : -grid[i];
    out << format_real(x) << ',' << format_real(values[i]) << ',' << format_real(std_errors[i])
        << ',' << depth << ',' << replicates << '\n';
  }
  return out.str();
}

bool HarmonicityResidual::within(double sigmas) const {
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(std::fabs(residual[i]) <= sigmas * std_errors[i])) return false;
  }
  return true;
}

namespace {

struct RenewalAcc {
  std::vector<Moments> value;
  std::vector<Moments> residual;
  std::vector<Moments> remainder;

  void merge(const RenewalAcc& o) {
    if (value.empty()) {
      *this = o;
      return;
    }
    for (std::size_t j = 0; j < value.size(); ++j) {
      value[j].merge(o.value[j]);
      residual[j].merge(o.residual[j]);
      remainder[j].merge(o.remainder[j]);
    }
  }
};

std::size_t lower_index(std::span<const double> grid, double v) {
  return static_cast<std::size_t>(std::lower_bound(grid.begin(), grid.end(), v) - grid.begin());
}
std::size_t upper_index(std::span<const double> grid, double v) {
  return static_cast<std::size_t>(std::upper_bound(grid.begin(), grid.end(), v) - grid.begin());
}

constexpr std::uint64_t kPurposeRenewal = 1;
constexpr std::uint64_t kPurposePlus = 2;
constexpr std::uint64_t kPurposeMinus = 3;
constexpr std::uint64_t kPurposeStarLeft = 4;
constexpr std::uint64_t kPurposeStarRight = 5;

}  // namespace

RenewalEstimate estimate_renewal(const EnvironmentModel& model, Side side,
                                 std::span<const double> grid, std::uint64_t depth,
                                 std::uint64_t replicates, const RunOptions& opt) {
  if (grid.empty() || grid[0] != 0.0 || !std::is_sorted(grid.begin(), grid.end()) ||
      std::adjacent_find(grid.begin(), grid.end()) != grid.end()) {
    throw std::invalid_argument("renewal grid must be strictly increasing and start at 0");
  }
  if (depth < 1 || replicates < 1) throw std::invalid_argument("renewal needs K >= 1 and N >= 1");
  const IncrementLaw& inc = model.increment;
  if (!std::isfinite(inc.lo) || !std::isfinite(inc.hi)) {
    throw std::invalid_argument("renewal residual needs a bounded increment law");
  }
  const std::size_t G = grid.size();

  auto block = [&](std::uint64_t begin, std::uint64_t end) {
    RenewalAcc acc;
    acc.value.assign(G, Moments{});
    acc.residual.assign(G, Moments{});
    acc.remainder.assign(G, Moments{});
    std::vector<double> count(G), ones(G), partial(G);
    for (std::uint64_t i = begin; i < end; ++i) {
      Stream rng(opt.seed, Domain::renewal,
                 stream_index(kPurposeRenewal, side == Side::plus ? 0 : 1, i));
      std::fill(count.begin(), count.end(), 0.0);
      std::fill(ones.begin(), ones.end(), 0.0);
      std::fill(partial.begin(), partial.end(), 0.0);
      double s = 0.0;
      bool alive = true;
      for (std::uint64_t k = 1; k <= depth; ++k) {
        s += inc.sample(rng);
        if (side == Side::plus) {
          if (s >= 0.0) {
            alive = false;
            break;
          }
          const double d = -s;
          // counted at y >= d
          if (auto j = lower_index(grid, d); j < G) count[j] += 1.0;
          // P(X >= d - y): one for y >= d - lo, partial on (d - hi, d - lo)
          const std::size_t j1 = lower_index(grid, d - inc.lo);
          if (j1 < G) ones[j1] += 1.0;
          for (std::size_t j = upper_index(grid, d - inc.hi); j < std::min(j1, G); ++j) {
            partial[j] += inc.survival(d - grid[j]);
          }
        } else {
          if (s < 0.0) {
            alive = false;
            break;
          }
          const double h = s;
          // counted at y > h
          if (auto j = upper_index(grid, h); j < G) count[j] += 1.0;
          // P(X < y - h): one for y > h + hi, partial on (h + lo, h + hi]
          const std::size_t j1 = upper_index(grid, h + inc.hi);
          if (j1 < G) ones[j1] += 1.0;
          for (std::size_t j = upper_index(grid, h + inc.lo); j < std::min(j1, G); ++j) {
            partial[j] += inc.cdf_below(grid[j] - h);
          }
        }
      }
      // Step K+1 of a surviving path: the truncated sums satisfy the
      // harmonic identity only up to P(alive_{K+1}, d_{K+1} > y).
      std::size_t rem_from = G, rem_end = G;
      if (alive) {
        s += inc.sample(rng);
        if (side == Side::plus && s < 0.0) rem_from = 0, rem_end = lower_index(grid, -s);
        if (side == Side::minus && s >= 0.0) rem_from = 0, rem_end = upper_index(grid, s);
      }
      double c = 0.0, o = 0.0;
      for (std::size_t j = 0; j < G; ++j) {
        c += count[j];
        o += ones[j];
        const double first_step =
            side == Side::plus ? inc.survival(-grid[j]) : inc.cdf_below(grid[j]);
        acc.value[j].add(1.0 + c);
        const double rem = (j >= rem_from && j < rem_end) ? 1.0 : 0.0;
        acc.residual[j].add(first_step + o + partial[j] - 1.0 - c + rem);
        acc.remainder[j].add(rem);
      }
    }
    return acc;
  };

  const RenewalAcc acc = reduce_blocks<RenewalAcc>(replicates, opt, block);
  RenewalEstimate out;
  out.table.side = side;
  out.table.grid.assign(grid.begin(), grid.end());
  out.table.depth = depth;
  out.table.replicates = replicates;
  out.harmonicity.grid = out.table.grid;
  for (std::size_t j = 0; j < G; ++j) {
    out.table.values.push_back(acc.value[j].mean());
    out.table.std_errors.push_back(acc.value[j].std_error());
    out.harmonicity.residual.push_back(acc.residual[j].mean());
    out.harmonicity.std_errors.push_back(acc.residual[j].std_error());
    out.harmonicity.truncation_remainder.push_back(acc.remainder[j].mean());
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct WeightedAcc {
  RatioMoments gw;  // (g w, w)
  Moments w;
  double extrapolated = 0.0;
  void merge(const WeightedAcc& o) {
    gw.merge(o.gw);
    w.merge(o.w);
    extrapolated += o.extrapolated;
  }
};

EstimateReport h_expectation(const EnvironmentModel& model, const PathFunctional& g,
                             std::size_t n, double x0, const RenewalTable& table,
                             std::uint64_t replicates, const RunOptions& opt, Side side) {
  if (replicates < 1) throw std::invalid_argument("h-transform expectation needs N >= 1");
  if (side == Side::plus ? x0 < 0.0 : x0 > 0.0) {
    throw std::invalid_argument("start point on the wrong side of the barrier");
  }
  if (table.side != side) throw std::invalid_argument("renewal table for the wrong side");
  // v(x) for x <= 0 is stored at -x
  auto h = [&](double x) { return side == Side::plus ? table.at(x) : table.at(-x); };
  const double h0 = h(x0);

  auto block = [&](std::uint64_t begin, std::uint64_t end) {
    WeightedAcc acc;
    std::vector<FracLinLaw> laws;
    std::vector<double> s;
    for (std::uint64_t i = begin; i < end; ++i) {
      Stream rng(opt.seed, Domain::walk,
                 stream_index(side == Side::plus ? kPurposePlus : kPurposeMinus, 0, i));
      laws.clear();
      s.assign(1, x0);
      bool alive = true;
      for (std::size_t k = 0; k < n; ++k) {
        laws.push_back(model.sample_law(rng));
        s.push_back(s.back() + laws.back().x());
        if (side == Side::plus ? s.back() < 0.0 : s.back() >= 0.0) {
          alive = false;
          break;
        }
      }
      double w = 0.0, gv = 0.0;
      if (alive) {
        w = h(s.back());
        const double mag = side == Side::plus ? s.back() : -s.back();
        if (table.extrapolates(mag)) acc.extrapolated += 1.0;
        gv = g(laws, s);
      }
      acc.gw.add(gv * w, w);
      acc.w.add(w);
    }
    return acc;
  };

  const WeightedAcc acc = reduce_blocks<WeightedAcc>(replicates, opt, block);
  EstimateReport r;
  r.replicates = replicates;
  r.seed = opt.seed;
  r.metadata["n"] = n;
  r.metadata["x0"] = x0;
  r.metadata["normalization"] = acc.w.mean() / h0;
  r.metadata["normalization_stderr"] = acc.w.std_error() / h0;
  r.metadata["extrapolated_fraction"] = acc.extrapolated / static_cast<double>(replicates);
  r.metadata["plugin_bias"] = {{"K", table.depth}, {"N", table.replicates}};
  if (acc.w.sum == 0.0) {
    r.value = std::numeric_limits<double>::quiet_NaN();
    r.std_error = std::numeric_limits<double>::quiet_NaN();
    r.metadata["flag"] = "zero_effective_sample";
    return r;
  }
  r.value = acc.gw.ratio();
  r.std_error = acc.gw.ratio_std_error();
  const double ess = acc.w.sum * acc.w.sum / acc.w.sumsq;
  r.metadata["effective_sample_size"] = ess;
  return r;
}

}  // namespace

EstimateReport pplus_expectation(const EnvironmentModel& model, const PathFunctional& g,
                                 std::size_t n, double x0, const RenewalTable& u,
                                 std::uint64_t replicates, const RunOptions& opt) {
  return h_expectation(model, g, n, x0, u, replicates, opt, Side::plus);
}

EstimateReport pminus_expectation(const EnvironmentModel& model, const PathFunctional& g,
                                  std::size_t n, double x0, const RenewalTable& v,
                                  std::uint64_t replicates, const RunOptions& opt) {
  return h_expectation(model, g, n, x0, v, replicates, opt, Side::minus);
}

// ---------------------------------------------------------------------------

namespace {

// Mean of e^{-S_n} 1{L_n >= 0} (left) or e^{S_n} 1{M_n < 0} (right) over
// paths that stop at the first exit.
EstimateReport killed_exponential(const EnvironmentModel& model, std::size_t n,
                                  std::uint64_t replicates, const RunOptions& opt, bool left,
                                  std::uint64_t slot) {
  const IncrementLaw& inc = model.increment;
  auto block = [&](std::uint64_t begin, std::uint64_t end) {
    Moments m;
    for (std::uint64_t i = begin; i < end; ++i) {
      Stream rng(opt.seed, Domain::walk,
                 stream_index(left ? kPurposeStarLeft : kPurposeStarRight, slot, i));
      double s = 0.0;
      bool alive = true;
      for (std::size_t k = 0; k < n; ++k) {
        s += inc.sample(rng);
        if (left ? s < 0.0 : s >= 0.0) {
          alive = false;
          break;
        }
      }
      m.add(alive ? std::exp(left ? -s : s) : 0.0);
    }
    return m;
  };
  const Moments m = reduce_blocks<Moments>(replicates, opt, block);
  EstimateReport r;
  r.value = m.mean();
  r.std_error = m.std_error();
  r.replicates = replicates;
  r.seed = opt.seed;
  r.metadata["n"] = n;
  r.metadata["functional"] = left ? "E[exp(-S_n); L_n >= 0]" : "E[exp(S_n); tau(n) = n]";
  return r;
}

void ratio_with_error(double num, double num_se, double den, double den_se, double& ratio,
                      double& se) {
  ratio = num / den;
  se = std::fabs(ratio) * std::sqrt((num_se / num) * (num_se / num) + (den_se / den) * (den_se / den));
}

}  // namespace

std::vector<StarRow> star_constants(const EnvironmentModel& model,
                                    std::span<const std::size_t> n_grid,
                                    std::uint64_t replicates, const RunOptions& opt) {
  if (n_grid.empty() || !std::is_sorted(n_grid.begin(), n_grid.end()) ||
      std::adjacent_find(n_grid.begin(), n_grid.end()) != n_grid.end() || n_grid[0] < 1) {
    throw std::invalid_argument("n grid must be strictly increasing and positive");
  }
  std::vector<StarRow> rows;
  for (std::size_t g = 0; g < n_grid.size(); ++g) {
    StarRow row;
    row.n = n_grid[g];
    row.left = killed_exponential(model, row.n, replicates, opt, true, g);
    row.right = killed_exponential(model, row.n, replicates, opt, false, g);
    const double scale = std::pow(static_cast<double>(row.n), 1.5);
    row.scaled_left = scale * row.left.value;
    row.scaled_left_se = scale * row.left.std_error;
    row.scaled_right = scale * row.right.value;
    row.scaled_right_se = scale * row.right.std_error;
    if (rows.empty()) {
      row.ratio_left = row.ratio_left_se = row.ratio_right = row.ratio_right_se =
          std::numeric_limits<double>::quiet_NaN();
    } else {
      const StarRow& prev = rows.back();
      ratio_with_error(row.scaled_left, row.scaled_left_se, prev.scaled_left, prev.scaled_left_se,
                       row.ratio_left, row.ratio_left_se);
      ratio_with_error(row.scaled_right, row.scaled_right_se, prev.scaled_right,
                       prev.scaled_right_se, row.ratio_right, row.ratio_right_se);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string star_constants_csv(std::span<const StarRow> rows) {
  std::ostringstream out;
  out << "n,left,left_stderr,scaled_left,scaled_left_stderr,ratio_left,ratio_left_stderr,"
         "right,right_stderr,scaled_right,scaled_right_stderr,ratio_right,ratio_right_stderr,"
         "replicates\n";
  for (const auto& r : rows) {
    out << r.n << ',' << format_real(r.left.value) << ',' << format_real(r.left.std_error) << ','
        << format_real(r.scaled_left) << ',' << format_real(r.scaled_left_se) << ','
        << format_real(r.ratio_left) << ',' << format_real(r.ratio_left_se) << ','
        << format_real(r.right.value) << ',' << format_real(r.right.std_error) << ','
        << format_real(r.scaled_right) << ',' << format_real(r.scaled_right_se) << ','
        << format_real(r.ratio_right) << ',' << format_real(r.ratio_right_se) << ','
        << r.left.replicates << '\n';
  }
  return out.str();
}

}  // namespace bpre
