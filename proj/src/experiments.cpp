#include "bpre/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "bpre/format.hpp"
#include "bpre/genfun.hpp"

namespace bpre {

namespace {

constexpr std::uint64_t kPurposeTail = 20;
constexpr std::uint64_t kPurposeLimitLaw = 21;
constexpr std::uint64_t kPurposeRatio = 22;
constexpr std::uint64_t kPurposeCrossEnv = 23;
constexpr std::uint64_t kCrossCheckSlot = 100;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_grid(std::span<const std::size_t> n_grid) {
  if (n_grid.empty()) throw std::invalid_argument("n grid is empty");
  if (n_grid[0] < 1 || !std::is_sorted(n_grid.begin(), n_grid.end()) ||
      std::adjacent_find(n_grid.begin(), n_grid.end()) != n_grid.end()) {
    throw std::invalid_argument("n grid must be strictly increasing and positive");
  }
}

nlohmann::json real_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

// Weighted fit of y on (1, x, e^{-x/2}) by the normal equations; returns the
// x coefficient and its standard error.
std::array<double, 2> corrected_fit(std::span<const double> x, std::span<const double> y,
                                    std::span<const double> var) {
  double a[3][4] = {};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double row[3] = {1.0, x[i], std::exp(-0.5 * x[i])};
    const double w = 1.0 / var[i];
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) a[r][c] += w * row[r] * row[c];
      a[r][3] += w * row[r] * y[i];
    }
  }
  // invert the 3x3 block through cofactors
  const double (*m)[4] = a;
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  const double inv10 = -(m[1][0] * m[2][2] - m[1][2] * m[2][0]) / det;
  const double inv11 = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  const double inv12 = -(m[0][0] * m[1][2] - m[0][2] * m[1][0]) / det;
  const double slope = inv10 * m[0][3] + inv11 * m[1][3] + inv12 * m[2][3];
  return {slope, std::sqrt(inv11)};
}

}  // namespace

// ---------------------------------------------------------------------------

TailFit tail_fit(const EnvironmentModel& model, std::span<const std::size_t> n_grid,
                 std::uint64_t replicates, const RunOptions& opt) {
  check_grid(n_grid);
  if (n_grid.size() < 2) throw std::invalid_argument("tail fit needs at least two grid points");
  if (replicates < 2) throw std::invalid_argument("tail fit needs at least two replicates");
  TailFit fit;
  fit.replicates = replicates;
  fit.seed = opt.seed;

  for (std::size_t g = 0; g < n_grid.size(); ++g) {
    const std::size_t n = n_grid[g];
    auto block = [&](std::uint64_t begin, std::uint64_t end) {
      Moments m;
      for (std::uint64_t i = begin; i < end; ++i) {
        Stream rng(opt.seed, Domain::environment, stream_index(kPurposeTail, g, i));
        Composition comp = Composition::identity(0);
        for (std::size_t k = 0; k < n; ++k) comp = extend_right(comp, model.sample_law(rng));
        m.add(std::exp(log_extinction_increment(comp, model.sample_law(rng))));
      }
      return m;
    };
    const Moments m = reduce_blocks<Moments>(replicates, opt, block);
    TailPoint pt;
    pt.n = n;
    pt.p = m.mean();
    pt.p_se = m.std_error();
    const double scale = std::pow(static_cast<double>(n), 1.5);
    pt.scaled = scale * pt.p;
    pt.scaled_se = scale * pt.p_se;
    fit.points.push_back(pt);
  }

  std::vector<double> lx, ly, lv;
  for (const auto& pt : fit.points) {
    lx.push_back(std::log(static_cast<double>(pt.n)));
    ly.push_back(std::log(pt.p));
    const double rel = pt.p_se / pt.p;
    // a point mass environment has zero spread; the floor is double rounding of log p
    lv.push_back(std::max(rel * rel, 1e-24));
  }
  fit.fit = weighted_line_fit(lx, ly, lv);
  fit.slope = fit.fit.slope;
  fit.slope_se = fit.fit.slope_se;
  fit.slope_ci_lo = fit.slope - 1.959963984540054 * fit.slope_se;
  fit.slope_ci_hi = fit.slope + 1.959963984540054 * fit.slope_se;
  fit.intercept = fit.fit.intercept;
  if (lx.size() >= 4) {
    const auto c = corrected_fit(lx, ly, lv);
    fit.corrected_slope = c[0];
    fit.corrected_slope_se = c[1];
  } else {
    fit.corrected_slope = fit.corrected_slope_se = kNaN;
  }
  const TailPoint& last = fit.points.back();
  const TailPoint& prev = fit.points[fit.points.size() - 2];
  fit.log_c = std::log(last.scaled);
  const double se = std::hypot(last.scaled_se, prev.scaled_se);
  const double diff = last.scaled - prev.scaled;
  fit.stabilization_z = se > 0.0 ? diff / se : (diff == 0.0 ? 0.0 : kNaN);
  fit.stabilized = se > 0.0 ? std::fabs(diff) <= 3.0 * se : diff == 0.0;
  return fit;
}

std::string tail_fit_csv(const TailFit& fit) {
  std::ostringstream out;
  out << "n,estimate,stderr,scaled,scaled_stderr,replicates\n";
  for (const auto& pt : fit.points) {
    out << pt.n << ',' << format_real(pt.p) << ',' << format_real(pt.p_se) << ','
        << format_real(pt.scaled) << ',' << format_real(pt.scaled_se) << ',' << fit.replicates
        << '\n';
  }
  return out.str();
}

nlohmann::json to_json(const TailFit& fit) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& pt : fit.points) {
    pts.push_back({{"n", pt.n},
                   {"estimate", pt.p},
                   {"stderr", pt.p_se},
                   {"scaled", pt.scaled},
                   {"scaled_stderr", pt.scaled_se}});
  }
  return {{"points", pts},
          {"replicates", fit.replicates},
          {"seed", fit.seed},
          {"slope", fit.slope},
          {"slope_stderr", fit.slope_se},
          {"slope_ci95", {fit.slope_ci_lo, fit.slope_ci_hi}},
          {"intercept", fit.intercept},
          {"fit_chi2", fit.fit.chi2},
          {"corrected_slope", real_or_null(fit.corrected_slope)},
          {"corrected_slope_stderr", real_or_null(fit.corrected_slope_se)},
          {"log_c", fit.log_c},
          {"stabilized", fit.stabilized},
          {"stabilization_z", real_or_null(fit.stabilization_z)}};
}

// ---------------------------------------------------------------------------

namespace {

struct LimitAcc {
  std::vector<RatioMoments> pgf;
  std::vector<RatioMoments> pmf;
  void merge(const LimitAcc& o) {
    if (pgf.empty() && pmf.empty()) {
      *this = o;
      return;
    }
    for (std::size_t j = 0; j < pgf.size(); ++j) pgf[j].merge(o.pgf[j]);
    for (std::size_t j = 0; j < pmf.size(); ++j) pmf[j].merge(o.pmf[j]);
  }
};

LimitLawSide limit_side(const EnvironmentModel& model, std::size_t n,
                        std::span<const double> s_grid, std::uint64_t k_max,
                        std::uint64_t replicates, const RunOptions& opt, std::uint64_t slot) {
  auto block = [&](std::uint64_t begin, std::uint64_t end) {
    LimitAcc acc;
    acc.pgf.assign(s_grid.size(), RatioMoments{});
    acc.pmf.assign(k_max, RatioMoments{});
    for (std::uint64_t i = begin; i < end; ++i) {
      Stream rng(opt.seed, Domain::environment, stream_index(kPurposeLimitLaw, slot, i));
      Composition comp = Composition::identity(0);
      for (std::size_t k = 0; k < n; ++k) comp = extend_right(comp, model.sample_law(rng));
      const FracLinLaw next = model.sample_law(rng);
      const double den = delta_n(comp, next, 1.0);
      for (std::size_t j = 0; j < s_grid.size(); ++j) {
        const double s = s_grid[j];
        const double num = s == 1.0 ? den : delta_n(comp, next, s);
        acc.pgf[j].add(num, den);
      }
      for (std::uint64_t k = 1; k <= k_max; ++k) {
        acc.pmf[k - 1].add(std::exp(log_delta_n_coefficient(comp, next, k)), den);
      }
    }
    return acc;
  };
  const LimitAcc acc = reduce_blocks<LimitAcc>(replicates, opt, block);
  LimitLawSide side;
  side.n = n;
  const RatioMoments& base = acc.pgf.empty() ? RatioMoments{} : acc.pgf.front();
  side.joint = base.mean_y();
  Moments den;
  den.count = base.count;
  den.sum = base.sy;
  den.sumsq = base.syy;
  side.joint_se = den.std_error();
  side.collapsed = base.sy == 0.0;
  for (const auto& r : acc.pgf) {
    side.pgf.push_back(side.collapsed ? kNaN : r.ratio());
    side.pgf_se.push_back(side.collapsed ? kNaN : r.ratio_std_error());
  }
  for (const auto& r : acc.pmf) {
    side.pmf.push_back(side.collapsed ? kNaN : r.ratio());
    side.pmf_se.push_back(side.collapsed ? kNaN : r.ratio_std_error());
  }
  return side;
}

}  // namespace

LimitLaw limit_law_Zn(const EnvironmentModel& model, std::size_t n, std::size_t n2,
                      std::span<const double> s_grid, std::uint64_t k_max,
                      std::uint64_t replicates, const RunOptions& opt, double tolerance) {
  if (n < 1 || n2 <= n) throw std::invalid_argument("limit law needs 1 <= n < n2");
  if (s_grid.empty()) throw std::invalid_argument("limit law needs a non-empty s grid");
  for (double s : s_grid) {
    if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("s grid must lie in [0,1]");
  }
  if (replicates < 2) throw std::invalid_argument("limit law needs at least two replicates");
  LimitLaw out;
  out.s_grid.assign(s_grid.begin(), s_grid.end());
  out.k_max = k_max;
  out.replicates = replicates;
  out.seed = opt.seed;
  out.tolerance = tolerance;
  out.first = limit_side(model, n, s_grid, k_max, replicates, opt, 0);
  out.second = limit_side(model, n2, s_grid, k_max, replicates, opt, 1);
  out.passed = !out.first.collapsed && !out.second.collapsed;
  for (std::size_t j = 0; j < s_grid.size(); ++j) {
    const double d = std::fabs(out.first.pgf[j] - out.second.pgf[j]);
    const double sig = std::hypot(out.first.pgf_se[j], out.second.pgf_se[j]);
    out.distance.push_back(d);
    out.sigma.push_back(sig);
    if (d > out.sup_distance || j == 0) {
      out.sup_distance = d;
      out.sup_index = j;
    }
    if (!(d < std::max(tolerance, 3.0 * sig))) out.passed = false;
  }
  return out;
}

std::string limit_law_csv(const LimitLaw& law) {
  std::ostringstream out;
  out << "s,estimate_n,stderr_n,estimate_2n,stderr_2n,distance,sigma,replicates\n";
  for (std::size_t j = 0; j < law.s_grid.size(); ++j) {
    out << format_real(law.s_grid[j]) << ',' << format_real(law.first.pgf[j]) << ','
        << format_real(law.first.pgf_se[j]) << ',' << format_real(law.second.pgf[j]) << ','
        << format_real(law.second.pgf_se[j]) << ',' << format_real(law.distance[j]) << ','
        << format_real(law.sigma[j]) << ',' << law.replicates << '\n';
  }
  return out.str();
}

std::string limit_law_pmf_csv(const LimitLaw& law) {
  std::ostringstream out;
  out << "k,pmf_n,stderr_n,pmf_2n,stderr_2n,replicates\n";
  for (std::uint64_t k = 1; k <= law.k_max; ++k) {
    out << k << ',' << format_real(law.first.pmf[k - 1]) << ','
        << format_real(law.first.pmf_se[k - 1]) << ',' << format_real(law.second.pmf[k - 1])
        << ',' << format_real(law.second.pmf_se[k - 1]) << ',' << law.replicates << '\n';
  }
  return out.str();
}

nlohmann::json to_json(const LimitLaw& law) {
  auto side = [](const LimitLawSide& s) {
    return nlohmann::json{{"n", s.n},
                          {"p_extinct_next", s.joint},
                          {"p_extinct_next_stderr", s.joint_se},
                          {"flag", s.collapsed ? "denominator_collapse" : "ok"}};
  };
  return {{"s_grid", law.s_grid},
          {"k_max", law.k_max},
          {"replicates", law.replicates},
          {"seed", law.seed},
          {"first", side(law.first)},
          {"second", side(law.second)},
          {"sup_distance", real_or_null(law.sup_distance)},
          {"sup_at_s", law.s_grid.empty() ? 0.0 : law.s_grid[law.sup_index]},
          {"tolerance", law.tolerance},
          {"tolerance_note", "max(tolerance, 3 sigma) per grid point; engineering choice"},
          {"passed", law.passed}};
}

// ---------------------------------------------------------------------------

namespace {

struct TrialBlock {
  std::vector<PathSample> accepted;
  std::vector<std::uint64_t> capped;
};

}  // namespace

AcceptedPaths collect_accepted_paths(const EnvironmentModel& model, std::size_t n,
                                     std::uint64_t target, std::uint64_t max_trials,
                                     std::uint64_t cap, std::uint64_t slot,
                                     const RunOptions& opt) {
  if (target < 1) throw std::invalid_argument("need a positive acceptance target");
  AcceptedPaths out;
  out.n = n;
  const std::uint64_t chunk = std::max<std::uint64_t>(1, opt.block_size) * 64;
  std::uint64_t done = 0;
  while (done < max_trials && out.paths.size() < target) {
    const std::uint64_t len = std::min(chunk, max_trials - done);
    auto parts = map_blocks<TrialBlock>(len, opt, [&](std::uint64_t b, std::uint64_t e) {
      TrialBlock tb;
      for (std::uint64_t i = b; i < e; ++i) {
        PathSample p = rejection_joint_path(model, n, opt.seed, done + i, cap, slot);
        if (p.accepted) tb.accepted.push_back(std::move(p));
        else if (p.capped) tb.capped.push_back(done + i);
      }
      return tb;
    });
    std::uint64_t last = done + len;
    for (auto& tb : parts) {
      for (auto& p : tb.accepted) {
        if (out.paths.size() >= target) break;
        out.paths.push_back(std::move(p));
        if (out.paths.size() == target) last = out.paths.back().trial + 1;
      }
    }
    for (const auto& tb : parts) {
      for (std::uint64_t t : tb.capped) {
        if (t < last) ++out.capped;
      }
    }
    done = last;
  }
  out.trials = done;
  out.partial = out.paths.size() < target;
  return out;
}

std::string paths_jsonl(const AcceptedPaths& paths) {
  std::ostringstream out;
  for (const auto& p : paths.paths) {
    nlohmann::json j{{"seed", p.env_seed.seed},
                     {"stream", p.env_seed.stream},
                     {"trial", p.trial},
                     {"n", paths.n},
                     {"Z", p.z},
                     {"S", p.s}};
    out << j.dump() << '\n';
  }
  return out.str();
}

PathConstancy path_constancy(const EnvironmentModel& model, std::span<const std::size_t> n_grid,
                             double delta, double eps_factor, std::uint64_t target,
                             std::uint64_t max_trials, std::uint64_t cap, const RunOptions& opt,
                             std::vector<AcceptedPaths>* keep) {
  check_grid(n_grid);
  if (!(delta > 0.0 && delta < 0.5)) throw std::invalid_argument("delta must lie in (0, 1/2)");
  if (!(eps_factor > 0.0)) throw std::invalid_argument("epsilon factor must be positive");
  PathConstancy pc;
  pc.delta = delta;
  pc.eps_factor = eps_factor;
  pc.seed = opt.seed;
  for (std::size_t g = 0; g < n_grid.size(); ++g) {
    const std::size_t n = n_grid[g];
    AcceptedPaths acc = collect_accepted_paths(model, n, target, max_trials, cap, g + 1, opt);
    ConstancyPoint pt;
    pt.n = n;
    pt.m_lo = floor_index(n, delta);
    pt.m_hi = floor_index(n, 1.0 - delta);
    pt.accepted = acc.paths.size();
    pt.trials = acc.trials;
    pt.capped = acc.capped;
    pt.partial = acc.partial;
    pt.acceptance_rate =
        acc.trials > 0 ? static_cast<double>(pt.accepted) / static_cast<double>(acc.trials) : 0.0;
    if (!acc.paths.empty()) {
      std::vector<double> ref;
      ref.reserve(acc.paths.size());
      for (const auto& p : acc.paths) ref.push_back(p.y(pt.m_hi));
      pt.median_y = median(ref);
      pt.epsilon = eps_factor * pt.median_y;
      double hits = 0.0;
      for (std::size_t i = 0; i < acc.paths.size(); ++i) {
        const PathSample& p = acc.paths[i];
        double sup = 0.0;
        for (std::size_t m = pt.m_lo; m <= pt.m_hi; ++m) {
          const double y = p.y(m);
          if (!(y > 0.0)) pt.all_positive = false;
          sup = std::max(sup, std::fabs(y - ref[i]));
        }
        if (sup > pt.epsilon) hits += 1.0;
      }
      const double N = static_cast<double>(acc.paths.size());
      pt.exceedance = hits / N;
      pt.exceedance_se = std::sqrt(pt.exceedance * (1.0 - pt.exceedance) / N);
    } else {
      pt.median_y = pt.epsilon = pt.exceedance = pt.exceedance_se = kNaN;
    }
    pc.partial = pc.partial || pt.partial;
    pc.points.push_back(pt);
    if (keep) keep->push_back(std::move(acc));
  }
  pc.non_increasing = true;
  for (std::size_t i = 0; i + 1 < pc.points.size(); ++i) {
    const auto& a = pc.points[i];
    const auto& b = pc.points[i + 1];
    if (!(b.exceedance <= a.exceedance + std::hypot(a.exceedance_se, b.exceedance_se))) {
      pc.non_increasing = false;
    }
  }
  std::vector<double> lx, ly, lv;
  for (const auto& pt : pc.points) {
    if (pt.accepted == 0) continue;
    lx.push_back(std::log(static_cast<double>(pt.n)));
    ly.push_back(std::log(pt.acceptance_rate));
    lv.push_back(1.0 / static_cast<double>(pt.accepted));
  }
  if (lx.size() >= 2) {
    const LineFit f = weighted_line_fit(lx, ly, lv);
    pc.acceptance_slope = f.slope;
    pc.acceptance_slope_se = f.slope_se;
  } else {
    pc.acceptance_slope = pc.acceptance_slope_se = kNaN;
  }
  return pc;
}

std::string path_constancy_csv(const PathConstancy& pc) {
  std::ostringstream out;
  out << "n,estimate,stderr,replicates,trials,capped,epsilon,median_y,acceptance_rate,partial\n";
  for (const auto& pt : pc.points) {
    out << pt.n << ',' << format_real(pt.exceedance) << ',' << format_real(pt.exceedance_se)
        << ',' << pt.accepted << ',' << pt.trials << ',' << pt.capped << ','
        << format_real(pt.epsilon) << ',' << format_real(pt.median_y) << ','
        << format_real(pt.acceptance_rate) << ',' << (pt.partial ? 1 : 0) << '\n';
  }
  return out.str();
}

nlohmann::json to_json(const PathConstancy& pc) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& pt : pc.points) {
    pts.push_back({{"n", pt.n},
                   {"m_range", {pt.m_lo, pt.m_hi}},
                   {"accepted", pt.accepted},
                   {"trials", pt.trials},
                   {"capped", pt.capped},
                   {"partial", pt.partial},
                   {"median_y", real_or_null(pt.median_y)},
                   {"epsilon", real_or_null(pt.epsilon)},
                   {"exceedance", real_or_null(pt.exceedance)},
                   {"exceedance_stderr", real_or_null(pt.exceedance_se)},
                   {"acceptance_rate", pt.acceptance_rate},
                   {"all_positive", pt.all_positive}});
  }
  return {{"delta", pc.delta},
          {"epsilon_rule", "eps_factor * median(Y_{1-delta}) per n"},
          {"eps_factor", pc.eps_factor},
          {"seed", pc.seed},
          {"points", pts},
          {"non_increasing", pc.non_increasing},
          {"partial", pc.partial},
          {"acceptance_slope", real_or_null(pc.acceptance_slope)},
          {"acceptance_slope_stderr", real_or_null(pc.acceptance_slope_se)}};
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kCrossKmax = 256;

struct CrossAcc {
  std::vector<RatioMoments> cells;     // P(Z_n = k, T = n+1), k = 1..kmax
  std::vector<RatioMoments> survival;  // P(Z_n > j, T = n+1), j = 0..kmax
  void merge(const CrossAcc& o) {
    if (cells.empty()) {
      *this = o;
      return;
    }
    for (std::size_t j = 0; j < cells.size(); ++j) cells[j].merge(o.cells[j]);
    for (std::size_t j = 0; j < survival.size(); ++j) survival[j].merge(o.survival[j]);
  }
};

struct RatioOut {
  RatioMoments r;
  double over = 0.0;
  void merge(const RatioOut& o) {
    r.merge(o.r);
    over += o.over;
  }
};

}  // namespace

MarginalCrossCheck cross_validate_marginal(const EnvironmentModel& model, std::size_t n,
                                           std::uint64_t env_replicates, std::uint64_t target,
                                           std::uint64_t max_trials, std::uint64_t cap,
                                           const RunOptions& opt) {
  if (n < 1) throw std::invalid_argument("cross-check needs n >= 1");
  if (env_replicates < 2) throw std::invalid_argument("cross-check needs environment replicates");
  MarginalCrossCheck cc;
  cc.n = n;
  cc.env_replicates = env_replicates;

  auto block = [&](std::uint64_t begin, std::uint64_t end) {
    CrossAcc acc;
    acc.cells.assign(kCrossKmax, RatioMoments{});
    acc.survival.assign(kCrossKmax + 1, RatioMoments{});
    std::vector<double> c(kCrossKmax);
    for (std::uint64_t i = begin; i < end; ++i) {
      Stream rng(opt.seed, Domain::environment, stream_index(kPurposeCrossEnv, 0, i));
      Composition comp = Composition::identity(0);
      for (std::size_t k = 0; k < n; ++k) comp = extend_right(comp, model.sample_law(rng));
      const FracLinLaw next = model.sample_law(rng);
      const double den = delta_n(comp, next, 1.0);
      for (std::uint64_t k = 1; k <= kCrossKmax; ++k) {
        c[k - 1] = std::exp(log_delta_n_coefficient(comp, next, k));
        acc.cells[k - 1].add(c[k - 1], den);
      }
      // geometric tail sum_{k > K} coefficient(k) = coefficient(K+1) / (1 - q f0)
      const double log_r = comp.log_q() + next.log_denom_minus_one() - std::log(next.denom());
      double tail =
          std::exp(log_delta_n_coefficient(comp, next, kCrossKmax + 1) - log1m_exp(log_r));
      for (std::size_t j = kCrossKmax + 1; j-- > 0;) {
        acc.survival[j].add(tail, den);
        if (j > 0) tail += c[j - 1];
      }
    }
    return acc;
  };
  const CrossAcc exact = reduce_blocks<CrossAcc>(env_replicates, opt, block);

  const AcceptedPaths acc =
      collect_accepted_paths(model, n, target, max_trials, cap, kCrossCheckSlot, opt);
  cc.accepted = acc.paths.size();
  cc.trials = acc.trials;
  cc.capped = acc.capped;
  cc.partial = acc.partial;
  if (acc.paths.empty()) {
    cc.p_value = kNaN;
    return cc;
  }
  const double N = static_cast<double>(acc.paths.size());
  std::vector<double> observed(kCrossKmax + 1, 0.0);
  for (const auto& p : acc.paths) {
    const std::uint64_t z = p.z.at(n);
    observed[std::min<std::uint64_t>(z, kCrossKmax + 1) - 1] += 1.0;
  }

  // Bins 1, 2, ... while expected >= 5, then everything else.
  std::size_t j = 0;
  double used_p = 0.0, used_obs = 0.0;
  for (; j < kCrossKmax; ++j) {
    const double p = exact.cells[j].ratio();
    const double rest = exact.survival[j + 1].ratio();
    if (N * p < 5.0 || N * rest < 5.0) break;
    const double se = exact.cells[j].ratio_std_error();
    MarginalBin bin;
    bin.k_lo = bin.k_hi = j + 1;
    bin.observed = observed[j];
    bin.expected = N * p;
    bin.sigma = std::sqrt(N * p * (1.0 - p) + N * N * se * se);
    cc.bins.push_back(bin);
    used_p += p;
    used_obs += observed[j];
  }
  MarginalBin tail;
  tail.k_lo = j + 1;
  tail.k_hi = std::numeric_limits<std::uint64_t>::max();
  tail.observed = N - used_obs;
  const double tail_p = exact.survival[j].ratio();
  const double tail_se = exact.survival[j].ratio_std_error();
  tail.expected = N * tail_p;
  tail.sigma = std::sqrt(N * tail_p * (1.0 - tail_p) + N * N * tail_se * tail_se);
  cc.bins.push_back(tail);

  cc.per_bin_ok = true;
  double tv = 0.0;
  for (const auto& b : cc.bins) {
    if (b.expected > 0.0) cc.chi2 += (b.observed - b.expected) * (b.observed - b.expected) / b.expected;
    if (!(std::fabs(b.observed - b.expected) <= 3.0 * b.sigma)) cc.per_bin_ok = false;
    tv += std::fabs(b.observed - b.expected) / N;
  }
  cc.total_variation = 0.5 * tv;
  cc.dof = static_cast<double>(cc.bins.size() - 1);
  cc.p_value = cc.dof > 0.0 ? chi_square_sf(cc.chi2, cc.dof) : kNaN;
  cc.chi2_ok = cc.dof > 0.0 && cc.p_value > 0.01;
  return cc;
}

std::string cross_check_csv(const MarginalCrossCheck& cc) {
  std::ostringstream out;
  out << "k_lo,k_hi,observed,expected,sigma,replicates\n";
  for (const auto& b : cc.bins) {
    out << b.k_lo << ',';
    if (b.k_hi == std::numeric_limits<std::uint64_t>::max()) out << "inf";
    else out << b.k_hi;
    out << ',' << format_real(b.observed) << ',' << format_real(b.expected) << ','
        << format_real(b.sigma) << ',' << cc.accepted << '\n';
  }
  return out.str();
}

nlohmann::json to_json(const MarginalCrossCheck& cc) {
  return {{"n", cc.n},
          {"env_replicates", cc.env_replicates},
          {"accepted", cc.accepted},
          {"trials", cc.trials},
          {"capped", cc.capped},
          {"partial", cc.partial},
          {"bins", cc.bins.size()},
          {"chi2", cc.chi2},
          {"dof", cc.dof},
          {"p_value", real_or_null(cc.p_value)},
          {"per_bin_within_3sigma", cc.per_bin_ok},
          {"chi2_at_1pct", cc.chi2_ok},
          {"total_variation", cc.total_variation}};
}

// ---------------------------------------------------------------------------

double RatioFunctional::operator()(double a, double b) const {
  if (kind == Kind::one) return 1.0;
  return 1.0 / ((alpha[0] * a + beta[0] + gamma[0] * b) * (alpha[1] * a + beta[1] + gamma[1] * b));
}

double RatioFunctional::bound() const {
  if (kind == Kind::one) return 1.0;
  return 1.0 / (beta[0] * beta[1]);
}

std::string RatioFunctional::describe() const {
  if (kind == Kind::one) return "1";
  std::ostringstream out;
  out << "1/((" << format_real(alpha[0]) << "a+" << format_real(beta[0]) << "+"
      << format_real(gamma[0]) << "b)(" << format_real(alpha[1]) << "a+" << format_real(beta[1])
      << "+" << format_real(gamma[1]) << "b))";
  return out.str();
}

RatioConvergence ratio_convergence(const EnvironmentModel& model, Side side,
                                   const RatioFunctional& g, std::span<const std::size_t> n_grid,
                                   std::uint64_t replicates, const RunOptions& opt) {
  check_grid(n_grid);
  if (replicates < 2) throw std::invalid_argument("ratio convergence needs replicates >= 2");
  if (g.kind == RatioFunctional::Kind::phi) {
    for (int i = 0; i < 2; ++i) {
      if (!(g.alpha[i] > 0.0 && g.beta[i] > 0.0 && g.gamma[i] > 0.0)) {
        throw std::invalid_argument("functional coefficients must be positive");
      }
    }
  }
  const bool left = side == Side::plus;
  RatioConvergence rc;
  rc.side = side;
  rc.functional = g;
  rc.replicates = replicates;
  rc.seed = opt.seed;
  for (std::size_t gi = 0; gi < n_grid.size(); ++gi) {
    const std::size_t n = n_grid[gi];
    auto block = [&](std::uint64_t begin, std::uint64_t end) {
      RatioMoments acc;
      double over = 0.0;
      for (std::uint64_t i = begin; i < end; ++i) {
        Stream rng(opt.seed, Domain::walk, stream_index(kPurposeRatio, gi * 2 + (left ? 0 : 1), i));
        double s = 0.0, b = 0.0;
        bool alive = true;
        for (std::size_t k = 0; k < n; ++k) {
          const FracLinLaw law = model.sample_law(rng);
          if (left) {
            b += law.eta() * std::exp(-s);
            s += law.x();
            if (s < 0.0) alive = false;
          } else {
            // reversed walk S'_j; e^{S_n} b_n = sum_j eta'_j e^{S'_j}
            s += law.x();
            if (s >= 0.0) alive = false;
            b += law.eta() * std::exp(s);
          }
          if (!alive) break;
        }
        if (!alive) {
          acc.add(0.0, 0.0);
          continue;
        }
        const double a = std::exp(left ? -s : s);
        const double gv = g(a, b);
        if (gv > g.bound()) over += 1.0;
        acc.add(gv * a, a);
      }
      return RatioOut{acc, over};
    };
    const RatioOut out = reduce_blocks<RatioOut>(replicates, opt, block);
    RatioRow row;
    row.n = n;
    row.ratio = out.r.ratio();
    row.ratio_se = out.r.ratio_std_error();
    row.weight_mean = out.r.mean_y();
    Moments w;
    w.count = out.r.count;
    w.sum = out.r.sy;
    w.sumsq = out.r.syy;
    row.weight_se = w.std_error();
    row.within_bound = out.over == 0.0 && row.ratio <= g.bound();
    rc.rows.push_back(row);
  }
  if (rc.rows.size() >= 2) {
    const auto& a = rc.rows[rc.rows.size() - 2];
    const auto& b = rc.rows.back();
    rc.last_difference = b.ratio - a.ratio;
    rc.last_difference_se = std::hypot(a.ratio_se, b.ratio_se);
    rc.stabilized = rc.last_difference_se > 0.0
                        ? std::fabs(rc.last_difference) < 3.0 * rc.last_difference_se
                        : rc.last_difference == 0.0;
  } else {
    rc.last_difference = rc.last_difference_se = kNaN;
  }
  return rc;
}

std::string ratio_convergence_csv(const RatioConvergence& rc) {
  std::ostringstream out;
  out << "n,estimate,stderr,weight_mean,weight_stderr,replicates\n";
  for (const auto& r : rc.rows) {
    out << r.n << ',' << format_real(r.ratio) << ',' << format_real(r.ratio_se) << ','
        << format_real(r.weight_mean) << ',' << format_real(r.weight_se) << ',' << rc.replicates
        << '\n';
  }
  return out.str();
}

nlohmann::json to_json(const RatioConvergence& rc) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : rc.rows) {
    rows.push_back({{"n", r.n},
                    {"ratio", real_or_null(r.ratio)},
                    {"stderr", real_or_null(r.ratio_se)},
                    {"weight_mean", r.weight_mean},
                    {"within_bound", r.within_bound}});
  }
  return {{"side", rc.side == Side::plus ? "left" : "right"},
          {"functional", rc.functional.describe()},
          {"bound", rc.functional.bound()},
          {"replicates", rc.replicates},
          {"seed", rc.seed},
          {"rows", rows},
          {"last_difference", real_or_null(rc.last_difference)},
          {"last_difference_stderr", real_or_null(rc.last_difference_se)},
          {"stabilized", rc.stabilized}};
}

}  // namespace bpre
