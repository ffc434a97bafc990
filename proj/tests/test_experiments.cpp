#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "bpre/experiments.hpp"
#include "oracles.hpp"

using namespace bpre;

namespace {

// E over x1, x2 ~ U[-1,1] (eta = 1) of h(f1, f2)
double double_integral(const std::function<double(const oracle::Params&, const oracle::Params&)>& h) {
  return oracle::integrate(
      [&](double x1) {
        return oracle::integrate(
            [&](double x2) { return 0.25 * h({x1, 1.0}, {x2, 1.0}); }, -1.0, 1.0, 8, 16);
      },
      -1.0, 1.0, 8, 16);
}

}  // namespace

TEST(Tail, PointMassHasClosedForm) {
  // critical geometric: f_{0,n}(0) = n/(n+1), so P(T = n+1) = 1/((n+1)(n+2))
  const auto model = make_model("point-mass");
  const std::size_t grid[] = {64, 256, 1024};
  const auto fit = tail_fit(model, grid, 100, RunOptions{1, 1, 32});
  for (const auto& pt : fit.points) {
    const double n = double(pt.n);
    EXPECT_NEAR(pt.p, 1.0 / ((n + 1) * (n + 2)), 1e-14);
    // identical replicates; only rounding in the sum of squares is left
    EXPECT_LT(pt.p_se, 1e-8 * pt.p);
  }
  EXPECT_TRUE(std::isnan(fit.corrected_slope));
  EXPECT_NEAR(fit.slope, -2.0, 0.05);
}

TEST(Tail, FirstGenerationAgainstQuadrature) {
  const auto model = make_model("uniform-unit");
  const std::size_t grid[] = {1, 10};
  const auto fit = tail_fit(model, grid, 400000, RunOptions{5, 1, 4096});
  const double exact = double_integral([](const oracle::Params& a, const oracle::Params& b) {
    return oracle::pgf(a, oracle::pgf(b, 0.0)) - oracle::pgf(a, 0.0);
  });
  EXPECT_NEAR(fit.points[0].p, exact, 3.0 * fit.points[0].p_se);
  EXPECT_NEAR(fit.points[0].scaled, fit.points[0].p, 0.0);
  EXPECT_GT(fit.points[0].p, fit.points[1].p);
}

TEST(Tail, CorrectedFitRecoversPlantedSlope) {
  // with four or more points the correction column is fitted; on the point mass the
  // exact law 1/((n+1)(n+2)) ~ n^{-2} (1 - 3/n) has a local slope near -2
  const auto model = make_model("point-mass");
  const std::size_t grid[] = {64, 128, 256, 512, 1024};
  const auto fit = tail_fit(model, grid, 4, RunOptions{1, 1, 4});
  EXPECT_NEAR(fit.slope, -2.0, 0.02);
  EXPECT_NEAR(fit.corrected_slope, -2.0, 0.02);
}

TEST(Tail, CsvHeaderAndJson) {
  const auto model = make_model("uniform-unit");
  const std::size_t grid[] = {2, 20};
  const auto fit = tail_fit(model, grid, 1000, RunOptions{1, 1, 256});
  const auto csv = tail_fit_csv(fit);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "n,estimate,stderr,scaled,scaled_stderr,replicates");
  const auto j = to_json(fit);
  EXPECT_TRUE(j.contains("slope"));
  const std::size_t bad[] = {5};
  EXPECT_THROW(tail_fit(model, bad, 10, {}), std::invalid_argument);
}

TEST(LimitLaw, EndpointsExactAndMonotone) {
  const auto model = make_model("uniform-unit");
  std::vector<double> s;
  for (int i = 0; i <= 10; ++i) s.push_back(i / 10.0);
  const auto law = limit_law_Zn(model, 16, 32, s, 8, 2000, RunOptions{3, 1, 512});
  for (const auto* side : {&law.first, &law.second}) {
    EXPECT_EQ(side->pgf.front(), 0.0);
    EXPECT_EQ(side->pgf.back(), 1.0);
    for (std::size_t j = 1; j < s.size(); ++j) EXPECT_GE(side->pgf[j], side->pgf[j - 1]);
    double total = 0.0;
    for (double p : side->pmf) total += p;
    EXPECT_LE(total, 1.0 + 1e-12);
    EXPECT_FALSE(side->collapsed);
  }
  EXPECT_EQ(law.distance.back(), 0.0);
}

TEST(LimitLaw, FirstGenerationAgainstQuadrature) {
  // E[s^{Z_1}; T = 2] = f1(s f2(0)) - f1(0)
  const auto model = make_model("uniform-unit");
  const std::vector<double> s = {0.25, 0.5, 0.75};
  const auto law = limit_law_Zn(model, 1, 2, s, 4, 200000, RunOptions{8, 1, 4096});
  const double den = double_integral([](const oracle::Params& a, const oracle::Params& b) {
    return oracle::pgf(a, oracle::pgf(b, 0.0)) - oracle::pgf(a, 0.0);
  });
  for (std::size_t j = 0; j < s.size(); ++j) {
    const double v = s[j];
    const double num = double_integral([v](const oracle::Params& a, const oracle::Params& b) {
      return oracle::pgf(a, v * oracle::pgf(b, 0.0)) - oracle::pgf(a, 0.0);
    });
    EXPECT_NEAR(law.first.pgf[j], num / den, 3.0 * law.first.pgf_se[j]) << "s=" << v;
  }
}

TEST(Ratio, ConstantFunctionalIsOne) {
  const auto model = make_model("uniform-unit");
  RatioFunctional one;
  one.kind = RatioFunctional::Kind::one;
  const std::size_t grid[] = {8, 16};
  for (Side side : {Side::plus, Side::minus}) {
    const auto rc = ratio_convergence(model, side, one, grid, 5000, RunOptions{2, 1, 512});
    for (const auto& row : rc.rows) {
      EXPECT_NEAR(row.ratio, 1.0, 1e-12);
      EXPECT_GT(row.weight_mean, 0.0);
    }
    EXPECT_TRUE(rc.stabilized);
  }
}

TEST(Ratio, PhiRespectsBound) {
  const auto model = make_model("uniform-unit");
  RatioFunctional g;
  g.beta = {0.5, 2.0};
  EXPECT_DOUBLE_EQ(g.bound(), 1.0);
  EXPECT_DOUBLE_EQ(g(0.0, 0.0), 1.0);
  EXPECT_LT(g(1.0, 1.0), 1.0);
  const std::size_t grid[] = {8, 32};
  for (Side side : {Side::plus, Side::minus}) {
    const auto rc = ratio_convergence(model, side, g, grid, 5000, RunOptions{2, 1, 512});
    for (const auto& row : rc.rows) {
      EXPECT_TRUE(row.within_bound);
      EXPECT_GT(row.ratio, 0.0);
    }
  }
  g.alpha[0] = 0.0;
  EXPECT_THROW(ratio_convergence(model, Side::plus, g, grid, 10, {}), std::invalid_argument);
}

TEST(PathConstancy, WideDeltaDegenerateWindow) {
  const auto model = make_model("uniform-unit");
  const std::size_t grid[] = {32};
  std::vector<AcceptedPaths> kept;
  const auto pc =
      path_constancy(model, grid, 0.49, 0.2, 50, 10000000, 1000000000ull, RunOptions{4, 1, 64},
                     &kept);
  ASSERT_EQ(pc.points.size(), 1u);
  const auto& pt = pc.points[0];
  EXPECT_EQ(pt.m_lo, 15u);
  EXPECT_EQ(pt.m_hi, 16u);
  EXPECT_EQ(pt.accepted, 50u);
  EXPECT_TRUE(pt.all_positive);
  EXPECT_GE(pt.exceedance, 0.0);
  EXPECT_LE(pt.exceedance, 1.0);
  ASSERT_EQ(kept.size(), 1u);
  for (const auto& p : kept[0].paths) EXPECT_EQ(p.extinction_time, 33u);
  EXPECT_THROW(path_constancy(model, grid, 0.5, 0.2, 5, 100, 10, {}), std::invalid_argument);
}

TEST(AcceptedPaths, BudgetExhaustedIsPartial) {
  const auto model = make_model("uniform-unit");
  const auto acc = collect_accepted_paths(model, 64, 1000, 500, 1000000000ull, 0, RunOptions{1, 1, 8});
  EXPECT_TRUE(acc.partial);
  EXPECT_LT(acc.paths.size(), 1000u);
  EXPECT_LE(acc.trials, 500u);
  const auto lines = paths_jsonl(acc);
  EXPECT_EQ(std::count(lines.begin(), lines.end(), '\n'), std::ptrdiff_t(acc.paths.size()));
}

TEST(CrossCheck, SmallRunAgrees) {
  const auto model = make_model("uniform-unit");
  const auto cc = cross_validate_marginal(model, 6, 20000, 2000, 10000000, 1000000000ull,
                                          RunOptions{6, 1, 1024});
  EXPECT_EQ(cc.accepted, 2000u);
  EXPECT_FALSE(cc.partial);
  EXPECT_GE(cc.bins.size(), 3u);
  double obs = 0.0, exp = 0.0;
  for (const auto& b : cc.bins) {
    obs += b.observed;
    exp += b.expected;
  }
  EXPECT_NEAR(obs, 2000.0, 1e-9);
  EXPECT_NEAR(exp, 2000.0, 1e-6);
  EXPECT_GT(cc.p_value, 1e-3);
}

namespace {

template <class F>
void expect_worker_invariant(F&& render) {
  const std::string one = render(RunOptions{42, 1, 64});
  const std::string three = render(RunOptions{42, 3, 64});
  EXPECT_FALSE(one.empty());
  EXPECT_EQ(one, three);
}

}  // namespace

TEST(Determinism, WorkerCountDoesNotChangeOutput) {
  const auto model = make_model("uniform-unit");
  const std::size_t grid[] = {4, 40};
  expect_worker_invariant([&](const RunOptions& o) { return tail_fit_csv(tail_fit(model, grid, 1000, o)); });
  const double s[] = {0.0, 0.5, 1.0};
  expect_worker_invariant(
      [&](const RunOptions& o) { return limit_law_csv(limit_law_Zn(model, 4, 8, s, 4, 1000, o)); });
  const std::size_t small[] = {8, 16};
  expect_worker_invariant([&](const RunOptions& o) {
    return path_constancy_csv(path_constancy(model, small, 0.25, 0.2, 40, 1000000, 1000000000ull, o));
  });
  expect_worker_invariant([&](const RunOptions& o) {
    return cross_check_csv(cross_validate_marginal(model, 4, 2000, 200, 1000000, 1000000000ull, o));
  });
  expect_worker_invariant([&](const RunOptions& o) {
    return ratio_convergence_csv(ratio_convergence(model, Side::minus, RatioFunctional{}, small, 2000, o));
  });
  expect_worker_invariant(
      [&](const RunOptions& o) { return star_constants_csv(star_constants(model, small, 2000, o)); });
  expect_worker_invariant([&](const RunOptions& o) {
    const double g[] = {0.0, 0.5, 1.0};
    return estimate_renewal(model, Side::plus, g, 100, 1000, o).table.to_csv();
  });
}
