#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "bpre/offspring.hpp"

using namespace bpre;

TEST(FracLinLaw, UnitLaw) {
  const auto law = law_from_params(0.0, 1.0);
  EXPECT_DOUBLE_EQ(law.f0(), 0.5);
  EXPECT_DOUBLE_EQ(law.q(), 0.5);
  EXPECT_DOUBLE_EQ(law.denom(), 2.0);
}

TEST(FracLinLaw, SupercriticalMean) {
  EXPECT_NEAR(law_from_params(1.0, 1.0).f0(), 0.26894142136999510, 1e-15);
}

TEST(FracLinLaw, LargeEtaSendsF0ToOne) {
  EXPECT_GT(law_from_params(0.0, 1e9).f0(), 1.0 - 2e-9);
}

TEST(FracLinLaw, RejectsBadInput) {
  EXPECT_THROW(law_from_params(0.0, 0.0), std::invalid_argument);
  EXPECT_THROW(law_from_params(0.0, -1.0), std::invalid_argument);
  EXPECT_THROW(law_from_params(NAN, 1.0), std::invalid_argument);
  EXPECT_THROW(law_from_params(0.0, INFINITY), std::invalid_argument);
  // e^{-x} + eta <= 1 would put f(0) at or below zero
  EXPECT_THROW(law_from_params(2.0, 0.1), std::invalid_argument);
}

TEST(FracLinLaw, LogDenomMinusOne) {
  const auto law = law_from_params(0.3, 0.7);
  EXPECT_NEAR(std::exp(law.log_denom_minus_one()), law.denom() - 1.0, 1e-15);
}

TEST(Pgf, Values) {
  const auto law = law_from_params(0.0, 1.0);
  EXPECT_EQ(pgf_eval(law, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(pgf_eval(law, 0.0), 0.5);
  EXPECT_NEAR(pgf_eval(law, 0.5), 2.0 / 3.0, 1e-15);
  EXPECT_THROW(pgf_eval(law, 1.5), std::domain_error);
  EXPECT_THROW(pgf_eval(law, -0.1), std::domain_error);
}

TEST(Pmf, UnitLawSeries) {
  const auto law = law_from_params(0.0, 1.0);
  EXPECT_DOUBLE_EQ(pmf(law, 0), 0.5);
  for (std::uint64_t k = 1; k < 30; ++k) EXPECT_NEAR(pmf(law, k), std::ldexp(1.0, -int(k) - 1), 1e-16);
}

TEST(Pmf, SumsAndMeanAgainstPgf) {
  for (double x : {-1.0, -0.3, 0.0, 0.6, 1.0}) {
    for (double eta : {0.25, 1.0, 2.0}) {
      if (std::exp(-x) + eta <= 1.0) continue;
      const auto law = law_from_params(x, eta);
      const std::uint64_t K = pmf_truncation(law, 1e-15);
      double total = 0.0, mean = 0.0;
      for (std::uint64_t k = 0; k <= K; ++k) {
        const double p = pmf(law, k);
        total += p;
        mean += static_cast<double>(k) * p;
        ASSERT_LE(total, 1.0 + 1e-14);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
      // the mean tail beyond K is at most a few multiples of the mass tail
      EXPECT_NEAR(mean, std::exp(x), 1e-9);
      auto f = [&](double s) { return pgf_eval(law, s); };
      // one-sided second-order differences since s > 1 is outside the domain
      const double h1 = 1e-6;
      const double d1 = (3 * f(1.0) - 4 * f(1.0 - h1) + f(1.0 - 2 * h1)) / (2 * h1);
      const double h2 = 1e-4;
      const double d2 =
          (2 * f(1.0) - 5 * f(1.0 - h2) + 4 * f(1.0 - 2 * h2) - f(1.0 - 3 * h2)) / (h2 * h2);
      EXPECT_NEAR(d1 / std::exp(x), 1.0, 1e-5);
      EXPECT_NEAR(d2 / (2.0 * d1 * d1) / eta, 1.0, 1e-4);
    }
  }
}

TEST(Pmf, PgfSeriesAgreement) {
  for (double x : {-1.0, 0.0, 1.0}) {
    const auto law = law_from_params(x, 1.0);
    for (double s : {0.0, 0.2, 0.5, 0.9, 0.99}) {
      double series = 0.0, sk = 1.0;
      for (std::uint64_t k = 0; k <= 200; ++k, sk *= s) series += pmf(law, k) * sk;
      // remainder of the geometric tail beyond 200
      const double rem = std::pow(law.q() * s, 201) / law.denom();
      EXPECT_NEAR(series, pgf_eval(law, s), 1e-10 + rem);
    }
  }
}

TEST(Pmf, Truncation) {
  const auto law = law_from_params(0.0, 1.0);
  const std::uint64_t K = pmf_truncation(law, 1e-12);
  // P(xi > K) = q^K / denom
  EXPECT_LT(std::pow(law.q(), double(K)) / law.denom(), 1e-12);
  EXPECT_GE(std::pow(law.q(), double(K - 1)) / law.denom(), 1e-12);
}

namespace {

double kolmogorov_distance(const FracLinLaw& law, std::uint64_t N, std::uint64_t seed) {
  Stream rng(seed, Domain::test, 1);
  std::map<std::uint64_t, double> counts;
  for (std::uint64_t i = 0; i < N; ++i) counts[sample_offspring(law, rng)] += 1.0;
  const std::uint64_t top = counts.rbegin()->first;
  double emp = 0.0, cdf = 0.0, worst = 0.0;
  for (std::uint64_t k = 0; k <= top; ++k) {
    auto it = counts.find(k);
    emp += it == counts.end() ? 0.0 : it->second / double(N);
    cdf += pmf(law, k);
    worst = std::max(worst, std::fabs(emp - cdf));
  }
  return worst;
}

}  // namespace

TEST(Sampler, KolmogorovDistance) {
  const std::uint64_t N = 1000000;
  for (double x : {-1.0, 0.0, 1.0}) {
    EXPECT_LT(kolmogorov_distance(law_from_params(x, 1.0), N, 11), 4.0 / std::sqrt(double(N)));
  }
}

TEST(Sampler, UnitLawMeanAndZero) {
  const auto law = law_from_params(0.0, 1.0);
  Stream rng(3, Domain::test, 2);
  const int N = 1000000;
  double sum = 0.0, sumsq = 0.0, zeros = 0.0;
  for (int i = 0; i < N; ++i) {
    const double v = double(sample_offspring(law, rng));
    sum += v;
    sumsq += v * v;
    zeros += v == 0.0;
  }
  const double mean = sum / N;
  const double sd = std::sqrt(sumsq / N - mean * mean);
  EXPECT_NEAR(mean, 1.0, 3.0 * sd / std::sqrt(double(N)));
  EXPECT_NEAR(zeros / N, 0.5, 3.0 * std::sqrt(0.25 / N));
}

TEST(Sampler, VeryNegativeMeanIsAlmostAlwaysZero) {
  const auto law = law_from_params(-30.0, 1.0);
  Stream rng(5, Domain::test, 3);
  int nonzero = 0;
  for (int i = 0; i < 100000; ++i) nonzero += sample_offspring(law, rng) != 0;
  EXPECT_EQ(nonzero, 0);
}

TEST(Sampler, OffspringSumMoments) {
  // sum of m iid draws: mean m e^x, variance m Var(xi)
  const auto law = law_from_params(0.4, 0.8);
  const double mu = std::exp(0.4);
  // f''(1) = 2 eta mu^2, Var = f'' + mu - mu^2
  const double var = 2.0 * 0.8 * mu * mu + mu - mu * mu;
  for (std::uint64_t m : {3ull, 16ull, 17ull, 1000ull}) {
    Stream rng(9, Domain::test, m);
    const int N = 200000;
    double sum = 0.0;
    for (int i = 0; i < N; ++i) sum += double(sample_offspring_sum(law, m, rng));
    const double se = std::sqrt(double(m) * var / N);
    EXPECT_NEAR(sum / N, double(m) * mu, 4.0 * se) << "m=" << m;
  }
  Stream rng(1, Domain::test, 0);
  EXPECT_EQ(sample_offspring_sum(law, 0, rng), 0u);
}

TEST(Zeta, ClosedFormSecondMoment) {
  // sum_{y>=1} y^2 P(y) = 2 eta e^{2x} + e^x
  for (double x : {-1.0, 0.0, 1.0}) {
    const auto law = law_from_params(x, 1.0);
    EXPECT_NEAR(zeta_moment(law, 1), 2.0 + std::exp(-x), 1e-10);
    EXPECT_LT(zeta_moment(law, 5), zeta_moment(law, 1));
  }
}

TEST(Model, Presets) {
  const auto m = make_model("uniform-unit");
  EXPECT_EQ(m.increment.kind, IncrementKind::uniform);
  EXPECT_DOUBLE_EQ(m.increment.variance(), 1.0 / 3.0);
  EXPECT_NEAR(m.f0_min(), 0.2689414213699951, 1e-15);
  EXPECT_NEAR(m.f0_max(), 0.7310585786300049, 1e-15);
  EXPECT_TRUE(model_diagnostics(m).empty());
  EXPECT_TRUE(model_diagnostics(make_model("truncated-gaussian")).empty());
  EXPECT_THROW(make_model("nope"), ModelError);
  EXPECT_THROW(make_model("uniform-unit", {{"sigma", 1.0}}), ModelError);
  EXPECT_FALSE(model_diagnostics(make_model("uniform-unit", {{"chi", 0.6}})).empty());
  EXPECT_FALSE(model_diagnostics(make_model("uniform-unit", {{"eta", 0.1}})).empty());
}

TEST(Model, TruncatedGaussianMoments) {
  const auto m = make_model("truncated-gaussian", {{"sigma", 0.8}, {"cut", 1.0}});
  Stream rng(4, Domain::test, 0);
  const int N = 400000;
  double sum = 0.0, sumsq = 0.0, below = 0.0;
  for (int i = 0; i < N; ++i) {
    const double v = m.increment.sample(rng);
    ASSERT_LE(std::fabs(v), 1.0);
    sum += v;
    sumsq += v * v;
    below += v < 0.3;
  }
  EXPECT_NEAR(sum / N, 0.0, 4.0 * std::sqrt(m.increment.variance() / N));
  EXPECT_NEAR(sumsq / N, m.increment.variance(), 0.005);
  EXPECT_NEAR(below / N, m.increment.cdf_below(0.3), 0.003);
}

TEST(Environment, Regenerable) {
  const auto m = make_model("uniform-unit");
  const auto a = sample_environment(m, 50, 123, 7);
  const auto b = sample_environment(m, 50, 123, 7);
  const auto c = sample_environment(m, 50, 123, 8);
  ASSERT_EQ(a.size(), 50u);
  bool differs = false;
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(a.laws[i].x(), b.laws[i].x());
    differs |= a.laws[i].x() != c.laws[i].x();
  }
  EXPECT_TRUE(differs);
  EXPECT_EQ(a.provenance.seed, 123u);
  EXPECT_EQ(a.provenance.stream, 7u);
  EXPECT_EQ(sample_environment(m, 0, 1, 1).size(), 0u);
}

TEST(Assumptions, UniformUnitPasses) {
  const auto r = check_assumptions(make_model("uniform-unit"), 100000, 42);
  EXPECT_TRUE(r.all_passed());
  EXPECT_NEAR(r.var_x, 1.0 / 3.0, 3.0 * r.var_x_se);
  EXPECT_DOUBLE_EQ(r.var_x_exact, 1.0 / 3.0);
}

TEST(Assumptions, PointMassIsFlagged) {
  const auto r = check_assumptions(make_model("point-mass"), 1000, 1);
  EXPECT_FALSE(r.all_passed());
  for (const auto& c : r.checks) {
    if (c.name == "A2.non_lattice" || c.name == "A2.positive_variance") EXPECT_FALSE(c.passed);
  }
}

TEST(Assumptions, SmallEtaViolatesA1) {
  const auto m = make_model("point-mass", {{"eta", 0.1}});
  try {
    check_assumptions(m, 10, 1);
    FAIL() << "expected AssumptionViolation";
  } catch (const AssumptionViolation& e) {
    EXPECT_NE(std::string(e.what()).find("eta=0.1"), std::string::npos) << e.what();
  }
}
