#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "bpre/genfun.hpp"
#include "oracles.hpp"

using namespace bpre;

namespace {

std::vector<FracLinLaw> laws_of(const std::vector<std::pair<double, double>>& params) {
  std::vector<FracLinLaw> out;
  for (auto [x, eta] : params) out.push_back(law_from_params(x, eta));
  return out;
}

std::vector<FracLinLaw> random_laws(std::size_t n, double half_width, std::uint64_t seed) {
  Stream rng(seed, Domain::test, 100);
  std::vector<FracLinLaw> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = half_width * (2.0 * rng.uniform() - 1.0);
    const double eta = 1.0 + rng.uniform();
    out.push_back(law_from_params(x, eta));
  }
  return out;
}

void expect_same(const Composition& a, const Composition& b, double tol) {
  EXPECT_NEAR(a.neg_log_a, b.neg_log_a, tol * std::max(1.0, std::fabs(a.neg_log_a)));
  if (a.log_b == kNegInf || b.log_b == kNegInf) EXPECT_EQ(a.log_b, b.log_b);
  else EXPECT_NEAR(a.log_b, b.log_b, tol * std::max(1.0, std::fabs(a.log_b)));
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.last, b.last);
}

}  // namespace

TEST(Composition, ExtendRightExamples) {
  const auto unit = law_from_params(0.0, 1.0);
  auto c = extend_right(Composition::identity(0), unit);
  EXPECT_NEAR(c.a(), 1.0, 1e-15);
  EXPECT_NEAR(c.b(), 1.0, 1e-15);
  EXPECT_NEAR(c.survival(), 0.5, 1e-15);
  c = extend_right(c, unit);
  EXPECT_NEAR(c.a(), 1.0, 1e-15);
  EXPECT_NEAR(c.b(), 2.0, 1e-15);
  EXPECT_NEAR(c.survival(), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(c.last, 2u);
}

TEST(Composition, Eval) {
  EXPECT_DOUBLE_EQ(eval(Composition::identity(0), 0.3), 0.3);
  const auto laws = laws_of({{0.0, 1.0}, {0.0, 1.0}});
  const auto c2 = compose(laws, 0, 2);
  EXPECT_NEAR(eval(c2, 0.5), 0.75, 1e-15);
  EXPECT_EQ(eval(c2, 1.0), 1.0);
  EXPECT_NEAR(std::exp(log1m_eval(c2, 0.5)), 0.25, 1e-15);
}

TEST(Composition, ExtendLeftMatchesRightOnOneLaw) {
  for (auto law : random_laws(20, 1.0, 1)) {
    expect_same(extend_left(Composition::identity(1), law), extend_right(Composition::identity(0), law),
                1e-15);
  }
}

TEST(Composition, EvalAgainstNestedPgf) {
  const auto laws = random_laws(6, 1.0, 2);
  const auto c = compose(laws, 0, laws.size());
  for (double s : {0.0, 0.1, 0.5, 0.9}) {
    double v = s;
    for (std::size_t i = laws.size(); i-- > 0;) v = oracle::pgf({laws[i].x(), laws[i].eta()}, v);
    EXPECT_NEAR(eval(c, s), v, 1e-14);
  }
}

TEST(Composition, EvalIsMonotone) {
  const auto laws = random_laws(30, 1.0, 3);
  const auto c = compose(laws, 0, laws.size());
  double prev = eval(c, 0.0);
  for (int i = 1; i <= 1000; ++i) {
    const double v = eval(c, i / 1000.0);
    EXPECT_GE(v, prev);
    prev = v;
  }
  EXPECT_EQ(prev, 1.0);
}

TEST(Composition, SpliceComposeExtendAgree) {
  // increments of size 8 push |S| to about 400 within 50 steps
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double width = seed % 2 == 0 ? 1.0 : 8.0;
    const auto laws = random_laws(50, width, 10 + seed);
    Composition right = Composition::identity(0);
    for (std::size_t n = 1; n <= laws.size(); ++n) {
      right = extend_right(right, laws[n - 1]);
      const auto direct = compose(laws, 0, n);
      expect_same(right, direct, 1e-12);
      Composition left = Composition::identity(n);
      for (std::size_t k = n; k-- > 0;) left = extend_left(left, laws[k]);
      expect_same(left, direct, 1e-12);
      for (std::size_t j : {std::size_t{0}, n / 3, n / 2, n}) {
        expect_same(splice(compose(laws, 0, j), compose(laws, j, n)), direct, 1e-12);
      }
    }
  }
}

TEST(Composition, ExtremeWalkStaysFinite) {
  std::vector<FracLinLaw> laws(60, law_from_params(8.0, 1.0));
  const auto c = compose(laws, 0, laws.size());
  EXPECT_NEAR(c.neg_log_a, 480.0, 1e-9);
  EXPECT_TRUE(std::isfinite(c.log_b));
  EXPECT_TRUE(std::isfinite(c.log_survival()));
  std::vector<FracLinLaw> down(60, law_from_params(-8.0, 1.0));
  const auto d = compose(down, 0, down.size());
  EXPECT_NEAR(d.neg_log_a, -480.0, 1e-9);
  EXPECT_LT(d.log_survival(), -400.0);
}

TEST(Composition, BruteForceGenerationLaw) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto laws = random_laws(5, 1.0, 40 + seed);
    std::vector<oracle::Params> params;
    for (std::size_t n = 1; n <= laws.size(); ++n) {
      params.push_back({laws[n - 1].x(), laws[n - 1].eta()});
      // smallest truncation >= 60 leaving less than 1e-12 above it in every generation
      std::size_t K = 60;
      for (std::size_t k = 1; k <= n; ++k) {
        const auto c = compose(laws, 0, k);
        const double tail = c.log_survival() + static_cast<double>(K) * c.log_q();
        if (tail > std::log(1e-12)) {
          K = static_cast<std::size_t>(std::ceil((std::log(1e-12) - c.log_survival()) / c.log_q()));
        }
      }
      const auto dist = oracle::generation_pmf(params, K);
      const auto c = compose(laws, 0, n);
      const double surv = c.survival(), q = std::exp(c.log_q());
      double tv = std::fabs(dist[0] - (1.0 - surv));
      double lib_mass = 1.0 - surv, ora_mass = dist[0];
      for (std::size_t k = 1; k <= K; ++k) {
        const double p = surv * (1.0 - q) * std::pow(q, double(k - 1));
        tv += std::fabs(dist[k] - p);
        lib_mass += p;
        ora_mass += dist[k];
      }
      tv += (1.0 - lib_mass) + std::fabs(1.0 - ora_mass);
      EXPECT_LT(0.5 * tv, 1e-10) << "seed " << seed << " n " << n << " K " << K;
    }
  }
}

TEST(Extinction, TwoUnitLaws) {
  const auto laws = laws_of({{0.0, 1.0}, {0.0, 1.0}});
  const auto e = extinction_pmf_given_env(laws);
  ASSERT_EQ(e.pmf.size(), 2u);
  EXPECT_NEAR(e.pmf[0], 0.5, 1e-15);
  EXPECT_NEAR(e.pmf[1], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(e.survival, 1.0 / 3.0, 1e-15);
}

TEST(Extinction, SumsToOne) {
  const auto laws = random_laws(500, 1.0, 7);
  const auto e = extinction_pmf_given_env(laws);
  double total = e.survival;
  for (double p : e.pmf) {
    EXPECT_GE(p, 0.0);
    total += p;
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_THROW(extinction_pmf_given_env({}), std::invalid_argument);
}

TEST(Extinction, IncrementAgainstDirectDifference) {
  const auto laws = random_laws(40, 1.0, 8);
  for (std::size_t n = 0; n + 1 < laws.size(); ++n) {
    const auto c = compose(laws, 0, n);
    const double direct = eval(compose(laws, 0, n + 1), 0.0) - eval(c, 0.0);
    const double lib = std::exp(log_extinction_increment(c, laws[n]));
    EXPECT_NEAR(lib, direct, 1e-14 + 1e-9 * direct);
  }
}

TEST(Extinction, ForwardSimulation) {
  const auto laws = random_laws(8, 1.0, 9);
  const auto e = extinction_pmf_given_env(laws);
  const int N = 400000;
  std::vector<double> counts(laws.size() + 1, 0.0);
  Stream rng(17, Domain::test, 4);
  for (int i = 0; i < N; ++i) {
    std::uint64_t z = 1;
    std::size_t t = 0;
    for (std::size_t g = 0; g < laws.size() && z > 0; ++g) {
      z = sample_offspring_sum(laws[g], z, rng);
      if (z == 0) t = g + 1;
    }
    counts[t] += 1.0;  // index 0 collects survivors
  }
  for (std::size_t k = 1; k <= laws.size(); ++k) {
    const double p = e.pmf[k - 1];
    EXPECT_NEAR(counts[k] / N, p, 4.0 * std::sqrt(p * (1 - p) / N)) << "k=" << k;
  }
  EXPECT_NEAR(counts[0] / N, e.survival, 4.0 * std::sqrt(e.survival * (1 - e.survival) / N));
}

TEST(Tables, PrefixAndSuffix) {
  const auto laws = random_laws(31, 1.0, 12);
  const std::size_t n = 30;
  PrefixTable prefix(laws, n);
  SuffixTable suffix(laws, n);
  EXPECT_EQ(prefix.horizon(), n);
  EXPECT_EQ(suffix.horizon(), n);
  for (std::size_t m = 0; m <= n; ++m) {
    expect_same(prefix.at(m), compose(laws, 0, m), 1e-12);
    expect_same(suffix.at(m), compose(laws, m, n), 1e-12);
    EXPECT_NEAR(suffix.log1m_alpha(m), compose(laws, m, n + 1).log_survival(), 1e-12);
    const double alpha = eval(compose(laws, m, n + 1), 0.0);
    const double beta = eval(compose(laws, m, n), 0.0);
    EXPECT_NEAR(std::exp(suffix.log_alpha_minus_beta(m)), alpha - beta, 1e-13);
    EXPECT_LT(beta, alpha);
  }
  EXPECT_EQ(suffix.log1m_beta(n), 0.0);
  EXPECT_THROW(SuffixTable(laws, 31), std::out_of_range);
}
