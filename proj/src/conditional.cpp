#include "bpre/conditional.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace bpre {

namespace {

constexpr std::uint64_t kPurposeRejection = 10;
constexpr std::uint64_t kPurposeLaplace = 11;

// log(1 - s r) = log((1 - s) + s (1 - r)) given log(1 - r)
double log1m_scaled(double s, double log1m_r) {
  if (s == 0.0) return 0.0;
  return log_add_exp(std::log1p(-s), std::log(s) + log1m_r);
}

// log r given log(1 - r); the first-order branch takes over when 1 - r < 1e-12
double log_from_log1m(double log1m_r) {
  constexpr double kAsymptotic = -27.631021115928547;  // log(1e-12)
  if (log1m_r < kAsymptotic) return -std::exp(log1m_r);
  return log1m_exp(log1m_r);
}

std::uint64_t geometric0(double log_r, Stream& rng) {
  if (log_r == kNegInf) return 0;
  const double j = std::floor(std::log(rng.uniform()) / log_r);
  if (!(j < 9.2e18)) throw std::overflow_error("conditional draw exceeds 64-bit range");
  return static_cast<std::uint64_t>(j);
}

}  // namespace

std::size_t floor_index(std::size_t n, double t) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * t + 1e-9));
}

ConditionalMarginal make_conditional_marginal(const Composition& prefix,
                                              const SuffixTable& suffix) {
  const std::size_t m = prefix.last;
  const std::size_t n = suffix.horizon();
  if (prefix.first != 0 || m > n) throw std::invalid_argument("marginal needs prefix (0,m), m <= n");
  ConditionalMarginal c;
  c.m = m;
  c.n = n;
  const double l1a = suffix.log1m_alpha(m);
  const double l1b = suffix.log1m_beta(m);
  c.log_alpha = log1m_exp(l1a);
  c.log_beta = log1m_exp(l1b);
  c.log_gap = suffix.log_alpha_minus_beta(m);
  if (c.log_gap == kNegInf || !std::isfinite(c.log_alpha)) {
    std::ostringstream msg;
    msg << "P(T = n+1 | env) vanishes for m=" << m << ", n=" << n << " (alpha == beta)";
    throw std::domain_error(msg.str());
  }
  c.log_q = prefix.log_q();
  const double log_a = -prefix.neg_log_a;
  const double log_ab = prefix.log_a_plus_b();
  c.log1m_qalpha = log_add_exp(log_a, prefix.log_b + l1a) - log_ab;
  c.log1m_qbeta = log_add_exp(log_a, prefix.log_b + l1b) - log_ab;
  c.log_norm = c.log_gap - c.log1m_qalpha - c.log1m_qbeta;
  c.log_joint = log_eval_difference(prefix, c.log_gap, l1a, l1b);
  c.alpha = std::exp(c.log_alpha);
  c.beta = std::exp(c.log_beta);
  c.q = std::exp(c.log_q);
  c.norm = std::exp(c.log_norm);
  if (!std::isfinite(c.log_norm) || c.norm == 0.0) {
    std::ostringstream msg;
    msg << "normaliser underflow for environment slice m=" << m << ", n=" << n
        << " (log norm " << c.log_norm << ")";
    throw std::domain_error(msg.str());
  }
  return c;
}

double ConditionalMarginal::log_pmf(std::uint64_t k) const {
  if (k == 0) return kNegInf;
  if (k == 1) return log_gap - log_norm;
  if (log_q == kNegInf) return kNegInf;
  const double kd = static_cast<double>(k);
  // alpha^k - beta^k = alpha^k (1 - (beta/alpha)^k); beta/alpha = 1 - gap/alpha is
  // accurate when beta is close to alpha, the direct difference otherwise
  const double rel_gap = log_gap - log_alpha;
  const double log_ratio = rel_gap < -1e-3 ? std::log1p(-std::exp(rel_gap)) : log_beta - log_alpha;
  return (kd - 1.0) * log_q + kd * log_alpha + log1m_exp(kd * log_ratio) - log_norm;
}

double ConditionalMarginal::mean() const {
  const double t1 = log_q == kNegInf ? 0.0 : std::exp(log_q + log_alpha - log1m_qalpha);
  const double t2 =
      (log_q == kNegInf || log_beta == kNegInf) ? 0.0 : std::exp(log_q + log_beta - log1m_qbeta);
  return 1.0 + t1 + t2;
}

std::uint64_t sample_Zm_given_T(const ConditionalMarginal& c, Stream& rng) {
  if (!(c.norm > 0.0)) throw std::domain_error("conditional marginal with zero normaliser");
  const double log_r1 = c.log_q == kNegInf ? kNegInf : log_from_log1m(c.log1m_qalpha);
  const double log_r2 =
      (c.log_q == kNegInf || c.log_beta == kNegInf) ? kNegInf : log_from_log1m(c.log1m_qbeta);
  const std::uint64_t g1 = geometric0(log_r1, rng);
  const std::uint64_t g2 = geometric0(log_r2, rng);
  return 1 + g1 + g2;
}

double log_delta_n(const Composition& prefix, const FracLinLaw& next, double s) {
  if (!(s >= 0.0 && s <= 1.0)) throw std::domain_error("delta_n needs s in [0,1]");
  if (s == 0.0) return kNegInf;
  const double log_denom = std::log(next.denom());
  const double log_f0 = next.log_denom_minus_one() - log_denom;
  const double log1m_sf0 = log1m_scaled(s, -log_denom);
  const double log_a = -prefix.neg_log_a;
  return log_a + std::log(s) + log_f0 - prefix.log_a_plus_b() -
         log_add_exp(log_a, prefix.log_b + log1m_sf0);
}

double log_delta_n_coefficient(const Composition& prefix, const FracLinLaw& next,
                               std::uint64_t k) {
  if (k == 0) return kNegInf;
  const double log_f0 = next.log_denom_minus_one() - std::log(next.denom());
  const double base = -prefix.neg_log_a + log_f0 - 2.0 * prefix.log_a_plus_b();
  if (k == 1) return base;
  return base + static_cast<double>(k - 1) * (prefix.log_q() + log_f0);
}

double delta_n(const Composition& prefix, const FracLinLaw& next, double s) {
  return std::exp(log_delta_n(prefix, next, s));
}

double log_conditional_marginal_transform(const SuffixTable& suffix, const Composition& prefix,
                                          double s) {
  if (!(s >= 0.0 && s <= 1.0)) throw std::domain_error("transform needs s in [0,1]");
  const std::size_t m = prefix.last;
  if (prefix.first != 0 || m > suffix.horizon()) {
    throw std::invalid_argument("transform needs prefix (0,m), m <= n");
  }
  if (s == 0.0) return kNegInf;
  const double log_dr = std::log(s) + suffix.log_alpha_minus_beta(m);
  return log_eval_difference(prefix, log_dr, log1m_scaled(s, suffix.log1m_alpha(m)),
                             log1m_scaled(s, suffix.log1m_beta(m)));
}

double conditional_marginal_transform(const SuffixTable& suffix, const Composition& prefix,
                                      double s) {
  return std::exp(log_conditional_marginal_transform(suffix, prefix, s));
}

PathSample rejection_joint_path(const EnvironmentModel& model, std::size_t n,
                                std::uint64_t seed, std::uint64_t trial, std::uint64_t cap,
                                std::uint64_t slot) {
  if (n < 1) throw std::invalid_argument("rejection sampling needs n >= 1");
  if (cap == 0) throw std::invalid_argument("population cap must be positive");
  const std::uint64_t index = stream_index(kPurposeRejection, slot, trial);
  Stream env_rng(seed, Domain::environment, index);
  Stream repro_rng(seed, Domain::reproduction, index);
  PathSample p;
  p.env_seed = env_rng.address();
  p.trial = trial;
  p.z.push_back(1);
  p.s.push_back(0.0);
  for (std::size_t k = 1; k <= n + 1; ++k) {
    const FracLinLaw law = model.sample_law(env_rng);
    const std::uint64_t next = sample_offspring_sum(law, p.z.back(), repro_rng);
    p.z.push_back(next);
    p.s.push_back(p.s.back() + law.x());
    if (next == 0) {
      p.extinction_time = k;
      break;
    }
    if (next > cap) {
      p.capped = true;
      break;
    }
  }
  p.accepted = p.extinction_time == n + 1;
  return p;
}

namespace {

struct LaplaceAcc {
  RatioMoments r;
  void merge(const LaplaceAcc& o) { r.merge(o.r); }
};

}  // namespace

EstimateReport laplace_Yt_given_T(const EnvironmentModel& model, std::size_t n, double t,
                                  double lambda, std::uint64_t replicates,
                                  const RunOptions& opt) {
  if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("t must lie in (0,1)");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  const std::size_t m = floor_index(n, t);
  auto block = [&](std::uint64_t begin, std::uint64_t end) {
    LaplaceAcc acc;
    std::vector<FracLinLaw> laws;
    for (std::uint64_t i = begin; i < end; ++i) {
      Stream rng(opt.seed, Domain::environment, stream_index(kPurposeLaplace, 0, i));
      laws.clear();
      for (std::size_t k = 0; k <= n; ++k) laws.push_back(model.sample_law(rng));
      const SuffixTable suffix(laws, n);
      const Composition prefix = compose(laws, 0, m);
      const double s = std::exp(-lambda * std::exp(-prefix.neg_log_a));
      const double den = conditional_marginal_transform(suffix, prefix, 1.0);
      const double num = s == 1.0 ? den : conditional_marginal_transform(suffix, prefix, s);
      acc.r.add(num, den);
    }
    return acc;
  };
  const LaplaceAcc acc = reduce_blocks<LaplaceAcc>(replicates, opt, block);
  EstimateReport rep;
  rep.replicates = replicates;
  rep.seed = opt.seed;
  rep.metadata["n"] = n;
  rep.metadata["t"] = t;
  rep.metadata["m"] = m;
  rep.metadata["lambda"] = lambda;
  rep.metadata["p_extinct_next"] = acc.r.mean_y();
  Moments den;
  den.count = acc.r.count;
  den.sum = acc.r.sy;
  den.sumsq = acc.r.syy;
  rep.metadata["p_extinct_next_stderr"] = den.std_error();
  if (acc.r.sy == 0.0) {
    rep.value = std::numeric_limits<double>::quiet_NaN();
    rep.std_error = std::numeric_limits<double>::quiet_NaN();
    rep.metadata["flag"] = "denominator_collapse";
    return rep;
  }
  rep.value = acc.r.ratio();
  rep.std_error = acc.r.ratio_std_error();
  return rep;
}

}  // namespace bpre
