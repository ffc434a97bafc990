#include "bpre/offspring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace bpre {

FracLinLaw FracLinLaw::from_params(double x, double eta) {
  if (!std::isfinite(x) || !std::isfinite(eta)) {
    throw std::invalid_argument("fractional-linear law needs finite x and eta");
  }
  if (!(eta > 0.0)) {
    std::ostringstream msg;
    msg << "fractional-linear law needs eta > 0, got " << eta;
    throw std::invalid_argument(msg.str());
  }
  FracLinLaw law;
  law.x_ = x;
  law.eta_ = eta;
  law.log_eta_ = std::log(eta);
  const double inv_mean = std::exp(-x);
  law.denom_ = inv_mean + eta;
  if (!(law.denom_ > 1.0) || !std::isfinite(law.denom_)) {
    std::ostringstream msg;
    msg << "fractional-linear law (x=" << x << ", eta=" << eta
        << ") has f(0) outside (0,1)";
    throw std::invalid_argument(msg.str());
  }
  law.f0_ = 1.0 - 1.0 / law.denom_;
  law.q_ = eta / law.denom_;
  return law;
}

// denom - 1 = (e^{-x} - 1) + eta
double FracLinLaw::log_denom_minus_one() const { return std::log(std::expm1(-x_) + eta_); }

FracLinLaw law_from_params(double x, double eta) { return FracLinLaw::from_params(x, eta); }

double pgf_eval(const FracLinLaw& law, double s) {
  if (!(s >= 0.0 && s <= 1.0)) throw std::domain_error("pgf argument outside [0,1]");
  if (s == 1.0) return 1.0;
  const double t = 1.0 - s;
  return 1.0 - t / (std::exp(-law.x()) + law.eta() * t);
}

double pmf(const FracLinLaw& law, std::uint64_t k) {
  if (k == 0) return law.f0();
  const double log_p = std::log1p(-law.q()) + static_cast<double>(k - 1) * std::log(law.q()) -
                       std::log(law.denom());
  return std::exp(log_p);
}

std::uint64_t pmf_truncation(const FracLinLaw& law, double tail) {
  // P(xi > K) = q^K / denom
  const double k = (std::log(tail) + std::log(law.denom())) / std::log(law.q());
  if (!(k > 0.0)) return 0;
  const double kc = std::ceil(k);
  std::uint64_t K = static_cast<std::uint64_t>(kc);
  while (K > 0 && std::pow(law.q(), static_cast<double>(K - 1)) / law.denom() < tail) --K;
  while (std::pow(law.q(), static_cast<double>(K)) / law.denom() >= tail) ++K;
  return K;
}

namespace {

// j >= 0 with P(j) = (1 - r) r^j, r in [0,1), given log r.
std::uint64_t geometric_from_log_ratio(double log_r, Stream& rng) {
  if (log_r == -std::numeric_limits<double>::infinity()) return 0;
  const double j = std::floor(std::log(rng.uniform()) / log_r);
  if (!(j < 9.2e18)) throw std::overflow_error("geometric draw exceeds 64-bit range");
  return static_cast<std::uint64_t>(j);
}

}  // namespace

std::uint64_t sample_offspring(const FracLinLaw& law, Stream& rng) {
  if (rng.uniform() * law.denom() >= 1.0) return 0;
  return 1 + geometric_from_log_ratio(std::log(law.q()), rng);
}

std::uint64_t sample_offspring_sum(const FracLinLaw& law, std::uint64_t parents, Stream& rng) {
  if (parents == 0) return 0;
  if (parents <= 16) {
    std::uint64_t total = 0;
    const double log_q = std::log(law.q());
    for (std::uint64_t i = 0; i < parents; ++i) {
      if (rng.uniform() * law.denom() < 1.0) total += 1 + geometric_from_log_ratio(log_q, rng);
    }
    return total;
  }
  std::binomial_distribution<std::int64_t> breeders(static_cast<std::int64_t>(parents),
                                                    1.0 / law.denom());
  const std::int64_t n = breeders(rng);
  if (n == 0) return 0;
  std::negative_binomial_distribution<std::int64_t> extra(n, 1.0 - law.q());
  return static_cast<std::uint64_t>(n) + static_cast<std::uint64_t>(extra(rng));
}

double zeta_moment(const FracLinLaw& law, std::uint64_t a, double rel_tol) {
  const double scale = std::exp(-2.0 * law.x());
  double sum = 0.0;
  for (std::uint64_t y = std::max<std::uint64_t>(a, 1);; ++y) {
    const double yd = static_cast<double>(y);
    const double term = yd * yd * pmf(law, y) * scale;
    sum += term;
    const double ratio = ((yd + 1.0) / yd) * ((yd + 1.0) / yd) * law.q();
    if (ratio < 1.0) {
      const double tail = term * ratio / (1.0 - ratio);
      if (tail <= rel_tol * sum || sum == 0.0) break;
    }
  }
  return sum;
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double std_normal_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }

}  // namespace

double IncrementLaw::sample(Stream& rng) const {
  switch (kind) {
    case IncrementKind::uniform:
      return lo + (hi - lo) * rng.uniform();
    case IncrementKind::truncated_gaussian:
      for (;;) {
        // Box-Muller, one variate per pair keeps the stream layout simple
        const double r = std::sqrt(-2.0 * std::log(rng.uniform()));
        const double z = scale * r * std::cos(6.283185307179586 * rng.uniform());
        if (z >= lo && z <= hi) return z;
      }
    case IncrementKind::point_mass:
      return lo;
  }
  return 0.0;
}

double IncrementLaw::mean() const {
  switch (kind) {
    case IncrementKind::uniform:
      return 0.5 * (lo + hi);
    case IncrementKind::truncated_gaussian: {
      const double a = lo / scale, b = hi / scale;
      const double z = std_normal_cdf(b) - std_normal_cdf(a);
      return scale * kInvSqrt2Pi * (std::exp(-0.5 * a * a) - std::exp(-0.5 * b * b)) / z;
    }
    case IncrementKind::point_mass:
      return lo;
  }
  return 0.0;
}

double IncrementLaw::variance() const {
  switch (kind) {
    case IncrementKind::uniform:
      return (hi - lo) * (hi - lo) / 12.0;
    case IncrementKind::truncated_gaussian: {
      const double a = lo / scale, b = hi / scale;
      const double z = std_normal_cdf(b) - std_normal_cdf(a);
      const double pa = kInvSqrt2Pi * std::exp(-0.5 * a * a);
      const double pb = kInvSqrt2Pi * std::exp(-0.5 * b * b);
      const double m = (pa - pb) / z;
      return scale * scale * (1.0 + (a * pa - b * pb) / z - m * m);
    }
    case IncrementKind::point_mass:
      return 0.0;
  }
  return 0.0;
}

double IncrementLaw::survival(double z) const {
  switch (kind) {
    case IncrementKind::uniform:
      if (z <= lo) return 1.0;
      if (z >= hi) return 0.0;
      return (hi - z) / (hi - lo);
    case IncrementKind::truncated_gaussian: {
      if (z <= lo) return 1.0;
      if (z >= hi) return 0.0;
      const double cb = std_normal_cdf(hi / scale);
      return (cb - std_normal_cdf(z / scale)) / (cb - std_normal_cdf(lo / scale));
    }
    case IncrementKind::point_mass:
      return z <= lo ? 1.0 : 0.0;
  }
  return 0.0;
}

double IncrementLaw::pdf(double z) const {
  switch (kind) {
    case IncrementKind::uniform:
      return (z >= lo && z <= hi) ? 1.0 / (hi - lo) : 0.0;
    case IncrementKind::truncated_gaussian: {
      if (z < lo || z > hi) return 0.0;
      const double mass = std_normal_cdf(hi / scale) - std_normal_cdf(lo / scale);
      return kInvSqrt2Pi * std::exp(-0.5 * (z / scale) * (z / scale)) / (scale * mass);
    }
    case IncrementKind::point_mass:
      return 0.0;
  }
  return 0.0;
}

FracLinLaw EnvironmentModel::sample_law(Stream& rng) const {
  const double x = increment.sample(rng);
  const double eta = eta_lo == eta_hi ? eta_lo : eta_lo + (eta_hi - eta_lo) * rng.uniform();
  return FracLinLaw::from_params(x, eta);
}

double EnvironmentModel::f0_min() const { return 1.0 - 1.0 / (std::exp(-increment.hi) + eta_lo); }

double EnvironmentModel::f0_max() const { return 1.0 - 1.0 / (std::exp(-increment.lo) + eta_hi); }

std::vector<std::string> model_presets() {
  return {"uniform-unit", "truncated-gaussian", "point-mass"};
}

EnvironmentModel make_model(const std::string& preset,
                            const std::map<std::string, double>& overrides) {
  EnvironmentModel m;
  m.preset = preset;
  auto take = [&](const char* key, double fallback) {
    auto it = overrides.find(key);
    return it == overrides.end() ? fallback : it->second;
  };
  std::vector<std::string> allowed = {"eta", "eta_lo", "eta_hi", "chi", "a3_a", "a3_eps"};
  if (preset == "uniform-unit") {
    const double h = take("half_width", 1.0);
    if (!(h > 0.0)) throw ModelError("half_width must be positive");
    m.increment = {IncrementKind::uniform, -h, h, 1.0};
    allowed.push_back("half_width");
  } else if (preset == "truncated-gaussian") {
    const double sigma = take("sigma", 1.0);
    const double cut = take("cut", 1.0);
    if (!(sigma > 0.0) || !(cut > 0.0)) throw ModelError("sigma and cut must be positive");
    m.increment = {IncrementKind::truncated_gaussian, -cut, cut, sigma};
    allowed.insert(allowed.end(), {"sigma", "cut"});
  } else if (preset == "point-mass") {
    const double v = take("value", 0.0);
    m.increment = {IncrementKind::point_mass, v, v, 0.0};
    m.non_lattice = false;
    allowed.push_back("value");
  } else {
    throw ModelError("unknown model preset '" + preset + "'");
  }
  for (const auto& [key, value] : overrides) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ModelError("preset '" + preset + "' has no parameter '" + key + "'");
    }
    if (!std::isfinite(value)) throw ModelError("parameter '" + key + "' is not finite");
  }
  const double eta = take("eta", 1.0);
  m.eta_lo = take("eta_lo", eta);
  m.eta_hi = take("eta_hi", eta);
  m.chi = take("chi", 0.25);
  const double a = take("a3_a", 1.0);
  if (!(a >= 1.0) || a != std::floor(a)) throw ModelError("a3_a must be a positive integer");
  m.a3_a = static_cast<std::uint64_t>(a);
  m.a3_eps = take("a3_eps", 1.0);
  if (!(m.a3_eps > 0.0)) throw ModelError("a3_eps must be positive");
  return m;
}

std::vector<std::string> model_diagnostics(const EnvironmentModel& m) {
  std::vector<std::string> out;
  std::ostringstream msg;
  if (!(m.chi > 0.0 && m.chi < 0.5)) {
    msg << "chi=" << m.chi << " outside (0, 1/2)";
    out.push_back(msg.str());
    msg.str("");
  }
  if (!(m.eta_lo > 0.0) || !(m.eta_lo <= m.eta_hi)) {
    msg << "eta range [" << m.eta_lo << ", " << m.eta_hi << "] must satisfy 0 < eta_lo <= eta_hi";
    out.push_back(msg.str());
    return out;
  }
  if (m.eta_lo < m.chi) {
    msg << "eta_lo=" << m.eta_lo << " below chi=" << m.chi << " (A1 needs eta >= chi)";
    out.push_back(msg.str());
    msg.str("");
  }
  const double lo = m.f0_min(), hi = m.f0_max();
  if (!(lo >= m.chi) || !(hi <= 1.0 - m.chi)) {
    msg << "f(0) ranges over [" << lo << ", " << hi << "], outside [chi, 1-chi] = [" << m.chi
        << ", " << 1.0 - m.chi << "]";
    out.push_back(msg.str());
  }
  return out;
}

EnvRealization sample_environment(const EnvironmentModel& model, std::size_t length,
                                  std::uint64_t seed, std::uint64_t index) {
  Stream rng(seed, Domain::environment, index);
  EnvRealization env;
  env.provenance = rng.address();
  env.laws.reserve(length);
  for (std::size_t i = 0; i < length; ++i) env.laws.push_back(model.sample_law(rng));
  return env;
}

// ---------------------------------------------------------------------------

bool AssumptionReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

AssumptionReport check_assumptions(const EnvironmentModel& model, std::uint64_t samples,
                                   std::uint64_t seed) {
  if (samples == 0) throw std::invalid_argument("check_assumptions needs at least one sample");
  Stream rng(seed, Domain::offspring, 0);
  AssumptionReport r;
  r.samples = samples;
  r.f0_observed_min = 1.0;
  r.f0_observed_max = 0.0;
  r.eta_observed_min = std::numeric_limits<double>::infinity();

  // Welford for x; plain moments for the A3 functional.
  double mean = 0.0, m2 = 0.0, m3 = 0.0, m4 = 0.0;
  double a3_sum = 0.0, a3_sumsq = 0.0;
  for (std::uint64_t i = 0; i < samples; ++i) {
    FracLinLaw law = [&] {
      try {
        return model.sample_law(rng);
      } catch (const std::invalid_argument& e) {
        std::ostringstream msg;
        msg << "sample " << i << " is not a valid law: " << e.what();
        throw AssumptionViolation(msg.str());
      }
    }();
    if (law.f0() < model.chi || law.f0() > 1.0 - model.chi || law.eta() < model.chi) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "A1 violated by sample " << i << ": law(x=" << law.x() << ", eta=" << law.eta()
          << ") has f(0)=" << law.f0() << ", chi=" << model.chi;
      throw AssumptionViolation(msg.str());
    }
    r.f0_observed_min = std::min(r.f0_observed_min, law.f0());
    r.f0_observed_max = std::max(r.f0_observed_max, law.f0());
    r.eta_observed_min = std::min(r.eta_observed_min, law.eta());

    const double n = static_cast<double>(i + 1);
    const double delta = law.x() - mean;
    const double dn = delta / n;
    const double t1 = delta * dn * (n - 1.0);
    m4 += t1 * dn * dn * (n * n - 3.0 * n + 3.0) + 6.0 * dn * dn * m2 - 4.0 * dn * m3;
    m3 += t1 * dn * (n - 2.0) - 3.0 * dn * m2;
    m2 += t1;
    mean += dn;

    const double z = zeta_moment(law, model.a3_a);
    const double lp = std::log(std::max(z, 1.0));
    const double g = std::pow(lp, 2.0 + model.a3_eps);
    a3_sum += g;
    a3_sumsq += g * g;
  }
  const double n = static_cast<double>(samples);
  r.mean_x = mean;
  r.var_x = samples > 1 ? m2 / (n - 1.0) : 0.0;
  r.mean_x_se = std::sqrt(r.var_x / n);
  // se of the sample variance: sqrt((mu4 - sigma^4 (n-3)/(n-1)) / n)
  const double mu4 = m4 / n;
  r.var_x_se = samples > 3
                   ? std::sqrt(std::max(0.0, mu4 - r.var_x * r.var_x * (n - 3.0) / (n - 1.0)) / n)
                   : 0.0;
  r.var_x_exact = model.increment.variance();
  r.a3_moment = a3_sum / n;
  r.a3_moment_se = std::sqrt(std::max(0.0, a3_sumsq / n - r.a3_moment * r.a3_moment) / n);

  std::ostringstream d;
  d << "f(0) in [" << r.f0_observed_min << ", " << r.f0_observed_max << "], min eta "
    << r.eta_observed_min << ", chi " << model.chi;
  r.checks.push_back({"A1", true, d.str()});

  const bool mean_ok = std::fabs(model.increment.mean()) < 1e-12 &&
                       std::fabs(r.mean_x) <= 3.0 * r.mean_x_se + 1e-12;
  d.str("");
  d << "E[x] = " << r.mean_x << " +- " << r.mean_x_se << " (declared " << model.increment.mean()
    << ")";
  r.checks.push_back({"A2.zero_mean", mean_ok, d.str()});

  const bool var_ok = r.var_x_exact > 0.0 && r.var_x - 3.0 * r.var_x_se > 0.0;
  d.str("");
  d << "Var[x] = " << r.var_x << " +- " << r.var_x_se << " (exact " << r.var_x_exact << ")";
  r.checks.push_back({"A2.positive_variance", var_ok, d.str()});

  r.checks.push_back({"A2.non_lattice", model.non_lattice && r.var_x_exact > 0.0,
                      model.non_lattice ? "continuous increment law (declared)"
                                        : "degenerate increment law"});

  d.str("");
  d << "E[(log+ zeta(" << model.a3_a << "))^" << 2.0 + model.a3_eps << "] = " << r.a3_moment
    << " +- " << r.a3_moment_se;
  r.checks.push_back({"A3", std::isfinite(r.a3_moment), d.str()});
  return r;
}

}  // namespace bpre
