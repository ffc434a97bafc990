#pragma once

// Fractional-linear offspring laws and i.i.d. environment models.
//
// A law is fixed by two numbers: x = ln f'(1) and eta = f''(1) / (2 f'(1)^2).
// Its generating function satisfies 1/(1 - f(s)) = e^{-x}/(1 - s) + eta, so
//   f(0) = 1 - 1/(e^{-x} + eta),
//   P(xi = k) = (1 - q) q^{k-1} / (e^{-x} + eta),  k >= 1,  q = eta/(e^{-x} + eta).

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "bpre/rng.hpp"

namespace bpre {

class FracLinLaw {
 public:
  /// Throws std::invalid_argument unless eta > 0, both inputs are finite and
  /// the implied f(0) lies in (0,1).
  static FracLinLaw from_params(double x, double eta);

  double x() const { return x_; }
  double eta() const { return eta_; }
  double log_eta() const { return log_eta_; }
  /// e^{-x} + eta, the reciprocal of P(xi >= 1).
  double denom() const { return denom_; }
  double f0() const { return f0_; }
  /// Ratio of the geometric tail.
  double q() const { return q_; }
  /// log(denom - 1) = log(f0 * denom); denom - 1 is formed without cancellation.
  double log_denom_minus_one() const;

 private:
  FracLinLaw() = default;

  double x_ = 0.0;
  double eta_ = 1.0;
  double log_eta_ = 0.0;
  double denom_ = 2.0;
  double f0_ = 0.5;
  double q_ = 0.5;
};

FracLinLaw law_from_params(double x, double eta);

/// f(s) for s in [0,1]; throws std::domain_error outside.
double pgf_eval(const FracLinLaw& law, double s);

double pmf(const FracLinLaw& law, std::uint64_t k);

/// Smallest K with P(xi > K) < tail.
std::uint64_t pmf_truncation(const FracLinLaw& law, double tail = 1e-12);

std::uint64_t sample_offspring(const FracLinLaw& law, Stream& rng);

/// Total offspring of `parents` independent individuals. Exact in law:
/// Binomial(parents, 1/denom) reproducing individuals, each contributing
/// 1 + Geometric(1 - q) children.
std::uint64_t sample_offspring_sum(const FracLinLaw& law, std::uint64_t parents, Stream& rng);

/// zeta(a) = sum_{y >= a} y^2 P(xi = y) / (e^x)^2, summed until the remaining
/// tail is below `rel_tol` of the partial sum.
double zeta_moment(const FracLinLaw& law, std::uint64_t a, double rel_tol = 1e-13);

// ---------------------------------------------------------------------------
// Environment models

enum class IncrementKind { uniform, truncated_gaussian, point_mass };

/// Distribution of the log-mean x of one environment draw.
struct IncrementLaw {
  IncrementKind kind = IncrementKind::uniform;
  /// uniform: [lo, hi]; truncated_gaussian: N(0, scale^2) cut to [lo, hi]
  /// with lo = -hi; point_mass: value lo (== hi).
  double lo = -1.0;
  double hi = 1.0;
  double scale = 1.0;

  double sample(Stream& rng) const;
  double mean() const;
  double variance() const;
  /// P(X >= z)
  double survival(double z) const;
  /// P(X < z)
  double cdf_below(double z) const { return 1.0 - survival(z); }
  /// Density; zero for the point mass.
  double pdf(double z) const;
};

struct EnvironmentModel {
  std::string preset;
  IncrementLaw increment;
  /// eta is drawn uniformly on [eta_lo, eta_hi], independent of x.
  double eta_lo = 1.0;
  double eta_hi = 1.0;
  double chi = 0.25;
  /// Constants for the log-moment condition on zeta(a).
  std::uint64_t a3_a = 1;
  double a3_eps = 1.0;
  /// Declared analytically: continuous increment laws are non-lattice.
  bool non_lattice = true;

  FracLinLaw sample_law(Stream& rng) const;

  /// Range of f(0) over the support; f(0) is monotone in x and in eta.
  double f0_min() const;
  double f0_max() const;
};

/// Raised for unknown presets and out-of-range parameters.
class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Named presets: "uniform-unit" (x ~ U[-1,1], eta = 1, chi = 0.25),
/// "truncated-gaussian" (x ~ N(0,1) cut at +-1), "point-mass" (x = 0).
/// Overrides: half_width, sigma, cut, value, eta, eta_lo, eta_hi, chi, a3_a, a3_eps.
EnvironmentModel make_model(const std::string& preset,
                            const std::map<std::string, double>& overrides = {});

std::vector<std::string> model_presets();

/// Static problems with a model (A1 bounds, zero mean, positive variance);
/// empty when the model is admissible.
std::vector<std::string> model_diagnostics(const EnvironmentModel& model);

struct EnvRealization {
  std::vector<FracLinLaw> laws;
  StreamAddress provenance;

  std::size_t size() const { return laws.size(); }
};

/// Regenerable bit-exactly from (model, seed, index).
EnvRealization sample_environment(const EnvironmentModel& model, std::size_t length,
                                  std::uint64_t seed, std::uint64_t index);

// ---------------------------------------------------------------------------
// Assumption checks

/// Raised when a sampled law breaks chi <= f(0) <= 1 - chi or eta >= chi.
class AssumptionViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AssumptionCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct AssumptionReport {
  std::uint64_t samples = 0;
  double f0_observed_min = 0.0;
  double f0_observed_max = 0.0;
  double eta_observed_min = 0.0;
  double mean_x = 0.0;
  double mean_x_se = 0.0;
  double var_x = 0.0;
  double var_x_se = 0.0;
  double var_x_exact = 0.0;
  double a3_moment = 0.0;
  double a3_moment_se = 0.0;
  std::vector<AssumptionCheck> checks;

  bool all_passed() const;
};

/// Samples `samples` laws from stream (seed, offspring, 0). Throws
/// AssumptionViolation naming the first law outside the A1 bounds.
AssumptionReport check_assumptions(const EnvironmentModel& model, std::uint64_t samples,
                                   std::uint64_t seed);

}  // namespace bpre
