#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

namespace bpre {

/// Running sum / sum-of-squares accumulator; merge() is exact bookkeeping so
/// block results can be combined in a fixed order.
struct Moments {
  double count = 0.0;
  double sum = 0.0;
  double sumsq = 0.0;

  void add(double v) {
    count += 1.0;
    sum += v;
    sumsq += v * v;
  }
  void merge(const Moments& o) {
    count += o.count;
    sum += o.sum;
    sumsq += o.sumsq;
  }
  double mean() const { return count > 0.0 ? sum / count : 0.0; }
  double variance() const {
    if (count < 2.0) return 0.0;
    const double m = mean();
    return std::max(0.0, (sumsq - count * m * m) / (count - 1.0));
  }
  double std_error() const { return count > 0.0 ? std::sqrt(variance() / count) : 0.0; }
};

/// Paired accumulator for ratio-of-means estimators E[X]/E[Y].
struct RatioMoments {
  double count = 0.0;
  double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;

  void add(double x, double y) {
    count += 1.0;
    sx += x;
    sy += y;
    sxx += x * x;
    syy += y * y;
    sxy += x * y;
  }
  void merge(const RatioMoments& o) {
    count += o.count;
    sx += o.sx;
    sy += o.sy;
    sxx += o.sxx;
    syy += o.syy;
    sxy += o.sxy;
  }
  double ratio() const { return sy != 0.0 ? sx / sy : std::nan(""); }
  double mean_x() const { return count > 0.0 ? sx / count : 0.0; }
  double mean_y() const { return count > 0.0 ? sy / count : 0.0; }
  /// Delta-method standard error of sx/sy.
  double ratio_std_error() const {
    if (count < 2.0 || sy == 0.0) return std::nan("");
    const double r = ratio();
    const double mx = mean_x(), my = mean_y();
    const double vxx = (sxx - count * mx * mx) / (count - 1.0);
    const double vyy = (syy - count * my * my) / (count - 1.0);
    const double vxy = (sxy - count * mx * my) / (count - 1.0);
    const double v = std::max(0.0, vxx - 2.0 * r * vxy + r * r * vyy);
    return std::sqrt(v / count) / std::fabs(my);
  }
};

/// The common result record of every estimator.
struct EstimateReport {
  double value = 0.0;
  double std_error = 0.0;
  std::uint64_t replicates = 0;
  std::uint64_t seed = 0;
  nlohmann::json metadata = nlohmann::json::object();
};

void to_json(nlohmann::json& j, const EstimateReport& r);

struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double intercept_se = 0.0;
  double slope_se = 0.0;
  double covariance = 0.0;
  /// weighted residual sum of squares
  double chi2 = 0.0;
};

/// Weighted least squares of y on x with weights 1/variance.
LineFit weighted_line_fit(std::span<const double> x, std::span<const double> y,
                          std::span<const double> variance);

/// Upper tail of the chi-square distribution.
double chi_square_sf(double statistic, double dof);

/// Sample median; throws on an empty sample.
double median(std::vector<double> values);

}  // namespace bpre
