#include "bpre/stats.hpp"

#include <algorithm>
#include <stdexcept>

#include <boost/math/special_functions/gamma.hpp>

namespace bpre {

void to_json(nlohmann::json& j, const EstimateReport& r) {
  j = nlohmann::json{{"value", r.value},
                     {"stderr", r.std_error},
                     {"replicates", r.replicates},
                     {"seed", r.seed},
                     {"metadata", r.metadata}};
}

LineFit weighted_line_fit(std::span<const double> x, std::span<const double> y,
                          std::span<const double> variance) {
  if (x.size() != y.size() || x.size() != variance.size() || x.size() < 2) {
    throw std::invalid_argument("weighted_line_fit needs >= 2 matching points");
  }
  double sw = 0, swx = 0, swy = 0, swxx = 0, swxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(variance[i] > 0.0)) throw std::invalid_argument("weighted_line_fit needs variance > 0");
    const double w = 1.0 / variance[i];
    sw += w;
    swx += w * x[i];
    swy += w * y[i];
    swxx += w * x[i] * x[i];
    swxy += w * x[i] * y[i];
  }
  const double det = sw * swxx - swx * swx;
  LineFit f;
  f.slope = (sw * swxy - swx * swy) / det;
  f.intercept = (swxx * swy - swx * swxy) / det;
  f.slope_se = std::sqrt(sw / det);
  f.intercept_se = std::sqrt(swxx / det);
  f.covariance = -swx / det;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - f.intercept - f.slope * x[i];
    f.chi2 += r * r / variance[i];
  }
  return f;
}

double chi_square_sf(double statistic, double dof) {
  if (statistic <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * dof, 0.5 * statistic);
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of empty sample");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lower + upper);
}

}  // namespace bpre
