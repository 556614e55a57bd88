#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lrgan/tensor.hpp"

namespace lrgan {

/// Minimum-cost perfect matching between rows of two equal-size point sets.
/// Returns the assignment (row i of X goes to row result[i] of Y).
std::vector<int> optimal_assignment(const Tensor& x, const Tensor& y);

/// Mean Euclidean transport cost of the optimal one-to-one matching
/// (the matching sum divided by n).
double emd(const Tensor& x, const Tensor& y);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

/// k-NN ball coverage: a real point is recalled when it falls inside the
/// k-th-nearest-neighbour ball of some fake point, and symmetrically for
/// precision. Both sets must hold more than k points.
PrecisionRecall precision_recall(const Tensor& real, const Tensor& fake, int k = 3);

/// Fréchet distance between Gaussian fits of two 2-D point sets.
double frechet_2d(const Tensor& x, const Tensor& y);

/// Two-sided 97% normal quantile.
inline constexpr double kCi97Quantile = 2.17;

struct Interval {
  double mean = 0.0;
  double half_width = 0.0;
};

/// mean +- 2.17 s / sqrt(n), s the sample standard deviation. Needs >= 2 values.
Interval ci_report(std::span<const double> values);

struct MetricSummary {
  std::string name;
  double mean = 0.0;
  double half_width = 0.0;
  int repeats = 1;
};

/// Summarises repeated measurements; a single repeat reports half width 0.
MetricSummary summarize(std::string name, std::span<const double> values);

struct MetricsReport {
  std::vector<MetricSummary> metrics;
  std::optional<double> acceptance_rate;
  std::optional<double> ess;
  std::optional<MetricSummary> wall_time_us;

  const MetricSummary* find(std::string_view name) const;
};

}  // namespace lrgan
