#include "lrgan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lrgan/errors.hpp"

namespace lrgan {
namespace {

void require_planar(const Tensor& t, const char* what) {
  if (t.cols() < 1) throw ConfigError(std::string(what) + ": points need at least one column");
}

struct Moments {
  double mean[2] = {0.0, 0.0};
  double cov[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
};

Moments moments(const Tensor& x) {
  Moments m;
  const auto n = static_cast<double>(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    m.mean[0] += x(i, 0) / n;
    m.mean[1] += x(i, 1) / n;
  }
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double a = x(i, 0) - m.mean[0];
    const double b = x(i, 1) - m.mean[1];
    m.cov[0][0] += a * a;
    m.cov[0][1] += a * b;
    m.cov[1][1] += b * b;
  }
  for (auto* v : {&m.cov[0][0], &m.cov[0][1], &m.cov[1][1]}) *v /= (n - 1.0);
  m.cov[1][0] = m.cov[0][1];
  m.cov[0][0] += 1e-9;
  m.cov[1][1] += 1e-9;
  return m;
}

}  // namespace

std::vector<int> optimal_assignment(const Tensor& x, const Tensor& y) {
  require_planar(x, "emd");
  if (x.rows() != y.rows() || x.cols() != y.cols()) {
    throw ConfigError("emd: point sets must have equal size and dimension");
  }
  const int n = static_cast<int>(x.rows());
  if (n == 0) return {};

  Matrix cost(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) cost(i, j) = (x.matrix().row(i) - y.matrix().row(j)).norm();
  }

  // Shortest augmenting path Hungarian method with potentials, O(n^3).
  // Index 0 is a sentinel column; rows and columns are 1-based below.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0);
  std::vector<double> v(n + 1, 0.0);
  std::vector<int> owner(n + 1, 0);  // owner[j]: row matched to column j
  std::vector<int> way(n + 1, 0);
  std::vector<double> min_slack(n + 1);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    owner[0] = i;
    int j0 = 0;
    std::fill(min_slack.begin(), min_slack.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = owner[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double slack = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (slack < min_slack[j]) {
          min_slack[j] = slack;
          way[j] = j0;
        }
        if (min_slack[j] < delta) {
          delta = min_slack[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          min_slack[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const int j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= n; ++j) assignment[owner[j] - 1] = j - 1;
  return assignment;
}

double emd(const Tensor& x, const Tensor& y) {
  const auto assignment = optimal_assignment(x, y);
  if (assignment.empty()) throw ConfigError("emd: empty point sets");
  double total = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    total += (x.matrix().row(static_cast<Eigen::Index>(i)) - y.matrix().row(assignment[i])).norm();
  }
  return total / static_cast<double>(assignment.size());
}

namespace {

// Distance from each row of `set` to its k-th nearest other row of `set`.
std::vector<double> knn_radii(const Tensor& set, int k) {
  const Eigen::Index n = set.rows();
  std::vector<double> radii(static_cast<std::size_t>(n));
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    dist.clear();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) dist.push_back((set.matrix().row(i) - set.matrix().row(j)).norm());
    }
    std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
    radii[static_cast<std::size_t>(i)] = dist[static_cast<std::size_t>(k - 1)];
  }
  return radii;
}

// Fraction of `probe` rows covered by a k-NN ball around some `anchor` row.
double coverage(const Tensor& probe, const Tensor& anchor, const std::vector<double>& radii) {
  std::size_t covered = 0;
  for (Eigen::Index i = 0; i < probe.rows(); ++i) {
    for (Eigen::Index j = 0; j < anchor.rows(); ++j) {
      if ((probe.matrix().row(i) - anchor.matrix().row(j)).norm() <=
          radii[static_cast<std::size_t>(j)]) {
        ++covered;
        break;
      }
    }
  }
  return static_cast<double>(covered) / static_cast<double>(probe.rows());
}

}  // namespace

PrecisionRecall precision_recall(const Tensor& real, const Tensor& fake, int k) {
  if (k < 1) throw ConfigError("precision_recall: k must be >= 1");
  if (real.rows() <= k || fake.rows() <= k) {
    throw ConfigError("precision_recall: each set needs more than k points");
  }
  if (real.cols() != fake.cols()) throw ConfigError("precision_recall: dimension mismatch");
  PrecisionRecall pr;
  pr.recall = coverage(real, fake, knn_radii(fake, k));
  pr.precision = coverage(fake, real, knn_radii(real, k));
  return pr;
}

double frechet_2d(const Tensor& x, const Tensor& y) {
  if (x.cols() != 2 || y.cols() != 2) throw ConfigError("frechet_2d: points must be 2-D");
  if (x.rows() < 3 || y.rows() < 3) throw ConfigError("frechet_2d: need >= 3 points per set");
  const Moments a = moments(x);
  const Moments b = moments(y);
  const double dm0 = a.mean[0] - b.mean[0];
  const double dm1 = a.mean[1] - b.mean[1];
  const double trace_a = a.cov[0][0] + a.cov[1][1];
  const double trace_b = b.cov[0][0] + b.cov[1][1];
  const double det_a = a.cov[0][0] * a.cov[1][1] - a.cov[0][1] * a.cov[1][0];
  const double det_b = b.cov[0][0] * b.cov[1][1] - b.cov[0][1] * b.cov[1][0];
  // tr(AB) for symmetric A, B.
  const double trace_ab = a.cov[0][0] * b.cov[0][0] + 2.0 * a.cov[0][1] * b.cov[0][1] +
                          a.cov[1][1] * b.cov[1][1];
  // The eigenvalues of AB are real and non-negative, so
  // tr sqrt(AB) = sqrt(tr(AB) + 2 sqrt(det A det B)).
  const double trace_sqrt =
      std::sqrt(std::max(0.0, trace_ab + 2.0 * std::sqrt(std::max(0.0, det_a * det_b))));
  return dm0 * dm0 + dm1 * dm1 + trace_a + trace_b - 2.0 * trace_sqrt;
}

Interval ci_report(std::span<const double> values) {
  if (values.size() < 2) throw ConfigError("ci_report: need at least two values");
  const auto n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double s = std::sqrt(ss / (n - 1.0));
  return {mean, kCi97Quantile * s / std::sqrt(n)};
}

MetricSummary summarize(std::string name, std::span<const double> values) {
  if (values.empty()) throw ConfigError("summarize: no values for " + name);
  MetricSummary m;
  m.name = std::move(name);
  m.repeats = static_cast<int>(values.size());
  if (values.size() == 1) {
    m.mean = values.front();
  } else {
    const auto ci = ci_report(values);
    m.mean = ci.mean;
    m.half_width = ci.half_width;
  }
  return m;
}

const MetricSummary* MetricsReport::find(std::string_view name) const {
  for (const auto& m : metrics) {
    if (m.name == name) return &m;
  }
  return nullptr;
}

}  // namespace lrgan
