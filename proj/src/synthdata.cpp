#include "lrgan/synthdata.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "lrgan/errors.hpp"

namespace lrgan {

std::array<double, 2> swiss_roll_point(double t) {
  return {t * std::cos(t) / 15.0, t * std::sin(t) / 15.0};
}

Dataset2D sample_swiss_roll(std::size_t n, std::uint64_t seed, double noise_std) {
  if (n < 1) throw ConfigError("swiss roll: n must be >= 1");
  if (!(noise_std >= 0.0)) throw ConfigError("swiss roll: noise_std must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(1.5 * std::numbers::pi, 4.5 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset2D d{Tensor(static_cast<Eigen::Index>(n), 2), "swiss_roll", seed};
  for (Eigen::Index i = 0; i < d.points.rows(); ++i) {
    const auto p = swiss_roll_point(angle(rng));
    d.points(i, 0) = p[0] + noise_std * noise(rng);
    d.points(i, 1) = p[1] + noise_std * noise(rng);
  }
  return d;
}

std::vector<std::array<double, 2>> grid_modes(int rows, int cols, double spacing) {
  std::vector<std::array<double, 2>> modes;
  modes.reserve(static_cast<std::size_t>(rows * cols));
  const double x0 = -0.5 * (cols - 1) * spacing;
  const double y0 = -0.5 * (rows - 1) * spacing;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) modes.push_back({x0 + c * spacing, y0 + r * spacing});
  }
  return modes;
}

Dataset2D sample_mixture(std::size_t n, const std::vector<std::array<double, 2>>& modes,
                         double std, std::uint64_t seed, std::string name) {
  if (n < 1) throw ConfigError(name + ": n must be >= 1");
  if (modes.empty()) throw ConfigError(name + ": no modes");
  if (!(std >= 0.0)) throw ConfigError(name + ": std must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, modes.size() - 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset2D d{Tensor(static_cast<Eigen::Index>(n), 2), std::move(name), seed};
  for (Eigen::Index i = 0; i < d.points.rows(); ++i) {
    const auto& m = modes[pick(rng)];
    d.points(i, 0) = m[0] + std * noise(rng);
    d.points(i, 1) = m[1] + std * noise(rng);
  }
  return d;
}

Dataset2D sample_gaussian_grid(std::size_t n, int rows, int cols, double spacing, double std,
                               std::uint64_t seed) {
  if (rows < 1 || cols < 1) throw ConfigError("gaussian grid: rows and cols must be >= 1");
  return sample_mixture(n, grid_modes(rows, cols, spacing), std, seed, "gaussian_grid");
}

std::vector<std::array<double, 2>> four_gaussian_modes() {
  return {{-0.5, -0.5}, {0.5, -0.5}, {-0.5, 0.5}, {0.5, 0.5}};
}

FourGaussians sample_four_gaussians(std::size_t n, std::uint64_t seed, double offset,
                                    double std) {
  if (!(offset >= 0.0)) throw ConfigError("four gaussians: offset must be >= 0");
  FourGaussians out{sample_mixture(n, four_gaussian_modes(), std, seed, "four_gaussians"), {}};
  const double shift = offset / std::numbers::sqrt2;
  for (auto m : four_gaussian_modes()) out.proposal_modes.push_back({m[0] + shift, m[1] + shift});
  return out;
}

}  // namespace lrgan
