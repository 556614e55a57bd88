#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lrgan/tensor.hpp"

namespace lrgan {

/// n points in the plane plus the recipe that produced them.
struct Dataset2D {
  Tensor points;  // n x 2
  std::string name;
  std::uint64_t seed = 0;

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
};

/// t ~ U[1.5 pi, 4.5 pi], point = (t cos t, t sin t) / 15 + N(0, noise_std^2 I).
Dataset2D sample_swiss_roll(std::size_t n, std::uint64_t seed, double noise_std = 0.0);

/// Swiss roll point for a fixed angle, without noise.
std::array<double, 2> swiss_roll_point(double t);

/// Uniform mixture over a rows x cols grid of modes centred on the origin,
/// neighbouring modes `spacing` apart, each an isotropic Gaussian with `std`.
Dataset2D sample_gaussian_grid(std::size_t n, int rows, int cols, double spacing, double std,
                               std::uint64_t seed);

/// Mode centres of the grid, row-major.
std::vector<std::array<double, 2>> grid_modes(int rows, int cols, double spacing);

inline constexpr double kFourGaussiansStd = 0.05;

struct FourGaussians {
  Dataset2D real;
  /// Real mode centres shifted by `offset` along (1, 1) / sqrt(2).
  std::vector<std::array<double, 2>> proposal_modes;
};

/// Four equally weighted Gaussians at (+-0.5, +-0.5).
std::vector<std::array<double, 2>> four_gaussian_modes();

FourGaussians sample_four_gaussians(std::size_t n, std::uint64_t seed, double offset,
                                    double std = kFourGaussiansStd);

/// Equal-weight Gaussian mixture over arbitrary centres.
Dataset2D sample_mixture(std::size_t n, const std::vector<std::array<double, 2>>& modes,
                         double std, std::uint64_t seed, std::string name);

}  // namespace lrgan
