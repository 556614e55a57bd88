#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lrgan/autodiff.hpp"
#include "lrgan/tensor.hpp"

namespace lrgan {

using Rng = std::mt19937_64;

inline constexpr double kLeakySlope = 0.2;

enum class PriorKind { kGaussian, kUniform };

/// Latent law: isotropic standard Gaussian or uniform on [-1, 1]^dim.
struct LatentPrior {
  PriorKind kind = PriorKind::kGaussian;
  int dim = 2;

  void validate() const;
};

/// n i.i.d. latent draws as an n x dim tensor.
Tensor prior_sample(const LatentPrior& prior, std::size_t n, Rng& rng);

enum class Activation { kIdentity, kRelu, kLeakyRelu, kTanh };

struct MlpSpec {
  /// Input width, hidden widths, output width.
  std::vector<int> widths;
  Activation hidden = Activation::kRelu;
  Activation output = Activation::kIdentity;

  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }
  std::size_t layers() const { return widths.size() - 1; }
  void validate() const;
};

struct Layer {
  Tensor weight;  // fan_in x fan_out
  Tensor bias;    // 1 x fan_out
};

struct MlpParams {
  std::vector<Layer> layers;

  /// Parameter tensors in (w0, b0, w1, b1, ...) order.
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  bool all_finite() const;
  friend bool operator==(const MlpParams& a, const MlpParams& b);
};

struct Mlp {
  MlpSpec spec;
  MlpParams params;
};

/// Weights and biases drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
MlpParams mlp_init(const MlpSpec& spec, std::uint64_t seed);

/// Checks that parameter shapes agree with the spec.
void check_params(const MlpSpec& spec, const MlpParams& params);

/// Plain forward pass, no graph. Rows of x are independent samples.
Matrix mlp_forward(const Mlp& net, const Matrix& x);

Tensor generator_forward(const Mlp& generator, const Tensor& z);
Tensor critic_forward(const Mlp& critic, const Tensor& x);
Tensor importance_forward(const Mlp& importance, const Tensor& z);

/// Graph nodes for a network applied to some input node.
struct MlpNodes {
  ad::NodeId output;
  std::vector<ad::NodeId> params;  // (w0, b0, w1, b1, ...)
};

/// Appends the network to the graph with parameters as named inputs
/// `<prefix>.w<i>` / `<prefix>.b<i>`.
MlpNodes build_mlp(ad::Graph& graph, const MlpSpec& spec, const std::string& prefix,
                   ad::NodeId x);
void bind_mlp(ad::Bindings& bindings, const std::string& prefix, const MlpParams& params);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;

  void validate() const;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

AdamState adam_init(const MlpParams& params, const AdamConfig& config);

/// One bias-corrected Adam descent step. `grads` follows MlpParams::tensors() order.
void adam_step(MlpParams& params, std::span<const Tensor> grads, AdamState& state);
void adam_step(MlpParams& params, std::span<const Tensor* const> grads, AdamState& state);

}  // namespace lrgan

namespace lrgan {

/// Independent stream seed from a master seed and a stream tag (splitmix64).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag);

/// Default synthetic-experiment architectures.
MlpSpec default_generator_spec(int latent_dim, int width = 128);
MlpSpec default_critic_spec(int width = 128);
MlpSpec default_importance_spec(int latent_dim, int width = 64);

}  // namespace lrgan
