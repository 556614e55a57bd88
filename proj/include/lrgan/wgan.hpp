#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "lrgan/models.hpp"
#include "lrgan/synthdata.hpp"

namespace lrgan {

struct WganConfig {
  int critic_steps = 5;  // n_d
  // 10 makes 2-D pretraining oscillate; 0.1 converges.
  double gp_weight = 0.1;
  int batch_size = 128;
  int generator_steps = 2000;
  AdamConfig critic_adam{3e-4, 0.5, 0.9, 1e-8};
  AdamConfig generator_adam{3e-4, 0.5, 0.9, 1e-8};
  std::uint64_t seed = 0;
  double divergence_limit = 1e3;
  int log_every = 100;
  int generator_width = 64;
  int critic_width = 64;

  void validate() const;
};

/// A network together with its optimizer state.
struct Trainable {
  Mlp net;
  AdamState adam;

  static Trainable create(MlpSpec spec, std::uint64_t seed, const AdamConfig& adam);
  static Trainable wrap(Mlp net, const AdamConfig& adam);
};

/// Interpolates row-wise: u_i * real_i + (1 - u_i) * fake_i.
Tensor interpolate(const Tensor& real, const Tensor& fake, const Tensor& u);

/// Uniform interpolation coefficients, one per row.
Tensor interpolation_weights(Eigen::Index rows, Rng& rng);

/// Mean over rows of (||grad_x critic(x_hat)|| - 1)^2 at random interpolates.
double gradient_penalty(const Mlp& critic, const Tensor& real, const Tensor& fake, Rng& rng);

/// Prebuilt graph for  E[D(x)] - E[w D(x_fake)] - gp * GP  and its critic gradient.
class CriticObjective {
 public:
  explicit CriticObjective(const MlpSpec& critic);

  struct Value {
    double wasserstein = 0.0;  // E[D(x)] - E[w D(x_fake)]
    double penalty = 0.0;      // unweighted GP
    /// Gradient of -(wasserstein) + gp * penalty; points into the workspace
    /// and stays valid until the next evaluate().
    std::vector<const Tensor*> loss_grads;
  };

  /// `weights` and `u` are column vectors (b x 1).
  Value evaluate(const MlpParams& critic, const Tensor& real, const Tensor& fake,
                 const Tensor& weights, const Tensor& u, double gp_weight);

 private:
  ad::Graph graph_;
  ad::Plan plan_;
  ad::Workspace workspace_;
};

struct StepStats {
  double objective = 0.0;
  double penalty = 0.0;
};

/// WGAN-GP alternating trainer. Holds the compiled graphs and their scratch
/// storage; networks are passed in. One trainer per thread.
class WganTrainer {
 public:
  WganTrainer(const MlpSpec& generator, const MlpSpec& critic);

  /// One Adam ascent step on E[D(x)] - E[D(G(z))] - gp * GP with G frozen.
  StepStats critic_step(Trainable& critic, const Mlp& generator, const Tensor& real,
                        const Tensor& z, const WganConfig& config, Rng& rng);

  /// One Adam descent step on -E[D(G(z))] with D frozen. Returns E[D(G(z))].
  double generator_step(Trainable& generator, const Mlp& critic, const Tensor& z);

  CriticObjective& critic_objective() { return critic_; }

 private:
  CriticObjective critic_;
  ad::Graph gen_graph_;
  ad::Plan gen_plan_;
  ad::Workspace gen_workspace_;
};

struct WganLogEntry {
  int step = 0;
  double critic_objective = 0.0;
  double gradient_penalty = 0.0;
};

struct PretrainResult {
  Mlp generator;
  Mlp critic;
  std::vector<WganLogEntry> log;
};

/// Uniformly resampled (with replacement) batch of dataset rows.
Tensor sample_batch(const Dataset2D& data, std::size_t batch, Rng& rng);

/// Alternates n_d critic steps and one generator step. Networks default to
/// fresh default architectures seeded from config.seed.
PretrainResult pretrain(const Dataset2D& data, const LatentPrior& prior, const WganConfig& config,
                        std::optional<Mlp> generator_init = std::nullopt,
                        std::optional<Mlp> critic_init = std::nullopt);

}  // namespace lrgan
