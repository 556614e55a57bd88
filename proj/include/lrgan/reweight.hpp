#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lrgan/models.hpp"
#include "lrgan/synthdata.hpp"
#include "lrgan/wgan.hpp"

namespace lrgan {

struct ReweightConfig {
  double lambda_norm = 10.0;  // self-normalization weight
  double lambda_clip = 3.0;   // soft-clipping weight
  double cap = 3.0;           // m, the weight cap
  int critic_steps = 5;       // n_d critic updates per cycle
  int importance_steps = 3;   // w updates per cycle
  int batch_size = 128;
  double gp_weight = 1.0;
  AdamConfig critic_adam{1e-4, 0.5, 0.9, 1e-8};
  AdamConfig importance_adam{1e-3, 0.5, 0.9, 1e-8};
  int cycles = 20000;
  std::uint64_t seed = 0;
  int importance_width = 64;
  int critic_width = 64;          // only used when no critic is supplied
  int warmstart_critic_steps = 500;
  double divergence_limit = 1e3;
  int log_every = 100;

  void validate() const;
};

/// Fresh importance network whose output bias is 1, so training starts near
/// the unweighted prior (w close to 1) instead of possibly at a dead relu.
Mlp importance_init(int latent_dim, int width, std::uint64_t seed);

/// Batch estimate of the importance-network objective (to be maximized):
///   mean[w (d - min d)] - lambda_norm (mean w - 1)^2 - lambda_clip mean[max(0, w - m)^2]
double importance_objective(std::span<const double> w, std::span<const double> d,
                            double lambda_norm, double lambda_clip, double cap);

/// (sum w)^2 / (n sum w^2), in (0, 1].
double effective_sample_size(std::span<const double> weights);

/// The latent law with density w relative to the base prior.
struct ReweightedPrior {
  LatentPrior base;
  Mlp importance;
  double cap = 3.0;

  double weight(std::span<const double> z) const;
  /// Weights of n fresh base-prior draws.
  std::vector<double> sample_weights(std::size_t n, Rng& rng) const;
};

/// Monte-Carlo estimate of E_prior[w].
double mean_weight(const ReweightedPrior& prior, std::size_t draws, Rng& rng);

/// Prebuilt graph for the importance objective and its gradient w.r.t. w's parameters.
class ImportanceObjective {
 public:
  ImportanceObjective(const MlpSpec& importance, double lambda_norm, double lambda_clip,
                      double cap);

  struct Value {
    double objective = 0.0;
    std::vector<double> weights;        // w(z_i)
    std::vector<const Tensor*> loss_grads;  // gradient of -objective
  };

  /// `critic_scores` is the b x 1 column D(G(z_i)).
  Value evaluate(const MlpParams& importance, const Tensor& z, const Tensor& critic_scores);

 private:
  ad::Graph graph_;
  ad::Plan plan_;
  ad::Workspace workspace_;
};

struct ReweightStats {
  double objective = 0.0;
  double penalty = 0.0;
};

class ReweightTrainer {
 public:
  ReweightTrainer(const MlpSpec& critic, const MlpSpec& importance, const ReweightConfig& config);

  /// Adam ascent on E[D(x)] - E[w(z) D(G(z))] / E[w(z)] - gp * GP, with G and
  /// w frozen. Batch weights are divided by their mean.
  ReweightStats critic_step_weighted(Trainable& critic, const Mlp& generator,
                                     const Mlp& importance, const Tensor& real, const Tensor& z,
                                     Rng& rng);

  /// Adam step maximizing the importance objective, with D and G frozen.
  ImportanceObjective::Value importance_step(Trainable& importance, const Mlp& critic,
                                             const Mlp& generator, const Tensor& z);

 private:
  ReweightConfig config_;
  CriticObjective critic_;
  ImportanceObjective importance_;
};

struct ReweightLogEntry {
  int cycle = 0;
  double weighted_emd = 0.0;  // critic's weighted Wasserstein estimate
  double mean_weight = 0.0;
  double ess = 0.0;
  double clip_rate = 0.0;     // fraction of the batch with w > m
};

struct ReweightResult {
  Mlp importance;
  Mlp critic;
  std::vector<ReweightLogEntry> log;
};

/// Adversarial training of the importance network against a Wasserstein
/// critic with the generator frozen. Without a critic, a fresh one is first
/// trained for `warmstart_critic_steps` plain WGAN-GP steps.
ReweightResult train_importance(const Mlp& generator, std::optional<Mlp> critic_init,
                                const Dataset2D& data, const LatentPrior& prior,
                                const ReweightConfig& config,
                                std::optional<Mlp> importance_init = std::nullopt);

}  // namespace lrgan
