#include "lrgan/reweight.hpp"

#include <algorithm>
#include <cmath>

#include "lrgan/errors.hpp"

namespace lrgan {
namespace {

constexpr std::uint64_t kCriticInitTag = 11;
constexpr std::uint64_t kImportanceInitTag = 12;
constexpr std::uint64_t kTrainStreamTag = 13;

void check_divergence(double loss, double limit, const char* what, int cycle) {
  if (!std::isfinite(loss) || std::abs(loss) > limit) {
    throw NumericError(std::string("reweight: ") + what + " loss diverged at cycle " +
                       std::to_string(cycle));
  }
}

}  // namespace

void ReweightConfig::validate() const {
  if (!(lambda_norm >= 0.0) || !(lambda_clip >= 0.0)) {
    throw ConfigError("reweight: lambda weights must be >= 0");
  }
  if (!(cap > 1.0)) throw ConfigError("reweight: cap m must be > 1");
  if (critic_steps < 1 || importance_steps < 1) {
    throw ConfigError("reweight: need critic_steps >= 1 and importance_steps >= 1");
  }
  if (batch_size < 2) throw ConfigError("reweight: batch_size must be >= 2");
  if (!(gp_weight >= 0.0)) throw ConfigError("reweight: gp_weight must be >= 0");
  if (cycles < 0 || warmstart_critic_steps < 0) {
    throw ConfigError("reweight: cycles and warm-start steps must be >= 0");
  }
  if (importance_width < 1 || critic_width < 1) throw ConfigError("reweight: widths must be >= 1");
  if (!(divergence_limit > 0.0)) throw ConfigError("reweight: divergence_limit must be > 0");
  if (log_every < 1) throw ConfigError("reweight: log_every must be >= 1");
  critic_adam.validate();
  importance_adam.validate();
}

Mlp importance_init(int latent_dim, int width, std::uint64_t seed) {
  Mlp net{default_importance_spec(latent_dim, width), {}};
  net.params = mlp_init(net.spec, seed);
  net.params.layers.back().bias.matrix().setOnes();
  return net;
}

double importance_objective(std::span<const double> w, std::span<const double> d,
                            double lambda_norm, double lambda_clip, double cap) {
  if (w.size() != d.size() || w.empty()) {
    throw ConfigError("importance_objective: w and d must be non-empty and equal length");
  }
  const double delta = *std::min_element(d.begin(), d.end());
  const double n = static_cast<double>(w.size());
  double reward = 0.0, mean_w = 0.0, clip = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    reward += w[i] * (d[i] - delta);
    mean_w += w[i];
    const double excess = std::max(0.0, w[i] - cap);
    clip += excess * excess;
  }
  reward /= n;
  mean_w /= n;
  clip /= n;
  return reward - lambda_norm * (mean_w - 1.0) * (mean_w - 1.0) - lambda_clip * clip;
}

double effective_sample_size(std::span<const double> weights) {
  if (weights.empty()) throw ConfigError("effective_sample_size: empty weights");
  double s = 0.0, s2 = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ConfigError("effective_sample_size: weights must be >= 0");
    s += w;
    s2 += w * w;
  }
  if (s2 == 0.0) throw NumericError("effective_sample_size: all weights are zero");
  return s * s / (static_cast<double>(weights.size()) * s2);
}

double ReweightedPrior::weight(std::span<const double> z) const {
  if (static_cast<int>(z.size()) != base.dim) throw ConfigError("weight: latent dimension mismatch");
  Matrix row(1, base.dim);
  std::copy(z.begin(), z.end(), row.data());
  return mlp_forward(importance, row)(0, 0);
}

std::vector<double> ReweightedPrior::sample_weights(std::size_t n, Rng& rng) const {
  const Tensor w = importance_forward(importance, prior_sample(base, n, rng));
  return {w.flat().begin(), w.flat().end()};
}

double mean_weight(const ReweightedPrior& prior, std::size_t draws, Rng& rng) {
  if (draws == 0) throw ConfigError("mean_weight: need at least one draw");
  const auto w = prior.sample_weights(draws, rng);
  double s = 0.0;
  for (double v : w) s += v;
  return s / static_cast<double>(draws);
}

ImportanceObjective::ImportanceObjective(const MlpSpec& importance, double lambda_norm,
                                         double lambda_clip, double cap) {
  auto& g = graph_;
  const auto z = g.input("z");
  const auto d = g.input("d");
  const auto net = build_mlp(g, importance, "importance", z);
  const auto w = net.output;

  const auto centered = g.sub(d, g.fill(g.min(d), d));
  const auto reward = g.mean(g.mul(w, centered));
  const auto norm = g.square(g.affine(g.mean(w), 1.0, -1.0));
  const auto clip = g.mean(g.square(g.relu(g.affine(w, 1.0, -cap))));
  const auto objective =
      g.sub(g.sub(reward, g.affine(norm, lambda_norm, 0.0)), g.affine(clip, lambda_clip, 0.0));
  auto grads = g.gradients(g.neg(objective), net.params);

  std::vector<ad::NodeId> outputs = {objective, w};
  outputs.insert(outputs.end(), grads.begin(), grads.end());
  plan_ = g.plan(outputs);
}

ImportanceObjective::Value ImportanceObjective::evaluate(const MlpParams& importance,
                                                         const Tensor& z,
                                                         const Tensor& critic_scores) {
  if (critic_scores.rows() != z.rows() || critic_scores.cols() != 1) {
    throw ConfigError("importance objective: critic scores must be a b x 1 column");
  }
  ad::Bindings b;
  bind_mlp(b, "importance", importance);
  b.emplace("z", z);
  b.emplace("d", critic_scores);
  graph_.run(plan_, b, workspace_);
  const auto& outs = plan_.outputs();
  Value v;
  v.objective = workspace_.value(outs[0]).item();
  const auto w = workspace_.value(outs[1]).flat();
  v.weights.assign(w.begin(), w.end());
  for (std::size_t i = 2; i < outs.size(); ++i) v.loss_grads.push_back(&workspace_.value(outs[i]));
  return v;
}

ReweightTrainer::ReweightTrainer(const MlpSpec& critic, const MlpSpec& importance,
                                 const ReweightConfig& config)
    : config_(config),
      critic_(critic),
      importance_(importance, config.lambda_norm, config.lambda_clip, config.cap) {
  config_.validate();
}

ReweightStats ReweightTrainer::critic_step_weighted(Trainable& critic, const Mlp& generator,
                                                    const Mlp& importance, const Tensor& real,
                                                    const Tensor& z, Rng& rng) {
  if (real.rows() != z.rows()) throw ConfigError("critic_step_weighted: batch sizes differ");
  const Tensor fake = generator_forward(generator, z);
  Tensor w = importance_forward(importance, z);
  // Self-normalized weights: with a raw batch mean away from 1 the critic
  // could raise its objective by shifting its output by a constant.
  const double mean_w = w.matrix().mean();
  if (!(mean_w > 0.0)) throw NumericError("critic_step_weighted: all importance weights are zero");
  w.matrix() /= mean_w;
  const Tensor u = interpolation_weights(real.rows(), rng);
  auto v = critic_.evaluate(critic.net.params, real, fake, w, u, config_.gp_weight);
  adam_step(critic.net.params, v.loss_grads, critic.adam);
  return {v.wasserstein, v.penalty};
}

ImportanceObjective::Value ReweightTrainer::importance_step(Trainable& importance,
                                                            const Mlp& critic,
                                                            const Mlp& generator,
                                                            const Tensor& z) {
  const Tensor d = critic_forward(critic, generator_forward(generator, z));
  auto v = importance_.evaluate(importance.net.params, z, d);
  adam_step(importance.net.params, v.loss_grads, importance.adam);
  return v;
}

ReweightResult train_importance(const Mlp& generator, std::optional<Mlp> critic_init,
                                const Dataset2D& data, const LatentPrior& prior,
                                const ReweightConfig& config,
                                std::optional<Mlp> importance_init) {
  config.validate();
  prior.validate();
  check_params(generator.spec, generator.params);
  if (generator.spec.input_dim() != prior.dim || generator.spec.output_dim() != 2) {
    throw ConfigError("train_importance: generator must map the latent dimension to 2");
  }
  const bool warm_start = !critic_init.has_value();
  Trainable critic =
      critic_init ? Trainable::wrap(std::move(*critic_init), config.critic_adam)
                  : Trainable::create(default_critic_spec(config.critic_width),
                                      derive_seed(config.seed, kCriticInitTag), config.critic_adam);
  Trainable importance =
      importance_init
          ? Trainable::wrap(std::move(*importance_init), config.importance_adam)
          : Trainable::wrap(lrgan::importance_init(prior.dim, config.importance_width,
                                            derive_seed(config.seed, kImportanceInitTag)),
                            config.importance_adam);
  if (critic.net.spec.input_dim() != 2 || critic.net.spec.output_dim() != 1) {
    throw ConfigError("train_importance: critic must map 2 -> 1");
  }
  if (importance.net.spec.input_dim() != prior.dim || importance.net.spec.output_dim() != 1) {
    throw ConfigError("train_importance: importance network must map the latent dimension to 1");
  }

  ReweightTrainer trainer(critic.net.spec, importance.net.spec, config);
  Rng rng(derive_seed(config.seed, kTrainStreamTag));
  const auto b = static_cast<std::size_t>(config.batch_size);

  if (warm_start) {
    // Plain critic against the unweighted generator: w is not trained yet,
    // so the weights are fixed to one here.
    WganConfig plain;
    plain.gp_weight = config.gp_weight;
    WganTrainer wgan(generator.spec, critic.net.spec);
    for (int i = 0; i < config.warmstart_critic_steps; ++i) {
      const Tensor real = sample_batch(data, b, rng);
      const Tensor z = prior_sample(prior, b, rng);
      const auto s = wgan.critic_step(critic, generator, real, z, plain, rng);
      check_divergence(-s.objective + config.gp_weight * s.penalty, config.divergence_limit,
                       "warm-start critic", 0);
    }
  }

  ReweightResult result;
  for (int cycle = 0; cycle < config.cycles; ++cycle) {
    ReweightStats stats;
    for (int i = 0; i < config.critic_steps; ++i) {
      const Tensor real = sample_batch(data, b, rng);
      const Tensor z = prior_sample(prior, b, rng);
      stats = trainer.critic_step_weighted(critic, generator, importance.net, real, z, rng);
      check_divergence(-stats.objective + config.gp_weight * stats.penalty,
                       config.divergence_limit, "critic", cycle);
    }
    ImportanceObjective::Value v;
    for (int i = 0; i < config.importance_steps; ++i) {
      v = trainer.importance_step(importance, critic.net, generator, prior_sample(prior, b, rng));
      check_divergence(v.objective, config.divergence_limit, "importance", cycle);
    }
    if (cycle % config.log_every == 0 || cycle + 1 == config.cycles) {
      ReweightLogEntry entry;
      entry.cycle = cycle;
      entry.weighted_emd = stats.objective;
      double s = 0.0;
      std::size_t clipped = 0;
      for (double w : v.weights) {
        s += w;
        if (w > config.cap) ++clipped;
      }
      const double n = static_cast<double>(v.weights.size());
      entry.mean_weight = s / n;
      entry.ess = s > 0.0 ? effective_sample_size(v.weights) : 0.0;
      entry.clip_rate = static_cast<double>(clipped) / n;
      result.log.push_back(entry);
    }
  }
  if (!importance.net.params.all_finite() || !critic.net.params.all_finite()) {
    throw NumericError("train_importance: non-finite parameters after training");
  }
  result.importance = std::move(importance.net);
  result.critic = std::move(critic.net);
  return result;
}

}  // namespace lrgan
