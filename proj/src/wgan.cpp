#include "lrgan/wgan.hpp"

#include <cmath>

#include "lrgan/errors.hpp"

namespace lrgan {
namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kGeneratorInitTag = 1;
constexpr std::uint64_t kCriticInitTag = 2;
constexpr std::uint64_t kTrainStreamTag = 3;

}  // namespace

void WganConfig::validate() const {
  if (critic_steps < 1) throw ConfigError("wgan: critic_steps must be >= 1");
  if (!(gp_weight >= 0.0)) throw ConfigError("wgan: gp_weight must be >= 0");
  if (batch_size < 2) throw ConfigError("wgan: batch_size must be >= 2");
  if (generator_steps < 0) throw ConfigError("wgan: generator_steps must be >= 0");
  if (!(divergence_limit > 0.0)) throw ConfigError("wgan: divergence_limit must be > 0");
  if (log_every < 1) throw ConfigError("wgan: log_every must be >= 1");
  if (generator_width < 1 || critic_width < 1) throw ConfigError("wgan: widths must be >= 1");
  critic_adam.validate();
  generator_adam.validate();
}

Trainable Trainable::create(MlpSpec spec, std::uint64_t seed, const AdamConfig& adam) {
  Mlp net{std::move(spec), {}};
  net.params = mlp_init(net.spec, seed);
  return wrap(std::move(net), adam);
}

Trainable Trainable::wrap(Mlp net, const AdamConfig& adam) {
  check_params(net.spec, net.params);
  AdamState state = adam_init(net.params, adam);
  return {std::move(net), std::move(state)};
}

Tensor interpolate(const Tensor& real, const Tensor& fake, const Tensor& u) {
  if (!real.same_shape(fake) || u.rows() != real.rows() || u.cols() != 1) {
    throw ConfigError("interpolate: batch mismatch");
  }
  Matrix out = fake.matrix();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    out.row(i) = u(i, 0) * real.matrix().row(i) + (1.0 - u(i, 0)) * fake.matrix().row(i);
  }
  return Tensor(std::move(out));
}

Tensor interpolation_weights(Eigen::Index rows, Rng& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Tensor u(rows, 1);
  for (double& v : u.flat()) v = uniform(rng);
  return u;
}

CriticObjective::CriticObjective(const MlpSpec& critic) {
  auto& g = graph_;
  const auto real = g.input("real");
  const auto fake = g.input("fake");
  const auto mixed = g.input("mixed");
  const auto weights = g.input("weights");
  const auto gp_weight = g.input("gp_weight");

  const auto d_real = build_mlp(g, critic, "critic", real);
  const auto d_fake = build_mlp(g, critic, "critic", fake);
  const auto d_mixed = build_mlp(g, critic, "critic", mixed);

  // Rows are independent, so the gradient of the summed output is the
  // per-row input gradient.
  const ad::NodeId mixed_ids[] = {mixed};
  const auto grad_x = g.gradients(g.sum(d_mixed.output), mixed_ids).front();
  const auto penalty = g.mean(g.square(g.affine(g.row_norm(grad_x), 1.0, -1.0)));

  const auto wasserstein =
      g.sub(g.mean(d_real.output), g.mean(g.mul(weights, d_fake.output)));
  const auto loss = g.add(g.neg(wasserstein), g.mul(gp_weight, penalty));
  auto grads = g.gradients(loss, d_real.params);

  std::vector<ad::NodeId> outputs = {wasserstein, penalty};
  outputs.insert(outputs.end(), grads.begin(), grads.end());
  plan_ = g.plan(outputs);
}

CriticObjective::Value CriticObjective::evaluate(const MlpParams& critic, const Tensor& real,
                                                 const Tensor& fake, const Tensor& weights,
                                                 const Tensor& u, double gp_weight) {
  if (!real.same_shape(fake)) throw ConfigError("critic objective: real/fake batch mismatch");
  if (weights.rows() != real.rows() || weights.cols() != 1) {
    throw ConfigError("critic objective: weights must be a b x 1 column");
  }
  ad::Bindings b;
  bind_mlp(b, "critic", critic);
  b.emplace("real", real);
  b.emplace("fake", fake);
  b.emplace("mixed", interpolate(real, fake, u));
  b.emplace("weights", weights);
  b.emplace("gp_weight", Tensor::scalar(gp_weight));
  graph_.run(plan_, b, workspace_);
  const auto& outs = plan_.outputs();
  Value v;
  v.wasserstein = workspace_.value(outs[0]).item();
  v.penalty = workspace_.value(outs[1]).item();
  for (std::size_t i = 2; i < outs.size(); ++i) v.loss_grads.push_back(&workspace_.value(outs[i]));
  return v;
}

double gradient_penalty(const Mlp& critic, const Tensor& real, const Tensor& fake, Rng& rng) {
  if (!real.same_shape(fake)) throw ConfigError("gradient_penalty: batch mismatch");
  ad::Graph g;
  const auto mixed = g.input("mixed");
  const auto d = build_mlp(g, critic.spec, "critic", mixed);
  const ad::NodeId wrt[] = {mixed};
  const auto grad_x = g.gradients(g.sum(d.output), wrt).front();
  const auto penalty = g.mean(g.square(g.affine(g.row_norm(grad_x), 1.0, -1.0)));
  ad::Bindings b;
  bind_mlp(b, "critic", critic.params);
  b.emplace("mixed", interpolate(real, fake, interpolation_weights(real.rows(), rng)));
  return g.eval(penalty, b).item();
}

WganTrainer::WganTrainer(const MlpSpec& generator, const MlpSpec& critic) : critic_(critic) {
  auto& g = gen_graph_;
  const auto z = g.input("z");
  const auto gen = build_mlp(g, generator, "generator", z);
  const auto d = build_mlp(g, critic, "critic", gen.output);
  const auto score = g.mean(d.output);
  auto grads = g.gradients(g.neg(score), gen.params);
  std::vector<ad::NodeId> outputs = {score};
  outputs.insert(outputs.end(), grads.begin(), grads.end());
  gen_plan_ = g.plan(outputs);
}

StepStats WganTrainer::critic_step(Trainable& critic, const Mlp& generator, const Tensor& real,
                                   const Tensor& z, const WganConfig& config, Rng& rng) {
  if (real.rows() != z.rows()) throw ConfigError("critic_step: real and latent batch differ");
  const Tensor fake = generator_forward(generator, z);
  const Tensor u = interpolation_weights(real.rows(), rng);
  const Tensor ones = Tensor::filled(real.rows(), 1, 1.0);
  auto v = critic_.evaluate(critic.net.params, real, fake, ones, u, config.gp_weight);
  adam_step(critic.net.params, v.loss_grads, critic.adam);
  return {v.wasserstein, v.penalty};
}

double WganTrainer::generator_step(Trainable& generator, const Mlp& critic,
                                   const Tensor& z) {
  ad::Bindings b;
  bind_mlp(b, "generator", generator.net.params);
  bind_mlp(b, "critic", critic.params);
  b.emplace("z", z);
  gen_graph_.run(gen_plan_, b, gen_workspace_);
  const auto& outs = gen_plan_.outputs();
  std::vector<const Tensor*> grads;
  for (std::size_t i = 1; i < outs.size(); ++i) grads.push_back(&gen_workspace_.value(outs[i]));
  adam_step(generator.net.params, grads, generator.adam);
  return gen_workspace_.value(outs[0]).item();
}

Tensor sample_batch(const Dataset2D& data, std::size_t batch, Rng& rng) {
  if (data.size() == 0) throw ConfigError("sample_batch: empty dataset");
  std::uniform_int_distribution<Eigen::Index> pick(0, data.points.rows() - 1);
  Tensor out(static_cast<Eigen::Index>(batch), data.points.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.matrix().row(i) = data.points.matrix().row(pick(rng));
  return out;
}

PretrainResult pretrain(const Dataset2D& data, const LatentPrior& prior, const WganConfig& config,
                        std::optional<Mlp> generator_init, std::optional<Mlp> critic_init) {
  config.validate();
  prior.validate();
  Trainable gen = generator_init
                      ? Trainable::wrap(std::move(*generator_init), config.generator_adam)
                      : Trainable::create(default_generator_spec(prior.dim, config.generator_width),
                                          derive_seed(config.seed, kGeneratorInitTag),
                                          config.generator_adam);
  Trainable critic = critic_init ? Trainable::wrap(std::move(*critic_init), config.critic_adam)
                                 : Trainable::create(default_critic_spec(config.critic_width),
                                                     derive_seed(config.seed, kCriticInitTag),
                                                     config.critic_adam);
  if (gen.net.spec.input_dim() != prior.dim || gen.net.spec.output_dim() != 2) {
    throw ConfigError("pretrain: generator must map the latent dimension to 2");
  }
  if (critic.net.spec.input_dim() != 2 || critic.net.spec.output_dim() != 1) {
    throw ConfigError("pretrain: critic must map 2 -> 1");
  }

  WganTrainer trainer(gen.net.spec, critic.net.spec);
  Rng rng(derive_seed(config.seed, kTrainStreamTag));
  const auto b = static_cast<std::size_t>(config.batch_size);

  PretrainResult result;
  for (int step = 0; step < config.generator_steps; ++step) {
    StepStats stats;
    for (int i = 0; i < config.critic_steps; ++i) {
      const Tensor real = sample_batch(data, b, rng);
      const Tensor z = prior_sample(prior, b, rng);
      stats = trainer.critic_step(critic, gen.net, real, z, config, rng);
      const double loss = -stats.objective + config.gp_weight * stats.penalty;
      if (!std::isfinite(loss) || std::abs(loss) > config.divergence_limit) {
        throw NumericError("pretrain: critic loss diverged at generator step " +
                           std::to_string(step));
      }
    }
    trainer.generator_step(gen, critic.net, prior_sample(prior, b, rng));
    if (step % config.log_every == 0 || step + 1 == config.generator_steps) {
      result.log.push_back({step, stats.objective, stats.penalty});
    }
  }
  result.generator = std::move(gen.net);
  result.critic = std::move(critic.net);
  return result;
}

}  // namespace lrgan
