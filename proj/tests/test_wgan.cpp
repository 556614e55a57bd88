#include <cmath>

#include "doctest.h"
#include "lrgan/errors.hpp"
#include "lrgan/metrics.hpp"
#include "lrgan/wgan.hpp"
#include "oracles.hpp"

using namespace lrgan;
using lrgan::testing::random_tensor;

namespace {

// D(x) = v (a . x + c) + e with one leaky-relu unit. For inputs where
// a . x + c > 0 the critic is affine, so every gradient is a hand formula.
Mlp affine_critic(double a1, double a2, double c, double v, double e) {
  const MlpSpec spec{{2, 1, 1}, Activation::kLeakyRelu, Activation::kIdentity};
  MlpParams p;
  p.layers.push_back({Tensor::from_rows({{a1}, {a2}}), Tensor::scalar(c)});
  p.layers.push_back({Tensor::scalar(v), Tensor::scalar(e)});
  return {spec, p};
}

// x = W relu(u . z + c) + b with a single hidden unit.
Mlp affine_generator(double u1, double u2, double c, double w1, double w2, double b1, double b2) {
  const MlpSpec spec{{2, 1, 2}, Activation::kRelu, Activation::kIdentity};
  MlpParams p;
  p.layers.push_back({Tensor::from_rows({{u1}, {u2}}), Tensor::scalar(c)});
  p.layers.push_back({Tensor::from_rows({{w1, w2}}), Tensor::from_rows({{b1, b2}})});
  return {spec, p};
}

double sign(double x) { return (x > 0.0) - (x < 0.0); }

Tensor shifted(const Tensor& t, double dx, double dy) {
  Tensor out = t;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    out(i, 0) += dx;
    out(i, 1) += dy;
  }
  return out;
}

WganConfig tiny_config() {
  WganConfig c;
  c.generator_steps = 5;
  c.critic_steps = 2;
  c.batch_size = 16;
  c.generator_width = 8;
  c.critic_width = 8;
  c.seed = 42;
  return c;
}

}  // namespace

TEST_CASE("linear critic without penalty: objective is the mean difference") {
  Rng rng(1);
  const Mlp critic = affine_critic(0.3, -0.2, 5.0, 0.7, 0.1);
  const Tensor real = shifted(random_tensor(8, 2, rng, 0.2), 2.0, 1.0);
  const Tensor fake = random_tensor(8, 2, rng, 0.2);
  auto d = [&](const Tensor& x, Eigen::Index i) {
    return 0.7 * (0.3 * x(i, 0) - 0.2 * x(i, 1) + 5.0) + 0.1;
  };
  double expected = 0.0;
  for (Eigen::Index i = 0; i < 8; ++i) expected += (d(real, i) - d(fake, i)) / 8.0;

  CriticObjective obj(critic.spec);
  const auto v = obj.evaluate(critic.params, real, fake, Tensor::filled(8, 1, 1.0),
                              interpolation_weights(8, rng), 0.0);
  CHECK(v.wasserstein == doctest::Approx(expected).epsilon(1e-12));

  SUBCASE("weights rescale the fake term") {
    Tensor w(8, 1);
    double weighted = 0.0;
    for (Eigen::Index i = 0; i < 8; ++i) {
      w(i, 0) = 0.25 * static_cast<double>(i);
      weighted += d(real, i) / 8.0 - w(i, 0) * d(fake, i) / 8.0;
    }
    const auto vw = obj.evaluate(critic.params, real, fake, w, interpolation_weights(8, rng), 0.0);
    CHECK(vw.wasserstein == doctest::Approx(weighted).epsilon(1e-12));
  }
}

TEST_CASE("gradient penalty vanishes for a unit-gradient critic") {
  Rng rng(2);
  // grad D = (0.6, 0.8) wherever 0.6 x + 0.8 y + 10 > 0.
  const Mlp critic = affine_critic(0.6, 0.8, 10.0, 1.0, 0.0);
  const Tensor real = random_tensor(32, 2, rng);
  const Tensor fake = random_tensor(32, 2, rng);
  CHECK(gradient_penalty(critic, real, fake, rng) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("critic_step: Adam step 1 moves each parameter against the hand gradient sign") {
  Rng rng(3);
  const double a1 = 0.3, a2 = -0.2, c = 5.0, v = 0.7;
  Trainable critic = Trainable::wrap(affine_critic(a1, a2, c, v, 0.0), {0.01, 0.5, 0.9, 1e-8});
  const Tensor real = shifted(random_tensor(16, 2, rng, 0.2), 2.0, 1.0);
  const Tensor z = random_tensor(16, 2, rng);
  // Constant generator at (-1, 0.5): every fake point is the bias.
  const Mlp gen = affine_generator(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.5);
  WganConfig cfg;
  cfg.gp_weight = 0.0;

  // Loss = -(mean D(real) - mean D(fake)).
  const double mx = real.matrix().col(0).mean(), my = real.matrix().col(1).mean();
  const double d_a1 = -v * (mx - (-1.0));
  const double d_a2 = -v * (my - 0.5);
  const double d_v = -((a1 * mx + a2 * my + c) - (a1 * -1.0 + a2 * 0.5 + c));

  WganTrainer trainer(gen.spec, critic.net.spec);
  trainer.critic_step(critic, gen, real, z, cfg, rng);
  const auto& p = critic.net.params.layers;
  CHECK(p[0].weight(0, 0) - a1 == doctest::Approx(-0.01 * sign(d_a1)).epsilon(1e-6));
  CHECK(p[0].weight(1, 0) - a2 == doctest::Approx(-0.01 * sign(d_a2)).epsilon(1e-6));
  CHECK(p[1].weight(0, 0) - v == doctest::Approx(-0.01 * sign(d_v)).epsilon(1e-6));
  // The output bias and the hidden bias cancel between the real and fake terms.
  CHECK(std::abs(p[0].bias(0, 0) - c) < 1e-9);
  CHECK(std::abs(p[1].bias(0, 0)) < 1e-9);
}

TEST_CASE("generator_step: output bias moves along the critic gradient") {
  Rng rng(4);
  const double a1 = 0.4, a2 = -0.9, v = 1.5;
  const Mlp critic = affine_critic(a1, a2, 20.0, v, 0.0);
  Trainable gen = Trainable::wrap(affine_generator(0.5, 0.5, 3.0, 0.2, -0.1, 0.0, 0.0),
                                  {0.01, 0.5, 0.9, 1e-8});
  const Tensor z = random_tensor(16, 2, rng, 0.5);
  WganTrainer trainer(gen.net.spec, critic.spec);
  const Mlp before = gen.net;
  const double score = trainer.generator_step(gen, critic, z);
  CHECK(score == doctest::Approx(critic_forward(critic, generator_forward(before, z)).matrix().mean()));
  // d(-mean D(G(z)))/d b = -v a, and the hidden unit stays positive.
  const auto& b = gen.net.params.layers[1].bias;
  CHECK(b(0, 0) == doctest::Approx(0.01 * sign(v * a1)).epsilon(1e-6));
  CHECK(b(0, 1) == doctest::Approx(0.01 * sign(v * a2)).epsilon(1e-6));
  const auto& w = gen.net.params.layers[1].weight;
  CHECK(w(0, 0) - 0.2 == doctest::Approx(0.01 * sign(v * a1)).epsilon(1e-6));
  CHECK(w(0, 1) + 0.1 == doctest::Approx(0.01 * sign(v * a2)).epsilon(1e-6));
}

TEST_CASE("zero learning rate leaves both networks unchanged") {
  Rng rng(5);
  const MlpSpec gspec = default_generator_spec(2, 8);
  const MlpSpec cspec = default_critic_spec(8);
  const AdamConfig frozen{0.0, 0.5, 0.9, 1e-8};
  Trainable gen = Trainable::create(gspec, 1, frozen);
  Trainable critic = Trainable::create(cspec, 2, frozen);
  const MlpParams g0 = gen.net.params, c0 = critic.net.params;
  WganTrainer trainer(gspec, cspec);
  WganConfig cfg;
  trainer.critic_step(critic, gen.net, random_tensor(8, 2, rng), random_tensor(8, 2, rng), cfg, rng);
  trainer.generator_step(gen, critic.net, random_tensor(8, 2, rng));
  CHECK(gen.net.params == g0);
  CHECK(critic.net.params == c0);
}

TEST_CASE("pretrain is reproducible per seed") {
  const Dataset2D data = sample_gaussian_grid(500, 5, 5, 0.5, 0.05, 1);
  const LatentPrior prior;
  const auto a = pretrain(data, prior, tiny_config());
  const auto b = pretrain(data, prior, tiny_config());
  CHECK(a.generator.params == b.generator.params);
  CHECK(a.critic.params == b.critic.params);
  WganConfig other = tiny_config();
  other.seed = 43;
  CHECK_FALSE(pretrain(data, prior, other).generator.params == a.generator.params);
}

TEST_CASE("pretrain with zero generator steps returns the initial networks") {
  const Dataset2D data = sample_swiss_roll(200, 1);
  WganConfig cfg = tiny_config();
  cfg.generator_steps = 0;
  const Mlp gen{default_generator_spec(2, 8), mlp_init(default_generator_spec(2, 8), 9)};
  const auto r = pretrain(data, LatentPrior{}, cfg, gen);
  CHECK(r.generator.params == gen.params);
  CHECK(r.log.empty());
}

TEST_CASE("pretrain logs every log_every steps and the last step") {
  const Dataset2D data = sample_swiss_roll(200, 1);
  WganConfig cfg = tiny_config();
  cfg.generator_steps = 8;
  cfg.log_every = 3;
  const auto r = pretrain(data, LatentPrior{}, cfg);
  REQUIRE(r.log.size() == 4);
  CHECK(r.log[0].step == 0);
  CHECK(r.log[1].step == 3);
  CHECK(r.log[2].step == 6);
  CHECK(r.log[3].step == 7);
  for (const auto& e : r.log) {
    CHECK(std::isfinite(e.critic_objective));
    CHECK(e.gradient_penalty >= 0.0);
  }
}

TEST_CASE("pretrain reduces EMD to the data on 25 Gaussians") {
  const Dataset2D data = sample_gaussian_grid(20000, 5, 5, 0.5, 0.05, 1);
  const LatentPrior prior;
  WganConfig cfg;
  cfg.generator_steps = 400;
  cfg.seed = 3;
  const Mlp init{default_generator_spec(2, cfg.generator_width),
                 mlp_init(default_generator_spec(2, cfg.generator_width), 17)};
  const auto r = pretrain(data, prior, cfg, init);
  Rng rng(8);
  const Tensor real = sample_gaussian_grid(512, 5, 5, 0.5, 0.05, 2).points;
  const double before = emd(real, generator_forward(init, prior_sample(prior, 512, rng)));
  const double after = emd(real, generator_forward(r.generator, prior_sample(prior, 512, rng)));
  CHECK(after < 0.5 * before);
}

TEST_CASE("errors") {
  const Dataset2D data = sample_swiss_roll(100, 1);
  SUBCASE("config validation") {
    WganConfig c = tiny_config();
    c.critic_steps = 0;
    CHECK_THROWS_AS(pretrain(data, LatentPrior{}, c), ConfigError);
    c = tiny_config();
    c.gp_weight = -1.0;
    CHECK_THROWS_AS(pretrain(data, LatentPrior{}, c), ConfigError);
    c = tiny_config();
    c.batch_size = 1;
    CHECK_THROWS_AS(pretrain(data, LatentPrior{}, c), ConfigError);
  }
  SUBCASE("divergence guard") {
    WganConfig c = tiny_config();
    c.divergence_limit = 1e-12;
    CHECK_THROWS_AS(pretrain(data, LatentPrior{}, c), NumericError);
  }
  SUBCASE("gradient penalty batch mismatch") {
    Rng rng(1);
    const Mlp critic = affine_critic(1, 0, 1, 1, 0);
    CHECK_THROWS_AS(gradient_penalty(critic, Tensor(3, 2), Tensor(4, 2), rng), ConfigError);
  }
  SUBCASE("generator that does not map to the plane") {
    const MlpSpec bad{{2, 4, 3}, Activation::kRelu, Activation::kIdentity};
    CHECK_THROWS_AS(pretrain(data, LatentPrior{}, tiny_config(), Mlp{bad, mlp_init(bad, 1)}),
                    ConfigError);
  }
}
