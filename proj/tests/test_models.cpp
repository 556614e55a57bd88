#include <cmath>
#include <set>

#include "doctest.h"
#include "lrgan/errors.hpp"
#include "lrgan/models.hpp"
#include "oracles.hpp"

using namespace lrgan;

TEST_CASE("gaussian prior has zero mean and unit covariance") {
  Rng rng(11);
  const Tensor z = prior_sample({PriorKind::kGaussian, 3}, 200000, rng);
  const Matrix& m = z.matrix();
  const auto mean = m.colwise().mean();
  const Matrix centered = m.rowwise() - mean;
  const Matrix cov = centered.transpose() * centered / static_cast<double>(m.rows() - 1);
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(mean(i)) < 0.01);
    for (int j = 0; j < 3; ++j) CHECK(std::abs(cov(i, j) - (i == j ? 1.0 : 0.0)) < 0.015);
  }
}

TEST_CASE("uniform prior stays in the box with variance 1/3") {
  Rng rng(12);
  const Tensor z = prior_sample({PriorKind::kUniform, 2}, 200000, rng);
  CHECK(z.matrix().maxCoeff() <= 1.0);
  CHECK(z.matrix().minCoeff() >= -1.0);
  const double var = z.matrix().array().square().mean();
  CHECK(var == doctest::Approx(1.0 / 3.0).epsilon(0.01));
}

TEST_CASE("prior rejects a non-positive dimension") {
  Rng rng(1);
  CHECK_THROWS_AS(prior_sample({PriorKind::kGaussian, 0}, 4, rng), ConfigError);
}

TEST_CASE("spec validation") {
  CHECK_THROWS_AS((MlpSpec{{2, 1}, Activation::kRelu, Activation::kIdentity}.validate()),
                  ConfigError);
  CHECK_THROWS_AS((MlpSpec{{2, 0, 1}, Activation::kRelu, Activation::kIdentity}.validate()),
                  ConfigError);
  CHECK_THROWS_AS((MlpSpec{{2, 4, 1}, Activation::kTanh, Activation::kIdentity}.validate()),
                  ConfigError);
  CHECK_NOTHROW(default_generator_spec(2).validate());
  CHECK_NOTHROW(default_critic_spec().validate());
  CHECK_NOTHROW(default_importance_spec(2).validate());
  CHECK(default_importance_spec(5).widths == std::vector<int>{5, 64, 64, 64, 64, 1});
}

TEST_CASE("initialisation is uniform with bound 1 / sqrt(fan_in)") {
  const MlpSpec spec{{50, 400, 1}, Activation::kRelu, Activation::kIdentity};
  const MlpParams p = mlp_init(spec, 3);
  REQUIRE(p.layers.size() == 2);
  const double bound = 1.0 / std::sqrt(50.0);
  CHECK(p.layers[0].weight.matrix().cwiseAbs().maxCoeff() <= bound);
  CHECK(p.layers[0].bias.matrix().cwiseAbs().maxCoeff() <= bound);
  // Variance of U(-b, b) is b^2 / 3.
  const double var = p.layers[0].weight.matrix().array().square().mean();
  CHECK(var == doctest::Approx(bound * bound / 3.0).epsilon(0.05));
  CHECK(p.layers[1].weight.matrix().cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(400.0));
  CHECK(mlp_init(spec, 3) == p);
  CHECK_FALSE(mlp_init(spec, 4) == p);
}

TEST_CASE("fast forward pass agrees with the graph evaluation") {
  Rng rng(5);
  for (auto hidden : {Activation::kRelu, Activation::kLeakyRelu}) {
    for (auto output : {Activation::kIdentity, Activation::kRelu, Activation::kTanh}) {
      const MlpSpec spec{{3, 7, 5, 2}, hidden, output};
      const Mlp net{spec, mlp_init(spec, 9)};
      const Tensor x = testing::random_tensor(11, 3, rng);
      ad::Graph g;
      const auto in = g.input("x");
      const auto nodes = build_mlp(g, spec, "net", in);
      ad::Bindings b;
      bind_mlp(b, "net", net.params);
      b.emplace("x", x);
      const Tensor expected = g.eval(nodes.output, b);
      CHECK(testing::relative_error(Tensor(mlp_forward(net, x.matrix())), expected) < 1e-12);
    }
  }
}

TEST_CASE("hand-computed forward pass") {
  // One hidden unit: relu(2x - 1), output 3h + 0.5.
  const MlpSpec spec{{1, 1, 1}, Activation::kRelu, Activation::kIdentity};
  MlpParams p;
  p.layers.push_back({Tensor::scalar(2.0), Tensor::scalar(-1.0)});
  p.layers.push_back({Tensor::scalar(3.0), Tensor::scalar(0.5)});
  const Mlp net{spec, p};
  const Tensor x = Tensor::from_rows({{0.0}, {1.0}, {2.0}});
  const Matrix y = mlp_forward(net, x.matrix());
  CHECK(y(0, 0) == doctest::Approx(0.5));
  CHECK(y(1, 0) == doctest::Approx(3.5));
  CHECK(y(2, 0) == doctest::Approx(9.5));
}

TEST_CASE("role-specific forward passes check shapes") {
  const Mlp gen{default_generator_spec(2, 8), mlp_init(default_generator_spec(2, 8), 1)};
  const Mlp critic{default_critic_spec(8), mlp_init(default_critic_spec(8), 2)};
  Rng rng(3);
  CHECK(generator_forward(gen, testing::random_tensor(4, 2, rng)).cols() == 2);
  CHECK_THROWS_AS(generator_forward(gen, testing::random_tensor(4, 3, rng)), ConfigError);
  CHECK_THROWS_AS(importance_forward(gen, testing::random_tensor(4, 2, rng)), ConfigError);
  CHECK_THROWS_AS(critic_forward(gen, testing::random_tensor(4, 2, rng)), ConfigError);
}

TEST_CASE("importance network output is non-negative") {
  const auto spec = default_importance_spec(2, 16);
  Rng rng(8);
  for (int seed = 0; seed < 20; ++seed) {
    const Mlp w{spec, mlp_init(spec, static_cast<std::uint64_t>(seed))};
    const Tensor out = importance_forward(w, testing::random_tensor(256, 2, rng, 3.0));
    CHECK(out.matrix().minCoeff() >= 0.0);
  }
}

TEST_CASE("check_params rejects mismatched shapes") {
  const auto spec = default_critic_spec(4);
  MlpParams p = mlp_init(spec, 1);
  CHECK_NOTHROW(check_params(spec, p));
  p.layers[1].bias = Tensor(1, 3);
  CHECK_THROWS_AS(check_params(spec, p), ConfigError);
  p.layers.pop_back();
  CHECK_THROWS_AS(check_params(spec, p), ConfigError);
}

TEST_CASE("Adam first step moves each parameter by about lr") {
  // Bias correction makes the first step exactly lr * g / (|g| + eps).
  const MlpSpec spec{{1, 1, 1}, Activation::kRelu, Activation::kIdentity};
  MlpParams p;
  p.layers.push_back({Tensor::scalar(1.0), Tensor::scalar(0.0)});
  p.layers.push_back({Tensor::scalar(-2.0), Tensor::scalar(3.0)});
  AdamState s = adam_init(p, {0.1, 0.5, 0.9, 1e-8});
  const std::vector<Tensor> g = {Tensor::scalar(1.0), Tensor::scalar(-4.0), Tensor::scalar(0.0),
                                 Tensor::scalar(1e-3)};
  adam_step(p, g, s);
  CHECK(p.layers[0].weight.item() == doctest::Approx(0.9).epsilon(1e-9));
  CHECK(p.layers[0].bias.item() == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(p.layers[1].weight.item() == -2.0);
  CHECK(p.layers[1].bias.item() == doctest::Approx(2.9).epsilon(1e-6));
  CHECK(s.step == 1);
}

TEST_CASE("Adam matches a scalar reference over several steps") {
  const MlpSpec spec{{1, 1, 1}, Activation::kRelu, Activation::kIdentity};
  MlpParams p;
  p.layers.push_back({Tensor::scalar(0.3), Tensor::scalar(0.0)});
  p.layers.push_back({Tensor::scalar(0.0), Tensor::scalar(0.0)});
  const AdamConfig c{0.01, 0.5, 0.9, 1e-8};
  AdamState s = adam_init(p, c);
  double theta = 0.3, m = 0.0, v = 0.0;
  const double grads[] = {0.5, -1.0, 2.0, 0.25, -0.75};
  for (int t = 1; t <= 5; ++t) {
    const double gr = grads[t - 1];
    m = c.beta1 * m + (1 - c.beta1) * gr;
    v = c.beta2 * v + (1 - c.beta2) * gr * gr;
    theta -= c.lr * (m / (1 - std::pow(c.beta1, t))) / (std::sqrt(v / (1 - std::pow(c.beta2, t))) + c.eps);
    const std::vector<Tensor> g = {Tensor::scalar(gr), Tensor::scalar(0), Tensor::scalar(0),
                                   Tensor::scalar(0)};
    adam_step(p, g, s);
    CHECK(p.layers[0].weight.item() == doctest::Approx(theta).epsilon(1e-12));
  }
}

TEST_CASE("Adam with zero learning rate is a no-op") {
  const auto spec = default_critic_spec(4);
  MlpParams p = mlp_init(spec, 1);
  const MlpParams before = p;
  AdamState s = adam_init(p, {0.0, 0.5, 0.9, 1e-8});
  Rng rng(2);
  std::vector<Tensor> g;
  for (const Tensor* t : p.tensors()) g.push_back(testing::random_tensor(t->rows(), t->cols(), rng));
  adam_step(p, g, s);
  CHECK(p == before);
}

TEST_CASE("Adam rejects bad configs and gradient lists") {
  CHECK_THROWS_AS((AdamConfig{-1.0, 0.5, 0.9, 1e-8}.validate()), ConfigError);
  CHECK_THROWS_AS((AdamConfig{1e-3, 1.0, 0.9, 1e-8}.validate()), ConfigError);
  CHECK_THROWS_AS((AdamConfig{1e-3, 0.5, 0.9, 0.0}.validate()), ConfigError);
  const auto spec = default_critic_spec(4);
  MlpParams p = mlp_init(spec, 1);
  AdamState s = adam_init(p, {});
  const std::vector<Tensor> too_few = {Tensor::scalar(1.0)};
  CHECK_THROWS_AS(adam_step(p, too_few, s), ConfigError);
}

TEST_CASE("derived seeds are distinct and stable") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t master = 0; master < 20; ++master) {
    for (std::uint64_t tag = 0; tag < 20; ++tag) seen.insert(derive_seed(master, tag));
  }
  CHECK(seen.size() == 400);
  CHECK(derive_seed(7, 3) == derive_seed(7, 3));
}
