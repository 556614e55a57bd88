#include "lrgan/models.hpp"

#include <cmath>

#include "lrgan/errors.hpp"

namespace lrgan {
namespace {

double activate(Activation act, double x) {
  switch (act) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kLeakyRelu: return x >= 0.0 ? x : kLeakySlope * x;
    case Activation::kTanh: return std::tanh(x);
  }
  return x;
}

ad::NodeId activate(ad::Graph& g, Activation act, ad::NodeId x) {
  switch (act) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return g.relu(x);
    case Activation::kLeakyRelu: return g.leaky_relu(x, kLeakySlope);
    case Activation::kTanh: return g.tanh(x);
  }
  return x;
}

Tensor checked_forward(const Mlp& net, const Tensor& x, int out_dim, const char* what) {
  if (x.cols() != net.spec.input_dim()) {
    throw ConfigError(std::string(what) + ": input has " + std::to_string(x.cols()) +
                      " columns, network expects " + std::to_string(net.spec.input_dim()));
  }
  if (net.spec.output_dim() != out_dim) {
    throw ConfigError(std::string(what) + ": network output width must be " +
                      std::to_string(out_dim));
  }
  return Tensor(mlp_forward(net, x.matrix()));
}

}  // namespace

void LatentPrior::validate() const {
  if (dim < 1) throw ConfigError("latent prior: dimension must be >= 1");
}

Tensor prior_sample(const LatentPrior& prior, std::size_t n, Rng& rng) {
  prior.validate();
  Tensor z(static_cast<Eigen::Index>(n), prior.dim);
  if (prior.kind == PriorKind::kGaussian) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : z.flat()) v = normal(rng);
  } else {
    std::uniform_real_distribution<double> uniform(-1.0, 1.0);
    for (double& v : z.flat()) v = uniform(rng);
  }
  return z;
}

void MlpSpec::validate() const {
  if (widths.size() < 3) throw ConfigError("mlp spec: need at least one hidden layer");
  for (int w : widths) {
    if (w <= 0) throw ConfigError("mlp spec: layer widths must be positive");
  }
  if (hidden != Activation::kRelu && hidden != Activation::kLeakyRelu) {
    throw ConfigError("mlp spec: hidden activation must be relu or leaky-relu");
  }
  if (output == Activation::kLeakyRelu) {
    throw ConfigError("mlp spec: output activation must be identity, relu or tanh");
  }
}

std::vector<Tensor*> MlpParams::tensors() {
  std::vector<Tensor*> out;
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Tensor*> MlpParams::tensors() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

bool MlpParams::all_finite() const {
  for (const auto& l : layers) {
    if (!l.weight.all_finite() || !l.bias.all_finite()) return false;
  }
  return true;
}

bool operator==(const MlpParams& a, const MlpParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& x = a.layers[i];
    const auto& y = b.layers[i];
    if (!x.weight.same_shape(y.weight) || !x.bias.same_shape(y.bias)) return false;
    if (x.weight.matrix() != y.weight.matrix() || x.bias.matrix() != y.bias.matrix()) {
      return false;
    }
  }
  return true;
}

MlpParams mlp_init(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  MlpParams params;
  for (std::size_t i = 0; i < spec.layers(); ++i) {
    const int fan_in = spec.widths[i];
    const int fan_out = spec.widths[i + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> uniform(-bound, bound);
    Layer layer{Tensor(fan_in, fan_out), Tensor(1, fan_out)};
    for (double& v : layer.weight.flat()) v = uniform(rng);
    for (double& v : layer.bias.flat()) v = uniform(rng);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

void check_params(const MlpSpec& spec, const MlpParams& params) {
  spec.validate();
  if (params.layers.size() != spec.layers()) {
    throw ConfigError("mlp params: expected " + std::to_string(spec.layers()) + " layers, got " +
                      std::to_string(params.layers.size()));
  }
  for (std::size_t i = 0; i < spec.layers(); ++i) {
    const auto& l = params.layers[i];
    if (l.weight.rows() != spec.widths[i] || l.weight.cols() != spec.widths[i + 1] ||
        l.bias.rows() != 1 || l.bias.cols() != spec.widths[i + 1]) {
      throw ConfigError("mlp params: layer " + std::to_string(i) + " shape disagrees with spec");
    }
  }
}

Matrix mlp_forward(const Mlp& net, const Matrix& x) {
  Matrix h = x;
  const std::size_t n = net.params.layers.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = net.params.layers[i];
    Matrix next = h * l.weight.matrix();
    next.rowwise() += l.bias.matrix().row(0);
    const Activation act = i + 1 == n ? net.spec.output : net.spec.hidden;
    if (act != Activation::kIdentity) {
      next = next.unaryExpr([act](double v) { return activate(act, v); });
    }
    h = std::move(next);
  }
  return h;
}

Tensor generator_forward(const Mlp& generator, const Tensor& z) {
  return checked_forward(generator, z, 2, "generator_forward");
}

Tensor critic_forward(const Mlp& critic, const Tensor& x) {
  return checked_forward(critic, x, 1, "critic_forward");
}

Tensor importance_forward(const Mlp& importance, const Tensor& z) {
  return checked_forward(importance, z, 1, "importance_forward");
}

MlpNodes build_mlp(ad::Graph& graph, const MlpSpec& spec, const std::string& prefix,
                   ad::NodeId x) {
  spec.validate();
  MlpNodes nodes;
  ad::NodeId h = x;
  for (std::size_t i = 0; i < spec.layers(); ++i) {
    const auto w = graph.input(prefix + ".w" + std::to_string(i));
    const auto b = graph.input(prefix + ".b" + std::to_string(i));
    nodes.params.push_back(w);
    nodes.params.push_back(b);
    h = graph.add_bias(graph.matmul(h, w), b);
    h = activate(graph, i + 1 == spec.layers() ? spec.output : spec.hidden, h);
  }
  nodes.output = h;
  return nodes;
}

void bind_mlp(ad::Bindings& bindings, const std::string& prefix, const MlpParams& params) {
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    bindings.insert_or_assign(prefix + ".w" + std::to_string(i), params.layers[i].weight);
    bindings.insert_or_assign(prefix + ".b" + std::to_string(i), params.layers[i].bias);
  }
}

void AdamConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("adam: learning rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("adam: epsilon must be > 0");
}

AdamState adam_init(const MlpParams& params, const AdamConfig& config) {
  config.validate();
  AdamState state;
  state.config = config;
  for (const Tensor* t : params.tensors()) {
    state.first_moment.emplace_back(t->rows(), t->cols());
    state.second_moment.emplace_back(t->rows(), t->cols());
  }
  return state;
}

void adam_step(MlpParams& params, std::span<const Tensor> grads, AdamState& state) {
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(grads.size());
  for (const Tensor& g : grads) ptrs.push_back(&g);
  adam_step(params, std::span<const Tensor* const>(ptrs), state);
}

void adam_step(MlpParams& params, std::span<const Tensor* const> grads, AdamState& state) {
  auto targets = params.tensors();
  if (grads.size() != targets.size() || state.first_moment.size() != targets.size()) {
    throw ConfigError("adam_step: gradient count does not match parameter count");
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!grads[i]->same_shape(*targets[i]) || !state.first_moment[i].same_shape(*targets[i])) {
      throw ConfigError("adam_step: shape mismatch at parameter " + std::to_string(i));
    }
  }
  const auto& c = state.config;
  ++state.step;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < targets.size(); ++i) {
    auto m = state.first_moment[i].matrix().array();
    auto v = state.second_moment[i].matrix().array();
    const auto g = grads[i]->matrix().array();
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.square();
    targets[i]->matrix().array() -=
        c.lr * (m / correction1) / ((v / correction2).sqrt() + c.eps);
  }
}

}  // namespace lrgan

namespace lrgan {

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag) {
  std::uint64_t x = master + 0x9E3779B97F4A7C15ULL * (tag + 1);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

MlpSpec default_generator_spec(int latent_dim, int width) {
  return {{latent_dim, width, width, width, 2}, Activation::kRelu, Activation::kIdentity};
}

MlpSpec default_critic_spec(int width) {
  return {{2, width, width, width, 1}, Activation::kLeakyRelu, Activation::kIdentity};
}

MlpSpec default_importance_spec(int latent_dim, int width) {
  return {{latent_dim, width, width, width, width, 1}, Activation::kRelu, Activation::kRelu};
}

}  // namespace lrgan
