#include "lrgan/samplers.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "lrgan/errors.hpp"
#include "lrgan/wgan.hpp"

namespace lrgan {
namespace {

constexpr int kMhRedrawCap = 100;

void check_ratios(const Tensor& r, Eigen::Index rows, const char* what) {
  if (r.rows() != rows || r.cols() != 1) {
    throw ConfigError(std::string(what) + ": ratio must return one value per candidate");
  }
  for (double v : r.flat()) {
    if (!std::isfinite(v) || v < 0.0) {
      throw NumericError(std::string(what) + ": ratio must be finite and non-negative");
    }
  }
}

Tensor evaluate_ratio(const RatioFn& ratio, const Tensor& candidates, const char* what) {
  Tensor r = ratio(candidates);
  check_ratios(r, candidates.rows(), what);
  return r;
}

Proposal prior_proposal(const LatentPrior& prior) {
  return [prior](std::size_t n, Rng& rng) { return prior_sample(prior, n, rng); };
}

RatioFn importance_ratio(const Mlp& importance) {
  return [&importance](const Tensor& z) { return importance_forward(importance, z); };
}

const Mlp& require(const std::optional<Mlp>& net, const char* what) {
  if (!net) throw ConfigError(std::string("sampler: method needs ") + what);
  return *net;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

void GaConfig::validate() const {
  if (steps < 0) throw ConfigError("ga: steps must be >= 0");
  if (!(step_size > 0.0)) throw ConfigError("ga: step size must be > 0");
}

Tensor project_gradient(const Tensor& g, const Tensor& z, Projection mode) {
  if (!g.same_shape(z)) throw ConfigError("project_gradient: shape mismatch");
  Matrix out = g.matrix();
  const double root_d = std::sqrt(static_cast<double>(z.cols()));
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double dot = g.matrix().row(i).dot(z.matrix().row(i));
    double scale = root_d;
    if (mode == Projection::kExact) {
      scale = z.matrix().row(i).squaredNorm();
      if (scale == 0.0) continue;
    }
    out.row(i) -= (dot / scale) * z.matrix().row(i);
  }
  return Tensor(std::move(out));
}

LatentField LatentField::importance(const Mlp& importance) {
  check_params(importance.spec, importance.params);
  LatentField f;
  f.dim_ = importance.spec.input_dim();
  const auto z = f.graph_.input("z");
  const auto net = build_mlp(f.graph_, importance.spec, "importance", z);
  bind_mlp(f.bindings_, "importance", importance.params);
  f.finish(z, net.output);
  return f;
}

LatentField LatentField::critic(const Mlp& generator, const Mlp& critic) {
  check_params(generator.spec, generator.params);
  check_params(critic.spec, critic.params);
  if (generator.spec.output_dim() != critic.spec.input_dim()) {
    throw ConfigError("LatentField: generator output does not feed the critic");
  }
  LatentField f;
  f.dim_ = generator.spec.input_dim();
  const auto z = f.graph_.input("z");
  const auto gen = build_mlp(f.graph_, generator.spec, "generator", z);
  const auto d = build_mlp(f.graph_, critic.spec, "critic", gen.output);
  bind_mlp(f.bindings_, "generator", generator.params);
  bind_mlp(f.bindings_, "critic", critic.params);
  f.finish(z, d.output);
  return f;
}

void LatentField::finish(ad::NodeId z, ad::NodeId out) {
  // Rows are independent, so the gradient of the sum is the per-row gradient.
  const ad::NodeId wrt[] = {z};
  const auto grad = graph_.gradients(graph_.sum(out), wrt).front();
  const ad::NodeId value_out[] = {out};
  const ad::NodeId grad_out[] = {grad};
  value_plan_ = graph_.plan(value_out);
  grad_plan_ = graph_.plan(grad_out);
}

Tensor LatentField::run(const ad::Plan& plan, const Tensor& z) {
  if (z.cols() != dim_) throw ConfigError("LatentField: latent dimension mismatch");
  bindings_.insert_or_assign("z", z);
  graph_.run(plan, bindings_, workspace_);
  return workspace_.value(plan.outputs().front());
}

Tensor LatentField::value(const Tensor& z) { return run(value_plan_, z); }
Tensor LatentField::gradient(const Tensor& z) { return run(grad_plan_, z); }

Tensor latent_ga(LatentField& field, const LatentPrior& prior, const Tensor& z0,
                 const GaConfig& cfg) {
  cfg.validate();
  if (z0.cols() != field.dim()) throw ConfigError("latent_ga: latent dimension mismatch");
  const bool project = cfg.project && prior.kind == PriorKind::kGaussian;
  Tensor z = z0;
  for (int step = 0; step < cfg.steps; ++step) {
    Tensor g = field.gradient(z);
    if (!g.all_finite()) throw NumericError("latent_ga: non-finite gradient");
    if (project) g = project_gradient(g, z, cfg.projection);
    z.matrix() += cfg.step_size * g.matrix();
  }
  return z;
}

double Draws::acceptance_rate() const {
  return proposals == 0 ? 0.0 : static_cast<double>(samples.rows()) / static_cast<double>(proposals);
}

Draws rejection_sample(const Proposal& propose, const RatioFn& ratio, double bound, std::size_t n,
                       Rng& rng, std::size_t max_draws) {
  if (!(bound > 0.0) || !std::isfinite(bound)) {
    throw ConfigError("rejection_sample: bound must be positive and finite");
  }
  if (max_draws == 0) throw ConfigError("rejection_sample: max_draws must be >= 1");
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Draws out;
  std::size_t kept = 0;
  std::size_t since_accept = 0;
  while (kept < n) {
    // Batches sized for the expected remaining work keep the model calls vectorized.
    const std::size_t chunk = std::clamp<std::size_t>(2 * (n - kept), 64, 4096);
    const Tensor candidates = propose(chunk, rng);
    if (kept == 0 && out.samples.size() == 0) {
      out.samples = Tensor(static_cast<Eigen::Index>(n), candidates.cols());
    }
    const Tensor r = evaluate_ratio(ratio, candidates, "rejection_sample");
    for (Eigen::Index i = 0; i < candidates.rows() && kept < n; ++i) {
      ++out.proposals;
      if (uniform(rng) * bound < r(i, 0)) {
        out.samples.matrix().row(static_cast<Eigen::Index>(kept++)) = candidates.matrix().row(i);
        since_accept = 0;
      } else if (++since_accept >= max_draws) {
        throw StarvationError("rejection_sample: no acceptance in " + std::to_string(max_draws) +
                              " consecutive draws");
      }
    }
  }
  return out;
}

Draws importance_resample(const Proposal& propose, const RatioFn& ratio, int pool, std::size_t n,
                          Rng& rng) {
  if (pool < 1) throw ConfigError("importance_resample: pool size must be >= 1");
  const auto p = static_cast<std::size_t>(pool);
  const Tensor candidates = propose(n * p, rng);
  const Tensor r = evaluate_ratio(ratio, candidates, "importance_resample");
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Draws out;
  out.samples = Tensor(static_cast<Eigen::Index>(n), candidates.cols());
  out.proposals = n * p;
  for (std::size_t i = 0; i < n; ++i) {
    const auto base = static_cast<Eigen::Index>(i * p);
    double total = 0.0;
    for (std::size_t j = 0; j < p; ++j) total += r(base + static_cast<Eigen::Index>(j), 0);
    if (!(total > 0.0)) throw NumericError("importance_resample: all ratios in a pool are zero");
    const double target = uniform(rng) * total;
    Eigen::Index pick = base;
    double acc = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      const auto idx = base + static_cast<Eigen::Index>(j);
      acc += r(idx, 0);
      if (r(idx, 0) > 0.0) pick = idx;  // last positive candidate absorbs round-off
      if (target < acc) break;
    }
    out.samples.matrix().row(static_cast<Eigen::Index>(i)) = candidates.matrix().row(pick);
  }
  return out;
}

Draws independent_mh(const Proposal& propose, const RatioFn& ratio, int chain_len, std::size_t n,
                     Rng& rng) {
  if (chain_len < 1) throw ConfigError("independent_mh: chain length must be >= 1");
  Draws out;
  out.samples = propose(n, rng);
  out.proposals = n;
  Tensor current = evaluate_ratio(ratio, out.samples, "independent_mh");
  // Chains must start where r > 0, otherwise the acceptance ratio is undefined.
  for (int attempt = 0;; ++attempt) {
    std::vector<Eigen::Index> dead;
    for (Eigen::Index i = 0; i < current.rows(); ++i) {
      if (current(i, 0) == 0.0) dead.push_back(i);
    }
    if (dead.empty()) break;
    if (attempt == kMhRedrawCap) {
      throw StarvationError("independent_mh: initial state has zero ratio after " +
                            std::to_string(kMhRedrawCap) + " redraws");
    }
    const Tensor fresh = propose(dead.size(), rng);
    const Tensor r = evaluate_ratio(ratio, fresh, "independent_mh");
    out.proposals += dead.size();
    for (std::size_t k = 0; k < dead.size(); ++k) {
      const auto row = static_cast<Eigen::Index>(k);
      out.samples.matrix().row(dead[k]) = fresh.matrix().row(row);
      current(dead[k], 0) = r(row, 0);
    }
  }
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (int step = 1; step < chain_len; ++step) {
    const Tensor proposal = propose(n, rng);
    const Tensor r = evaluate_ratio(ratio, proposal, "independent_mh");
    out.proposals += n;
    for (Eigen::Index i = 0; i < proposal.rows(); ++i) {
      // Accept with probability min(1, r' / r).
      if (uniform(rng) * current(i, 0) < r(i, 0)) {
        out.samples.matrix().row(i) = proposal.matrix().row(i);
        current(i, 0) = r(i, 0);
      }
    }
  }
  return out;
}

double calibrate_bound(const Proposal& propose, const RatioFn& ratio, std::size_t draws,
                       Rng& rng) {
  if (draws == 0) throw ConfigError("calibrate_bound: need at least one draw");
  const Tensor r = evaluate_ratio(ratio, propose(draws, rng), "calibrate_bound");
  const double k = r.matrix().maxCoeff();
  if (!(k > 0.0)) throw NumericError("calibrate_bound: every calibration ratio is zero");
  return k;
}

Draws latent_rs(const Mlp& importance, const LatentPrior& prior, double cap, std::size_t n,
                Rng& rng, std::size_t max_draws) {
  if (importance.spec.input_dim() != prior.dim) {
    throw ConfigError("latent_rs: importance network does not match the prior dimension");
  }
  return rejection_sample(prior_proposal(prior), importance_ratio(importance), cap, n, rng,
                          max_draws);
}

Draws latent_rs_ga(const Mlp& importance, const LatentPrior& prior, double cap,
                   const GaConfig& cfg, std::size_t n, Rng& rng, std::size_t max_draws) {
  cfg.validate();
  Draws d = latent_rs(importance, prior, cap, n, rng, max_draws);
  if (cfg.steps > 0) {
    LatentField field = LatentField::importance(importance);
    d.samples = latent_ga(field, prior, d.samples, cfg);
  }
  return d;
}

void BceConfig::validate() const {
  if (steps < 0) throw ConfigError("bce: steps must be >= 0");
  if (batch_size < 2) throw ConfigError("bce: batch_size must be >= 2");
  if (!(gp_weight >= 0.0)) throw ConfigError("bce: gp_weight must be >= 0");
  if (!(divergence_limit > 0.0)) throw ConfigError("bce: divergence_limit must be > 0");
  adam.validate();
}

RatioModel finetune_bce(const Mlp& critic, const Mlp& generator, const Dataset2D& data,
                        const LatentPrior& prior, const BceConfig& config, Rng& rng) {
  config.validate();
  if (critic.spec.output_dim() != 1 || critic.spec.input_dim() != 2) {
    throw ConfigError("finetune_bce: critic must map 2 -> 1");
  }
  Trainable net = Trainable::wrap(critic, config.adam);
  if (config.steps == 0) return {std::move(net.net)};

  ad::Graph g;
  const auto real = g.input("real");
  const auto fake = g.input("fake");
  const auto mixed = g.input("mixed");
  const auto l_real = build_mlp(g, critic.spec, "critic", real);
  const auto l_fake = build_mlp(g, critic.spec, "critic", fake);
  const auto l_mixed = build_mlp(g, critic.spec, "critic", mixed);
  const ad::NodeId mixed_ids[] = {mixed};
  const auto grad_x = g.gradients(g.sum(l_mixed.output), mixed_ids).front();
  const auto penalty = g.mean(g.square(g.affine(g.row_norm(grad_x), 1.0, -1.0)));
  // -log sigmoid(l) = softplus(-l); -log(1 - sigmoid(l)) = softplus(l).
  const auto bce = g.add(g.mean(g.softplus(g.neg(l_real.output))),
                         g.mean(g.softplus(l_fake.output)));
  const auto loss = g.add(bce, g.affine(penalty, config.gp_weight, 0.0));
  auto grads = g.gradients(loss, l_real.params);
  std::vector<ad::NodeId> outputs = {loss};
  outputs.insert(outputs.end(), grads.begin(), grads.end());
  const ad::Plan plan = g.plan(outputs);
  ad::Workspace ws;

  const auto b = static_cast<std::size_t>(config.batch_size);
  for (int step = 0; step < config.steps; ++step) {
    const Tensor x = sample_batch(data, b, rng);
    const Tensor xf = generator_forward(generator, prior_sample(prior, b, rng));
    ad::Bindings bind;
    bind_mlp(bind, "critic", net.net.params);
    bind.emplace("real", x);
    bind.emplace("fake", xf);
    bind.emplace("mixed", interpolate(x, xf, interpolation_weights(x.rows(), rng)));
    g.run(plan, bind, ws);
    const double value = ws.value(outputs[0]).item();
    if (!std::isfinite(value) || std::abs(value) > config.divergence_limit) {
      throw NumericError("finetune_bce: loss diverged at step " + std::to_string(step));
    }
    std::vector<const Tensor*> gptr;
    for (std::size_t i = 1; i < outputs.size(); ++i) gptr.push_back(&ws.value(outputs[i]));
    adam_step(net.net.params, gptr, net.adam);
  }
  return {std::move(net.net)};
}

Tensor classifier_prob(const RatioModel& model, const Tensor& x) {
  Tensor p = critic_forward(model.classifier, x);
  for (double& v : p.flat()) v = 1.0 / (1.0 + std::exp(-v));
  return p;
}

double density_ratio(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("density_ratio: probability outside [0, 1]");
  p = std::min(p, kMaxClassifierProb);
  return p / (1.0 - p);
}

Tensor density_ratio(const RatioModel& model, const Tensor& x) {
  Tensor r = classifier_prob(model, x);
  for (double& v : r.flat()) v = density_ratio(v);
  return r;
}

RatioFn latent_ratio(const RatioModel& model, const Mlp& generator) {
  return [&model, &generator](const Tensor& z) {
    return density_ratio(model, generator_forward(generator, z));
  };
}

std::string_view method_name(Method m) {
  switch (m) {
    case Method::kRaw: return "raw";
    case Method::kLatentRs: return "latentRS";
    case Method::kLatentGa: return "latentGA";
    case Method::kLatentRsGa: return "latentRS+GA";
    case Method::kDrs: return "DRS";
    case Method::kSir: return "SIR";
    case Method::kMh: return "MH";
    case Method::kDot: return "DOT";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  const std::string key = lower(name);
  if (key == "none") return Method::kRaw;
  if (key == "latentrs-ga") return Method::kLatentRsGa;
  for (Method m : {Method::kRaw, Method::kLatentRs, Method::kLatentGa, Method::kLatentRsGa,
                   Method::kDrs, Method::kSir, Method::kMh, Method::kDot}) {
    if (lower(method_name(m)) == key) return m;
  }
  throw ConfigError("unknown sampling method '" + std::string(name) + "'");
}

SampleBatch draw_samples(Method method, const SamplerModels& models,
                         const SamplerSettings& settings, std::size_t n, Rng& rng) {
  const auto& prior = models.prior;
  const auto& gen = models.generator;
  const Proposal propose = prior_proposal(prior);
  SampleBatch out;
  if (n == 0) {
    out.points = Tensor(0, gen.spec.output_dim());
    out.latents = Tensor(0, prior.dim);
    return out;
  }
  Draws d;
  switch (method) {
    case Method::kRaw:
      d.samples = prior_sample(prior, n, rng);
      d.proposals = n;
      break;
    case Method::kLatentRs:
      d = latent_rs(require(models.importance, "an importance network"), prior, models.cap, n, rng,
                    settings.max_draws);
      break;
    case Method::kLatentGa: {
      LatentField field = LatentField::importance(require(models.importance, "an importance network"));
      d.samples = latent_ga(field, prior, prior_sample(prior, n, rng), settings.ga);
      d.proposals = n;
      break;
    }
    case Method::kLatentRsGa:
      d = latent_rs_ga(require(models.importance, "an importance network"), prior, models.cap,
                       settings.ga, n, rng, settings.max_draws);
      break;
    case Method::kDrs:
    case Method::kSir:
    case Method::kMh: {
      if (!models.ratio) throw ConfigError("sampler: method needs a fine-tuned ratio model");
      const RatioFn ratio = latent_ratio(*models.ratio, gen);
      if (method == Method::kDrs) {
        const double k = calibrate_bound(propose, ratio, settings.calibration_draws, rng);
        d = rejection_sample(propose, ratio, k, n, rng, settings.max_draws);
      } else if (method == Method::kSir) {
        d = importance_resample(propose, ratio, settings.sir_pool, n, rng);
      } else {
        d = independent_mh(propose, ratio, settings.mh_chain, n, rng);
      }
      break;
    }
    case Method::kDot: {
      LatentField field = LatentField::critic(gen, require(models.critic, "a critic"));
      d.samples = latent_ga(field, prior, prior_sample(prior, n, rng), settings.dot);
      d.proposals = n;
      break;
    }
  }
  out.points = generator_forward(gen, d.samples);
  out.latents = std::move(d.samples);
  out.proposals = d.proposals;
  return out;
}

}  // namespace lrgan
