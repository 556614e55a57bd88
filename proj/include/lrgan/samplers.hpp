#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include "lrgan/autodiff.hpp"
#include "lrgan/models.hpp"
#include "lrgan/synthdata.hpp"
#include "lrgan/tensor.hpp"

namespace lrgan {

inline constexpr std::size_t kDefaultMaxDraws = 10000;

/// How the latent ascent direction is projected for a Gaussian prior.
enum class Projection {
  kSqrtDim,  // g - (g.z) z / sqrt(d)
  kExact,    // g - (g.z) z / |z|^2, the true tangent projection
};

struct GaConfig {
  int steps = 10;
  double step_size = 0.05;
  bool project = false;
  Projection projection = Projection::kSqrtDim;

  void validate() const;
};

/// Row-wise projection of the ascent direction g at latent points z.
Tensor project_gradient(const Tensor& g, const Tensor& z, Projection mode);

/// A differentiable scalar function on the latent space, evaluated row-wise.
class LatentField {
 public:
  /// z -> w(z).
  static LatentField importance(const Mlp& importance);
  /// z -> D(G(z)).
  static LatentField critic(const Mlp& generator, const Mlp& critic);

  int dim() const { return dim_; }
  Tensor value(const Tensor& z);     // b x 1
  Tensor gradient(const Tensor& z);  // b x d

 private:
  LatentField() = default;
  void finish(ad::NodeId z, ad::NodeId out);
  Tensor run(const ad::Plan& plan, const Tensor& z);

  int dim_ = 0;
  ad::Graph graph_;
  ad::Plan value_plan_;
  ad::Plan grad_plan_;
  ad::Bindings bindings_;
  ad::Workspace workspace_;
};

/// N ascent steps z <- z + eps * g from every row of z0. Projection applies
/// only to a Gaussian prior with `cfg.project` set.
Tensor latent_ga(LatentField& field, const LatentPrior& prior, const Tensor& z0,
                 const GaConfig& cfg);

// Generic building blocks. A proposal draws n candidate rows; a ratio maps
// candidate rows to a b x 1 column of non-negative weights.
using Proposal = std::function<Tensor(std::size_t n, Rng& rng)>;
using RatioFn = std::function<Tensor(const Tensor& candidates)>;

struct Draws {
  Tensor samples;
  std::size_t proposals = 0;  // candidates examined in total
  double acceptance_rate() const;
};

/// Accepts each candidate with probability min(1, r / bound) until n are kept.
/// Throws StarvationError when `max_draws` consecutive candidates are rejected.
Draws rejection_sample(const Proposal& propose, const RatioFn& ratio, double bound, std::size_t n,
                       Rng& rng, std::size_t max_draws = kDefaultMaxDraws);

/// For each output: draw `pool` candidates, keep one with probability
/// proportional to its ratio.
Draws importance_resample(const Proposal& propose, const RatioFn& ratio, int pool, std::size_t n,
                          Rng& rng);

/// Independent-proposal Metropolis-Hastings; one chain of `chain_len`
/// states per output, returning the final state.
Draws independent_mh(const Proposal& propose, const RatioFn& ratio, int chain_len, std::size_t n,
                     Rng& rng);

/// Largest ratio over `draws` fresh candidates.
double calibrate_bound(const Proposal& propose, const RatioFn& ratio, std::size_t draws, Rng& rng);

// Latent samplers.

/// n latents accepted with probability w(z)/m.
Draws latent_rs(const Mlp& importance, const LatentPrior& prior, double cap, std::size_t n,
                Rng& rng, std::size_t max_draws = kDefaultMaxDraws);

Draws latent_rs_ga(const Mlp& importance, const LatentPrior& prior, double cap,
                   const GaConfig& cfg, std::size_t n, Rng& rng,
                   std::size_t max_draws = kDefaultMaxDraws);

// Density-ratio baselines.

/// Real-vs-fake classifier returning logits; p = sigmoid(logit).
struct RatioModel {
  Mlp classifier;
};

struct BceConfig {
  int steps = 500;
  int batch_size = 256;
  double gp_weight = 10.0;
  AdamConfig adam{1e-4, 0.5, 0.9, 1e-8};
  double divergence_limit = 1e3;

  void validate() const;
};

/// Fine-tunes a copy of the critic as a logistic real/fake classifier with
/// the gradient penalty kept.
RatioModel finetune_bce(const Mlp& critic, const Mlp& generator, const Dataset2D& data,
                        const LatentPrior& prior, const BceConfig& config, Rng& rng);

inline constexpr double kMaxClassifierProb = 1.0 - 1e-6;

/// Classifier probabilities for rows of x, in (0, 1).
Tensor classifier_prob(const RatioModel& model, const Tensor& x);
/// p / (1 - p) with p clamped to at most 1 - 1e-6.
double density_ratio(double p);
Tensor density_ratio(const RatioModel& model, const Tensor& x);

/// Ratio of generated points r(G(z)) as a function of latents.
RatioFn latent_ratio(const RatioModel& model, const Mlp& generator);

enum class Method { kRaw, kLatentRs, kLatentGa, kLatentRsGa, kDrs, kSir, kMh, kDot };

std::string_view method_name(Method m);
/// Accepts "raw", "latentRS", "latentGA", "latentRS+GA", "DRS", "SIR", "MH", "DOT"
/// and the aliases "none" and "latentrs-ga" (case-insensitive); throws
/// ConfigError otherwise.
Method parse_method(std::string_view name);

struct SamplerModels {
  LatentPrior prior;
  Mlp generator;
  std::optional<Mlp> critic;
  std::optional<Mlp> importance;
  std::optional<RatioModel> ratio;
  double cap = 3.0;
};

struct SamplerSettings {
  GaConfig ga;
  GaConfig dot{10, 0.01, false, Projection::kSqrtDim};
  int sir_pool = 10;
  int mh_chain = 10;
  std::size_t max_draws = kDefaultMaxDraws;
  std::size_t calibration_draws = 10000;
};

struct SampleBatch {
  Tensor points;  // n x 2
  Tensor latents;  // n x d
  std::size_t proposals = 0;
};

/// Draws n points with the given method. Throws ConfigError when a model the
/// method needs is absent.
SampleBatch draw_samples(Method method, const SamplerModels& models,
                         const SamplerSettings& settings, std::size_t n, Rng& rng);

}  // namespace lrgan
