#include <iostream>

#include <CLI11.hpp>

#include "lrgan/cli.hpp"

int main(int argc, char** argv) {
  using namespace lrgan::cli;

  CLI::App app{"Latent importance reweighting for a frozen WGAN-GP on 2-D synthetic data"};
  app.require_subcommand(1);
  CommandOptions opts;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config, "JSON run configuration");
    sub->add_option("--bundle", opts.bundle, "model bundle JSON");
    sub->add_option("--method", opts.method,
                    "raw | latentRS | latentGA | latentRS+GA | DRS | SIR | MH | DOT");
    sub->add_option("--n", opts.n, "number of samples (heatmap: grid resolution)");
    sub->add_option("--seed", opts.seed, "master seed override");
    sub->add_option("--out", opts.out, "output directory")->capture_default_str();
  };

  auto* pretrain = app.add_subcommand("pretrain", "train the WGAN-GP generator and critic");
  auto* reweight = app.add_subcommand("reweight", "train the latent importance network");
  auto* sample = app.add_subcommand("sample", "draw samples with one method");
  auto* eval = app.add_subcommand("eval", "compute EMD, precision, recall and Frechet distance");
  auto* heatmap = app.add_subcommand("heatmap", "render w over the latent plane");
  for (auto* sub : {pretrain, reweight, sample, eval, heatmap}) common(sub);
  eval->add_option("--fake", opts.fake, "evaluate this samples CSV instead of a bundle");
  eval->add_option("--real", opts.real, "reference CSV for --fake");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  return run_guarded(
      [&] {
        opts.threads = threads_from_env();
        if (*pretrain) cmd_pretrain(opts, std::cerr);
        else if (*reweight) cmd_reweight(opts, std::cerr);
        else if (*sample) cmd_sample(opts, std::cerr);
        else if (*eval) cmd_eval(opts, std::cerr);
        else cmd_heatmap(opts, std::cerr);
      },
      std::cerr);
}
