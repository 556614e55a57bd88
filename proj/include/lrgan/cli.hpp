#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lrgan/metrics.hpp"
#include "lrgan/reweight.hpp"
#include "lrgan/samplers.hpp"
#include "lrgan/wgan.hpp"

namespace lrgan::cli {

inline constexpr int kFormatVersion = 1;

/// Which synthetic task a run uses. For "four_gaussians" the pretraining
/// data are the offset proposal modes and every later stage uses the real
/// four modes.
struct DatasetSpec {
  std::string kind = "gaussian_grid";  // swiss_roll | gaussian_grid | four_gaussians
  std::size_t n = 20000;
  std::optional<std::uint64_t> seed;  // defaults to one derived from the master seed
  double noise = 0.0;                 // swiss roll
  int rows = 5;                       // grid
  int cols = 5;
  double spacing = 1.0;               // nearest-mode distance
  double std = 0.05;                  // grid and four gaussians
  double offset = 0.1;                // four gaussians

  void validate() const;
};

struct EvalProtocol {
  std::size_t n = 1024;
  int repeats = 10;
  int k = 3;
  std::vector<std::string> methods = {"raw", "latentRS", "latentGA", "latentRS+GA",
                                      "DRS",  "SIR",      "MH",       "DOT"};

  void validate() const;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  LatentPrior prior;
  WganConfig pretrain;
  ReweightConfig reweight;
  BceConfig bce;
  SamplerSettings sampling;
  EvalProtocol eval;
  int heatmap_resolution = 64;

  void validate() const;
};

/// Parses a JSON run configuration. Missing keys keep their defaults;
/// unknown keys, wrong types and invalid values throw ConfigError naming
/// the offending key (or line and column for syntax errors).
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Every field written out, keys sorted.
std::string canonical_json(const RunConfig& config);
/// FNV-1a 64 of canonical_json, as 16 hex digits.
std::string config_hash(const RunConfig& config);
std::uint64_t fnv1a64(std::string_view bytes);

/// Training data for a stage. `for_pretraining` selects the proposal modes
/// of the four-Gaussian task.
Dataset2D make_dataset(const RunConfig& config, bool for_pretraining = false);

/// Stage seeds derived from the master seed.
std::uint64_t stage_seed(const RunConfig& config, std::uint64_t tag);

struct ModelBundle {
  RunConfig config;
  std::optional<Mlp> generator;
  std::optional<Mlp> critic;
  std::optional<Mlp> importance;
  std::optional<RatioModel> ratio;
  std::vector<WganLogEntry> pretrain_log;
  std::vector<ReweightLogEntry> reweight_log;
};

/// Little-endian IEEE-754 doubles as lowercase base-16.
std::string encode_hex(std::span<const double> values);
std::vector<double> decode_hex(std::string_view hex);

std::string serialize_bundle(const ModelBundle& bundle);
ModelBundle parse_bundle(std::string_view json_text);
void write_bundle(const std::filesystem::path& path, const ModelBundle& bundle);
ModelBundle read_bundle(const std::filesystem::path& path);

/// "# lrgan format_version=1 seed=<s> config_hash=<h>"
std::string provenance_line(std::uint64_t seed, const std::string& hash);

/// x,y,method,seed,wall_time_us rows after the provenance line and header.
void write_samples_csv(std::ostream& out, const Tensor& points, std::string_view method,
                       std::uint64_t seed, double us_per_sample, const std::string& provenance);
/// Reads the x and y columns of a CSV with a header row; lines starting
/// with '#' are skipped.
Tensor read_points_csv(const std::filesystem::path& path);

/// w on a resolution x resolution grid of cell centres over [-3, 3]^2
/// (Gaussian prior) or [-1, 1]^2 (uniform prior). values[i * r + j] is at
/// (z1_i, z2_j).
struct Heatmap {
  int resolution = 0;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> values;

  double coordinate(int i) const;
};

Heatmap importance_heatmap(const Mlp& importance, const LatentPrior& prior, int resolution);
/// Cells strictly greater than every 8-neighbour.
int count_local_maxima(const Heatmap& map);
/// 256-step viridis ramp, t clamped to [0, 1].
std::array<std::uint8_t, 3> viridis(double t);
std::string heatmap_svg(const Heatmap& map, const std::string& provenance);

struct CommandOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> bundle;
  std::optional<std::string> method;
  std::optional<std::size_t> n;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out = ".";
  std::optional<std::filesystem::path> fake;  // eval: evaluate this CSV
  std::optional<std::filesystem::path> real;  // eval: reference CSV instead of the dataset
  unsigned threads = 1;
};

/// LR_THREADS if set (a positive integer), otherwise the hardware concurrency.
unsigned threads_from_env();

void cmd_pretrain(const CommandOptions& opts, std::ostream& log);
void cmd_reweight(const CommandOptions& opts, std::ostream& log);
void cmd_sample(const CommandOptions& opts, std::ostream& log);
void cmd_eval(const CommandOptions& opts, std::ostream& log);
void cmd_heatmap(const CommandOptions& opts, std::ostream& log);

/// Runs fn and maps its outcome to an exit code: 0 success, 2 validation
/// error, 3 numeric or starvation error, 1 anything else. The error message
/// goes to `err`.
int run_guarded(const std::function<void()>& fn, std::ostream& err);

}  // namespace lrgan::cli
