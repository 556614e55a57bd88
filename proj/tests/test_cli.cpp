#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "lrgan/cli.hpp"
#include "lrgan/errors.hpp"
#include "oracles.hpp"

using namespace lrgan;
using namespace lrgan::cli;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("lrgan_test_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::uint64_t bits(double v) {
  std::uint64_t b;
  std::memcpy(&b, &v, sizeof b);
  return b;
}

RunConfig tiny_config() {
  return parse_run_config(R"({
    "seed": 11,
    "dataset": {"kind": "gaussian_grid", "n": 1000},
    "pretrain": {"generator_steps": 20, "generator_width": 8, "critic_width": 8, "batch_size": 32},
    "reweight": {"cycles": 10, "importance_width": 8, "batch_size": 32},
    "bce": {"steps": 5, "batch_size": 32},
    "eval": {"n": 64, "repeats": 2},
    "heatmap_resolution": 8
  })");
}

Heatmap grid_map(int r, const std::vector<double>& values) {
  Heatmap m;
  m.resolution = r;
  m.lo = -1.0;
  m.hi = 1.0;
  m.values = values;
  return m;
}

}  // namespace

TEST_CASE("hex encoding is little-endian and bit-exact") {
  const std::vector<double> one{1.0};
  // 1.0 = 0x3ff0000000000000, least significant byte first.
  CHECK(encode_hex(one) == "000000000000f03f");

  const std::vector<double> values{0.0,
                                   -0.0,
                                   1.0 / 3.0,
                                   -2.5e-300,
                                   std::numeric_limits<double>::denorm_min(),
                                   std::numeric_limits<double>::infinity(),
                                   -std::numeric_limits<double>::infinity(),
                                   std::numeric_limits<double>::quiet_NaN(),
                                   std::numeric_limits<double>::max()};
  const auto back = decode_hex(encode_hex(values));
  REQUIRE(back.size() == values.size());
  for (std::size_t i = 0; i < values.size(); ++i) CHECK(bits(back[i]) == bits(values[i]));

  CHECK(decode_hex("").empty());
  CHECK(decode_hex("000000000000F03F")[0] == 1.0);
  CHECK_THROWS_AS(decode_hex("00"), ConfigError);
  CHECK_THROWS_AS(decode_hex("000000000000f03g"), ConfigError);
}

TEST_CASE("config parsing keeps defaults and rejects bad input") {
  const RunConfig d = parse_run_config("{}");
  CHECK(d.seed == 0);
  CHECK(d.dataset.kind == "gaussian_grid");
  CHECK(d.reweight.cap == RunConfig{}.reweight.cap);
  CHECK(d.eval.methods.size() == 8);

  const RunConfig c = parse_run_config(
      R"({"seed": 5, "prior": {"kind": "uniform", "dim": 3}, "reweight": {"critic_adam": {"lr": 0.01}},
          "sampling": {"ga": {"projection": "exact", "project": true}}, "dataset": {"seed": null}})");
  CHECK(c.seed == 5);
  CHECK(c.prior.kind == PriorKind::kUniform);
  CHECK(c.prior.dim == 3);
  CHECK(c.reweight.critic_adam.lr == 0.01);
  CHECK(c.reweight.critic_adam.beta2 == RunConfig{}.reweight.critic_adam.beta2);
  CHECK(c.sampling.ga.projection == Projection::kExact);
  CHECK(c.sampling.ga.project);
  CHECK_FALSE(c.dataset.seed.has_value());

  auto message = [](const std::string& text) {
    try {
      parse_run_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message(R"({"reweight": {"lamda_norm": 1}})").find("reweight.lamda_norm") != std::string::npos);
  CHECK(message(R"({"pretrain": {"batch_size": 1.5}})").find("pretrain.batch_size") != std::string::npos);
  CHECK(message(R"({"seed": -1})").find("seed") != std::string::npos);
  CHECK(message(R"({"prior": {"kind": "laplace"}})").find("prior.kind") != std::string::npos);
  CHECK(message("{\n  \"seed\": 1,\n  \"n\" 3\n}").find("line 3") != std::string::npos);
  CHECK_FALSE(message(R"({"dataset": {"kind": "moons"}})").empty());
  CHECK_FALSE(message(R"({"eval": {"methods": ["latentRS", "GAN"]}})").empty());
  CHECK_FALSE(message(R"({"reweight": {"cap": 0}})").empty());
  CHECK_FALSE(message("[1, 2]").empty());
}

TEST_CASE("config hash is stable and sensitive") {
  const RunConfig a = tiny_config();
  CHECK(config_hash(a).size() == 16);
  CHECK(config_hash(a) == config_hash(parse_run_config(canonical_json(a))));
  CHECK(canonical_json(a) == canonical_json(parse_run_config(canonical_json(a))));
  RunConfig b = a;
  b.reweight.lambda_clip += 1e-9;
  CHECK(config_hash(a) != config_hash(b));
  // FNV-1a 64 reference values.
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("datasets follow the config") {
  RunConfig c = tiny_config();
  const auto a = make_dataset(c);
  CHECK(a.size() == 1000);
  CHECK(make_dataset(c).points.matrix() == a.points.matrix());
  c.seed += 1;
  CHECK(make_dataset(c).points.matrix() != a.points.matrix());
  c.dataset.seed = 99;
  const auto fixed = make_dataset(c);
  c.seed += 1;
  CHECK(make_dataset(c).points.matrix() == fixed.points.matrix());

  c.dataset.kind = "four_gaussians";
  const auto real = make_dataset(c, false);
  const auto proposal = make_dataset(c, true);
  // Proposal modes sit at the offset from the real ones, so the means differ.
  const double shift = (proposal.points.matrix().colwise().mean() -
                        real.points.matrix().colwise().mean()).norm();
  CHECK(shift > 0.5 * c.dataset.offset);
}

TEST_CASE("bundle round trip is lossless") {
  TempDir dir;
  CommandOptions opts;
  opts.config = dir.path / "tiny.json";
  spit(*opts.config, canonical_json(tiny_config()));
  opts.out = dir.path / "a";
  std::ostringstream log;
  cmd_pretrain(opts, log);

  const ModelBundle b = read_bundle(dir.path / "a" / "bundle.json");
  REQUIRE(b.generator.has_value());
  REQUIRE(b.critic.has_value());
  CHECK_FALSE(b.importance.has_value());
  CHECK_FALSE(b.pretrain_log.empty());

  const ModelBundle again = parse_bundle(serialize_bundle(b));
  CHECK(again.generator->params == b.generator->params);
  CHECK(again.critic->params == b.critic->params);
  CHECK(again.generator->spec.widths == b.generator->spec.widths);
  CHECK(again.pretrain_log.size() == b.pretrain_log.size());
  CHECK(again.pretrain_log.back().critic_objective == b.pretrain_log.back().critic_objective);
  CHECK(serialize_bundle(again) == serialize_bundle(b));

  std::string tampered = serialize_bundle(b);
  const auto at = tampered.find("\"generator_steps\": 20");
  REQUIRE(at != std::string::npos);
  tampered.replace(at, 21, "\"generator_steps\": 21");
  CHECK_THROWS_AS(parse_bundle(tampered), ConfigError);
  CHECK_THROWS_AS(parse_bundle("{\"format\": \"other\"}"), ConfigError);
}

TEST_CASE("samples CSV round trip") {
  const Tensor pts = Tensor::from_rows({{0.1, -2.5}, {1e-17, 3.0}, {-0.0, 123456.789}});
  std::ostringstream out;
  write_samples_csv(out, pts, "latentRS", 4, 1.5, provenance_line(4, "00ff"));
  const std::string text = out.str();
  CHECK(text.rfind("# lrgan format_version=1 seed=4 config_hash=00ff\nx,y,method,seed,wall_time_us\n", 0) == 0);
  CHECK(text.find("0.1,-2.5,latentRS,4,1.5\n") != std::string::npos);

  TempDir dir;
  spit(dir.path / "s.csv", text);
  const Tensor back = read_points_csv(dir.path / "s.csv");
  CHECK(back.matrix() == pts.matrix());

  std::ostringstream empty;
  write_samples_csv(empty, Tensor(0, 2), "raw", 1, 0.0, provenance_line(1, "0"));
  spit(dir.path / "e.csv", empty.str());
  CHECK(read_points_csv(dir.path / "e.csv").rows() == 0);

  spit(dir.path / "bad.csv", "x,y\n1,oops\n");
  CHECK_THROWS_AS(read_points_csv(dir.path / "bad.csv"), ConfigError);
  spit(dir.path / "nohdr.csv", "a,b\n1,2\n");
  CHECK_THROWS_AS(read_points_csv(dir.path / "nohdr.csv"), ConfigError);
}

TEST_CASE("local maxima are strict over 8 neighbours") {
  CHECK(count_local_maxima(grid_map(3, std::vector<double>(9, 1.0))) == 0);
  CHECK(count_local_maxima(grid_map(3, {0, 0, 0, 0, 1, 0, 0, 0, 0})) == 1);
  // Diagonal neighbours count: 2 at (0,0) beats nothing at (1,1)=3.
  CHECK(count_local_maxima(grid_map(3, {2, 0, 0, 0, 3, 0, 0, 0, 0})) == 1);
  // Corner peaks, centre valley.
  CHECK(count_local_maxima(grid_map(3, {5, 1, 5, 1, 0, 1, 5, 1, 5})) == 4);
  // A plateau of two equal cells is not a strict maximum.
  CHECK(count_local_maxima(grid_map(2, {1, 1, 0, 0})) == 0);

  // Brute-force oracle on random maps.
  Rng rng(17);
  std::uniform_int_distribution<int> level(0, 4);
  for (int trial = 0; trial < 50; ++trial) {
    const int r = 5;
    std::vector<double> v(static_cast<std::size_t>(r * r));
    for (auto& x : v) x = level(rng);
    int expected = 0;
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < r; ++j) {
        bool peak = true;
        for (int a = std::max(0, i - 1); a <= std::min(r - 1, i + 1); ++a) {
          for (int b = std::max(0, j - 1); b <= std::min(r - 1, j + 1); ++b) {
            if ((a != i || b != j) && v[a * r + b] >= v[i * r + j]) peak = false;
          }
        }
        expected += peak;
      }
    }
    CHECK(count_local_maxima(grid_map(r, v)) == expected);
  }
}

TEST_CASE("heatmap grid and rendering") {
  // Constant importance network: all weights zero, output bias 2.
  Mlp net{default_importance_spec(2, 4), {}};
  net.params = mlp_init(net.spec, 1);
  for (Tensor* t : net.params.tensors()) t->matrix().setZero();
  net.params.layers.back().bias(0, 0) = 2.0;

  const Heatmap map = importance_heatmap(net, LatentPrior{}, 6);
  CHECK(map.values.size() == 36);
  CHECK(map.lo == -3.0);
  CHECK(map.hi == 3.0);
  CHECK(map.coordinate(0) == doctest::Approx(-2.5));
  CHECK(map.coordinate(5) == doctest::Approx(2.5));
  for (double v : map.values) CHECK(v == doctest::Approx(2.0));
  CHECK(count_local_maxima(map) == 0);
  CHECK(importance_heatmap(net, {PriorKind::kUniform, 2}, 4).hi == 1.0);
  CHECK_THROWS_AS(importance_heatmap(net, {PriorKind::kGaussian, 3}, 4), ConfigError);

  const std::string svg = heatmap_svg(map, provenance_line(1, "ab"));
  CHECK(svg.find("<!-- lrgan format_version=1 seed=1 config_hash=ab -->") != std::string::npos);
  std::size_t rects = 0;
  for (auto at = svg.find("<rect"); at != std::string::npos; at = svg.find("<rect", at + 1)) ++rects;
  CHECK(rects == 36);

  CHECK(viridis(0.0) == std::array<std::uint8_t, 3>{0x44, 0x01, 0x54});
  CHECK(viridis(1.0) == std::array<std::uint8_t, 3>{0xfd, 0xe7, 0x25});
  CHECK(viridis(-3.0) == viridis(0.0));
  CHECK(viridis(7.0) == viridis(1.0));
  CHECK(viridis(std::nan("")) == viridis(0.0));
}

TEST_CASE("run_guarded maps errors to exit codes") {
  std::ostringstream err;
  CHECK(run_guarded([] {}, err) == 0);
  CHECK(run_guarded([] { throw ConfigError("c"); }, err) == 2);
  CHECK(run_guarded([] { throw ContractError("c"); }, err) == 2);
  CHECK(run_guarded([] { throw NumericError("n"); }, err) == 3);
  CHECK(run_guarded([] { throw StarvationError("s"); }, err) == 3);
  CHECK(run_guarded([] { throw std::runtime_error("x"); }, err) == 1);
  CHECK(err.str().find("numeric error: s") != std::string::npos);
}

TEST_CASE("LR_THREADS parsing") {
  ::setenv("LR_THREADS", "3", 1);
  CHECK(threads_from_env() == 3);
  ::setenv("LR_THREADS", "0", 1);
  CHECK_THROWS_AS(threads_from_env(), ConfigError);
  ::setenv("LR_THREADS", "2x", 1);
  CHECK_THROWS_AS(threads_from_env(), ConfigError);
  ::unsetenv("LR_THREADS");
  CHECK(threads_from_env() >= 1);
}

TEST_CASE("pipeline from pretraining to metrics") {
  TempDir dir;
  CommandOptions opts;
  opts.config = dir.path / "tiny.json";
  spit(*opts.config, canonical_json(tiny_config()));
  opts.out = dir.path / "pre";
  std::ostringstream log;
  cmd_pretrain(opts, log);
  CHECK(fs::exists(dir.path / "pre" / "pretrain_log.json"));

  CommandOptions rw;
  rw.bundle = dir.path / "pre" / "bundle.json";
  rw.out = dir.path / "pre";
  CHECK_THROWS_AS(cmd_reweight(rw, log), ConfigError);
  rw.out = dir.path / "rw";
  cmd_reweight(rw, log);
  const ModelBundle b = read_bundle(dir.path / "rw" / "bundle.json");
  REQUIRE(b.importance.has_value());
  CHECK(b.reweight_log.size() >= 2);
  CHECK(read_bundle(dir.path / "pre" / "bundle.json").critic->params == b.critic->params);

  CommandOptions s;
  s.bundle = dir.path / "rw" / "bundle.json";
  s.method = "latentRS";
  s.n = 300;
  s.out = dir.path / "s";
  cmd_sample(s, log);
  CHECK(read_points_csv(dir.path / "s" / "samples.csv").rows() == 300);
  // Same seed, same samples.
  const std::string first = slurp(dir.path / "s" / "samples.csv");
  cmd_sample(s, log);
  auto strip_times = [](const std::string& text) {
    std::istringstream in(text);
    std::string line, out;
    while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
    return out;
  };
  CHECK(strip_times(slurp(dir.path / "s" / "samples.csv")) == strip_times(first));

  s.n = 0;
  s.method = "raw";
  cmd_sample(s, log);
  CHECK(read_points_csv(dir.path / "s" / "samples.csv").rows() == 0);

  s.n = 50;
  s.method = "SIR";
  cmd_sample(s, log);
  CHECK(read_bundle(dir.path / "s" / "bundle.json").ratio.has_value());
  s.method = "GAN";
  CHECK_THROWS_AS(cmd_sample(s, log), ConfigError);

  CommandOptions e;
  e.bundle = dir.path / "rw" / "bundle.json";
  e.method = "latentRS";
  e.out = dir.path / "e";
  e.threads = 2;
  cmd_eval(e, log);
  const std::string csv = slurp(dir.path / "e" / "metrics.csv");
  CHECK(csv.find("dataset,method,metric,mean,half_width,repeats\n") != std::string::npos);
  CHECK(csv.find("gaussian_grid,latentRS,emd,") != std::string::npos);
  CHECK(csv.find("gaussian_grid,latentRS,ess,") != std::string::npos);

  CommandOptions h;
  h.bundle = dir.path / "rw" / "bundle.json";
  h.out = dir.path / "h";
  cmd_heatmap(h, log);
  const std::string heat = slurp(dir.path / "h" / "heatmap.csv");
  CHECK(std::count(heat.begin(), heat.end(), '\n') == 2 + 8 * 8);
  CHECK(heat.find("\nz1,z2,w\n") != std::string::npos);
  CHECK(fs::exists(dir.path / "h" / "heatmap.svg"));
}
