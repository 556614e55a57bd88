#include "lrgan/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <bit>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "lrgan/errors.hpp"

namespace lrgan::cli {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "config reader assumes 64-bit size_t");

constexpr std::uint64_t kPretrainTag = 1;
constexpr std::uint64_t kReweightTag = 2;
constexpr std::uint64_t kDatasetTag = 3;
constexpr std::uint64_t kBceTag = 4;
constexpr std::uint64_t kEvalRealTag = 5;
constexpr std::uint64_t kEvalFakeTag = 6;
constexpr std::uint64_t kDiagnosticsTag = 7;
constexpr std::size_t kDiagnosticDraws = 100000;

// ---- JSON field visitors -------------------------------------------------
// The same visit() functions drive parsing and canonical serialization.

std::string join(const std::string& path, const char* key) {
  return path.empty() ? std::string(key) : path + "." + key;
}

std::string_view prior_kind_name(PriorKind k) {
  return k == PriorKind::kGaussian ? "gaussian" : "uniform";
}

std::string_view projection_name(Projection p) {
  return p == Projection::kSqrtDim ? "sqrt_dim" : "exact";
}

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "must be a JSON object");
  }

  template <class T>
  void operator()(const char* key, T& value) {
    const json* v = take(key);
    if (v) read(*v, value, join(path_, key));
  }

  template <class F>
  void object(const char* key, F&& fill) {
    const json* v = take(key);
    if (!v) return;
    Reader sub(*v, join(path_, key));
    fill(sub);
    sub.finish();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (std::find(used_.begin(), used_.end(), it.key()) == used_.end()) {
        throw ConfigError("config: unknown key '" + join(path_, it.key().c_str()) + "'");
      }
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config: " : "config: '" + path_ + "' "; }

  const json* take(const char* key) {
    used_.emplace_back(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  static ConfigError type_error(const std::string& key, const char* what) {
    return ConfigError("config: '" + key + "' must be " + what);
  }

  static void read(const json& v, int& out, const std::string& key) {
    if (!v.is_number_integer()) throw type_error(key, "an integer");
    const auto x = v.get<std::int64_t>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
      throw type_error(key, "a 32-bit integer");
    }
    out = static_cast<int>(x);
  }
  static void read(const json& v, std::uint64_t& out, const std::string& key) {
    if (!v.is_number_unsigned()) throw type_error(key, "a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  static void read(const json& v, double& out, const std::string& key) {
    if (!v.is_number()) throw type_error(key, "a number");
    out = v.get<double>();
  }
  static void read(const json& v, bool& out, const std::string& key) {
    if (!v.is_boolean()) throw type_error(key, "true or false");
    out = v.get<bool>();
  }
  static void read(const json& v, std::string& out, const std::string& key) {
    if (!v.is_string()) throw type_error(key, "a string");
    out = v.get<std::string>();
  }
  static void read(const json& v, std::optional<std::uint64_t>& out, const std::string& key) {
    if (v.is_null()) {
      out.reset();
      return;
    }
    std::uint64_t x = 0;
    read(v, x, key);
    out = x;
  }
  static void read(const json& v, std::vector<std::string>& out, const std::string& key) {
    if (!v.is_array()) throw type_error(key, "an array of strings");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_string()) throw type_error(key, "an array of strings");
      out.push_back(e.get<std::string>());
    }
  }
  static void read(const json& v, PriorKind& out, const std::string& key) {
    std::string s;
    read(v, s, key);
    if (s == "gaussian") out = PriorKind::kGaussian;
    else if (s == "uniform") out = PriorKind::kUniform;
    else throw type_error(key, "\"gaussian\" or \"uniform\"");
  }
  static void read(const json& v, Projection& out, const std::string& key) {
    std::string s;
    read(v, s, key);
    if (s == "sqrt_dim") out = Projection::kSqrtDim;
    else if (s == "exact") out = Projection::kExact;
    else throw type_error(key, "\"sqrt_dim\" or \"exact\"");
  }

  const json& j_;
  std::string path_;
  std::vector<std::string> used_;
};

class Writer {
 public:
  explicit Writer(json& j) : j_(j) {}

  template <class T>
  void operator()(const char* key, const T& value) {
    if constexpr (std::is_same_v<T, PriorKind>) {
      j_[key] = prior_kind_name(value);
    } else if constexpr (std::is_same_v<T, Projection>) {
      j_[key] = projection_name(value);
    } else if constexpr (std::is_same_v<T, std::optional<std::uint64_t>>) {
      j_[key] = value ? json(*value) : json(nullptr);
    } else {
      j_[key] = value;
    }
  }

  template <class F>
  void object(const char* key, F&& fill) {
    json sub = json::object();
    Writer w(sub);
    fill(w);
    j_[key] = std::move(sub);
  }

 private:
  json& j_;
};

template <class V>
void visit(V& v, AdamConfig& c) {
  v("lr", c.lr);
  v("beta1", c.beta1);
  v("beta2", c.beta2);
  v("eps", c.eps);
}

template <class V>
void visit(V& v, WganConfig& c) {
  v("critic_steps", c.critic_steps);
  v("gp_weight", c.gp_weight);
  v("batch_size", c.batch_size);
  v("generator_steps", c.generator_steps);
  v.object("critic_adam", [&](auto& s) { visit(s, c.critic_adam); });
  v.object("generator_adam", [&](auto& s) { visit(s, c.generator_adam); });
  v("divergence_limit", c.divergence_limit);
  v("log_every", c.log_every);
  v("generator_width", c.generator_width);
  v("critic_width", c.critic_width);
}

template <class V>
void visit(V& v, ReweightConfig& c) {
  v("lambda_norm", c.lambda_norm);
  v("lambda_clip", c.lambda_clip);
  v("cap", c.cap);
  v("critic_steps", c.critic_steps);
  v("importance_steps", c.importance_steps);
  v("batch_size", c.batch_size);
  v("gp_weight", c.gp_weight);
  v.object("critic_adam", [&](auto& s) { visit(s, c.critic_adam); });
  v.object("importance_adam", [&](auto& s) { visit(s, c.importance_adam); });
  v("cycles", c.cycles);
  v("importance_width", c.importance_width);
  v("critic_width", c.critic_width);
  v("warmstart_critic_steps", c.warmstart_critic_steps);
  v("divergence_limit", c.divergence_limit);
  v("log_every", c.log_every);
}

template <class V>
void visit(V& v, BceConfig& c) {
  v("steps", c.steps);
  v("batch_size", c.batch_size);
  v("gp_weight", c.gp_weight);
  v.object("adam", [&](auto& s) { visit(s, c.adam); });
  v("divergence_limit", c.divergence_limit);
}

template <class V>
void visit(V& v, GaConfig& c) {
  v("steps", c.steps);
  v("step_size", c.step_size);
  v("project", c.project);
  v("projection", c.projection);
}

template <class V>
void visit(V& v, SamplerSettings& c) {
  v.object("ga", [&](auto& s) { visit(s, c.ga); });
  v.object("dot", [&](auto& s) { visit(s, c.dot); });
  v("sir_pool", c.sir_pool);
  v("mh_chain", c.mh_chain);
  v("max_draws", c.max_draws);
  v("calibration_draws", c.calibration_draws);
}

template <class V>
void visit(V& v, DatasetSpec& c) {
  v("kind", c.kind);
  v("n", c.n);
  v("seed", c.seed);
  v("noise", c.noise);
  v("rows", c.rows);
  v("cols", c.cols);
  v("spacing", c.spacing);
  v("std", c.std);
  v("offset", c.offset);
}

template <class V>
void visit(V& v, LatentPrior& c) {
  v("kind", c.kind);
  v("dim", c.dim);
}

template <class V>
void visit(V& v, EvalProtocol& c) {
  v("n", c.n);
  v("repeats", c.repeats);
  v("k", c.k);
  v("methods", c.methods);
}

template <class V>
void visit(V& v, RunConfig& c) {
  v("seed", c.seed);
  v.object("dataset", [&](auto& s) { visit(s, c.dataset); });
  v.object("prior", [&](auto& s) { visit(s, c.prior); });
  v.object("pretrain", [&](auto& s) { visit(s, c.pretrain); });
  v.object("reweight", [&](auto& s) { visit(s, c.reweight); });
  v.object("bce", [&](auto& s) { visit(s, c.bce); });
  v.object("sampling", [&](auto& s) { visit(s, c.sampling); });
  v.object("eval", [&](auto& s) { visit(s, c.eval); });
  v("heatmap_resolution", c.heatmap_resolution);
}

json config_to_json(const RunConfig& config) {
  RunConfig copy = config;
  json j = json::object();
  Writer w(j);
  visit(w, copy);
  return j;
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Reader r(j, "");
  visit(r, c);
  r.finish();
  c.validate();
  return c;
}

json parse_json(std::string_view text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(std::string(what) + ": JSON syntax error at line " + std::to_string(line) +
                      ", column " + std::to_string(col));
  }
}

std::string read_file(const fs::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(std::string("cannot read ") + what + " '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  out.close();
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
}

// ---- networks ------------------------------------------------------------

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kLeakyRelu: return "leaky_relu";
    case Activation::kTanh: return "tanh";
  }
  return "identity";
}

Activation parse_activation(const json& v, const std::string& where) {
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    for (Activation a : {Activation::kIdentity, Activation::kRelu, Activation::kLeakyRelu,
                         Activation::kTanh}) {
      if (s == activation_name(a)) return a;
    }
  }
  throw ConfigError("bundle: " + where + " has an unknown activation");
}

json tensor_to_json(const Tensor& t) {
  return {{"rows", t.rows()}, {"cols", t.cols()}, {"data", encode_hex(t.flat())}};
}

Tensor tensor_from_json(const json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data") ||
      !j["rows"].is_number_unsigned() || !j["cols"].is_number_unsigned() || !j["data"].is_string()) {
    throw ConfigError("bundle: " + where + " must hold rows, cols and data");
  }
  const auto rows = j["rows"].get<Eigen::Index>();
  const auto cols = j["cols"].get<Eigen::Index>();
  const auto values = decode_hex(j["data"].get<std::string>());
  if (static_cast<Eigen::Index>(values.size()) != rows * cols) {
    throw ConfigError("bundle: " + where + " data length disagrees with its shape");
  }
  Tensor t(rows, cols);
  std::copy(values.begin(), values.end(), t.flat().begin());
  return t;
}

json net_to_json(const Mlp& net) {
  json layers = json::array();
  for (const auto& l : net.params.layers) {
    layers.push_back({{"weight", tensor_to_json(l.weight)}, {"bias", tensor_to_json(l.bias)}});
  }
  return {{"widths", net.spec.widths},
          {"hidden", activation_name(net.spec.hidden)},
          {"output", activation_name(net.spec.output)},
          {"layers", std::move(layers)}};
}

Mlp net_from_json(const json& j, const std::string& name) {
  if (!j.is_object() || !j.contains("widths") || !j.contains("layers") || !j["layers"].is_array()) {
    throw ConfigError("bundle: network '" + name + "' is malformed");
  }
  Mlp net;
  for (const auto& w : j["widths"]) {
    if (!w.is_number_integer()) throw ConfigError("bundle: network '" + name + "' widths must be integers");
    net.spec.widths.push_back(w.get<int>());
  }
  net.spec.hidden = parse_activation(j.value("hidden", json()), name + ".hidden");
  net.spec.output = parse_activation(j.value("output", json()), name + ".output");
  std::size_t i = 0;
  for (const auto& l : j["layers"]) {
    const std::string where = name + ".layers[" + std::to_string(i++) + "]";
    if (!l.is_object() || !l.contains("weight") || !l.contains("bias")) {
      throw ConfigError("bundle: " + where + " needs weight and bias");
    }
    net.params.layers.push_back(
        {tensor_from_json(l["weight"], where + ".weight"), tensor_from_json(l["bias"], where + ".bias")});
  }
  check_params(net.spec, net.params);
  return net;
}

// ---- logs ----------------------------------------------------------------

json pretrain_log_json(const std::vector<WganLogEntry>& log) {
  json a = json::array();
  for (const auto& e : log) {
    a.push_back({{"step", e.step},
                 {"critic_objective", e.critic_objective},
                 {"gradient_penalty", e.gradient_penalty}});
  }
  return a;
}

json reweight_log_json(const std::vector<ReweightLogEntry>& log) {
  json a = json::array();
  for (const auto& e : log) {
    a.push_back({{"cycle", e.cycle},
                 {"weighted_emd", e.weighted_emd},
                 {"mean_weight", e.mean_weight},
                 {"ess", e.ess},
                 {"clip_rate", e.clip_rate}});
  }
  return a;
}

double number_field(const json& e, const char* key) {
  if (!e.is_object() || !e.contains(key) || !e[key].is_number()) {
    throw ConfigError(std::string("bundle: log entry lacks '") + key + "'");
  }
  return e[key].get<double>();
}

json with_provenance(const RunConfig& config, json body) {
  body["format_version"] = kFormatVersion;
  body["seed"] = config.seed;
  body["config_hash"] = config_hash(config);
  return body;
}

// ---- formatting ----------------------------------------------------------

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

// ---- command helpers -----------------------------------------------------

RunConfig resolve_config(const CommandOptions& opts, const RunConfig* fallback) {
  RunConfig c = opts.config ? load_run_config(*opts.config) : fallback ? *fallback : RunConfig{};
  if (opts.seed) c.seed = *opts.seed;
  c.validate();
  return c;
}

const fs::path& require_bundle(const CommandOptions& opts, const char* cmd) {
  if (!opts.bundle) throw ConfigError(std::string(cmd) + " needs --bundle");
  return *opts.bundle;
}

// Inputs are never overwritten: an output that resolves to the input path is refused.
bool same_file(const fs::path& a, const fs::path& b) {
  return fs::weakly_canonical(a) == fs::weakly_canonical(b);
}

SamplerModels models_of(const ModelBundle& b) {
  if (!b.generator) throw ConfigError("bundle has no generator");
  return {b.config.prior, *b.generator, b.critic, b.importance, b.ratio, b.config.reweight.cap};
}

bool needs_ratio(Method m) { return m == Method::kDrs || m == Method::kSir || m == Method::kMh; }

// Fine-tunes the ratio classifier once and caches it in a new bundle file.
void ensure_ratio(ModelBundle& b, const CommandOptions& opts, std::ostream& log) {
  if (b.ratio) return;
  if (!b.critic || !b.generator) throw ConfigError("ratio methods need a generator and a critic");
  Rng rng(stage_seed(b.config, kBceTag));
  log << "fine-tuning the density-ratio classifier (" << b.config.bce.steps << " steps)\n";
  b.ratio = finetune_bce(*b.critic, *b.generator, make_dataset(b.config), b.config.prior,
                         b.config.bce, rng);
  const fs::path cached = opts.out / "bundle.json";
  if (same_file(cached, *opts.bundle)) {
    log << "not caching the classifier: output bundle would replace the input\n";
    return;
  }
  write_bundle(cached, b);
  log << "wrote " << cached.string() << " with the cached classifier\n";
}

std::vector<Method> eval_methods(const CommandOptions& opts, const RunConfig& c) {
  std::vector<Method> out;
  if (opts.method && *opts.method != "all") {
    out.push_back(parse_method(*opts.method));
    return out;
  }
  for (const auto& name : c.eval.methods) out.push_back(parse_method(name));
  return out;
}

struct RepeatResult {
  double emd = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double frechet = 0.0;
  double us_per_sample = 0.0;
  std::size_t proposals = 0;
};

RepeatResult score(const Tensor& real, const Tensor& fake, int k) {
  RepeatResult r;
  r.emd = emd(real, fake);
  const auto pr = precision_recall(real, fake, k);
  r.precision = pr.precision;
  r.recall = pr.recall;
  r.frechet = frechet_2d(real, fake);
  return r;
}

json summary_json(const MetricSummary& m) {
  return {{"name", m.name}, {"mean", m.mean}, {"half_width", m.half_width}, {"repeats", m.repeats}};
}

// Runs task(i) for i in [0, count) on up to `threads` workers; the first
// exception is rethrown after all workers stop.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& task) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), count));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        task(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = count;
      }
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

void write_metrics(const fs::path& out, const RunConfig& c, const json& methods,
                   const std::vector<std::array<std::string, 4>>& rows, std::size_t n, int repeats) {
  json doc = with_provenance(c, {{"dataset", c.dataset.kind},
                                 {"n", n},
                                 {"repeats", repeats},
                                 {"methods", methods}});
  write_file(out / "metrics.json", doc.dump(2) + "\n");
  std::ostringstream csv;
  csv << provenance_line(c.seed, config_hash(c)) << "\n";
  csv << "dataset,method,metric,mean,half_width,repeats\n";
  for (const auto& r : rows) csv << c.dataset.kind << "," << r[0] << "," << r[1] << "," << r[2] << "," << r[3] << "\n";
  write_file(out / "metrics.csv", csv.str());
}

}  // namespace

// ---- configuration -------------------------------------------------------

void DatasetSpec::validate() const {
  if (kind != "swiss_roll" && kind != "gaussian_grid" && kind != "four_gaussians") {
    throw ConfigError("dataset: kind must be swiss_roll, gaussian_grid or four_gaussians");
  }
  if (n < 2) throw ConfigError("dataset: n must be >= 2");
  if (!(noise >= 0.0) || !(std >= 0.0) || !(offset >= 0.0)) {
    throw ConfigError("dataset: noise, std and offset must be >= 0");
  }
  if (rows < 1 || cols < 1) throw ConfigError("dataset: rows and cols must be >= 1");
  if (!(spacing > 0.0)) throw ConfigError("dataset: spacing must be > 0");
}

void EvalProtocol::validate() const {
  if (k < 1) throw ConfigError("eval: k must be >= 1");
  if (n <= static_cast<std::size_t>(k)) throw ConfigError("eval: n must exceed k");
  if (repeats < 1) throw ConfigError("eval: repeats must be >= 1");
  for (const auto& m : methods) parse_method(m);
}

void RunConfig::validate() const {
  dataset.validate();
  prior.validate();
  pretrain.validate();
  reweight.validate();
  bce.validate();
  sampling.ga.validate();
  sampling.dot.validate();
  if (sampling.sir_pool < 1 || sampling.mh_chain < 1) {
    throw ConfigError("sampling: sir_pool and mh_chain must be >= 1");
  }
  if (sampling.max_draws < 1 || sampling.calibration_draws < 1) {
    throw ConfigError("sampling: max_draws and calibration_draws must be >= 1");
  }
  eval.validate();
  if (heatmap_resolution < 2) throw ConfigError("heatmap_resolution must be >= 2");
}

RunConfig parse_run_config(std::string_view json_text) {
  return config_from_json(parse_json(json_text, "config"));
}

RunConfig load_run_config(const fs::path& path) {
  return parse_run_config(read_file(path, "config"));
}

std::string canonical_json(const RunConfig& config) { return config_to_json(config).dump(); }

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const RunConfig& config) { return hex64(fnv1a64(canonical_json(config))); }

std::uint64_t stage_seed(const RunConfig& config, std::uint64_t tag) {
  return derive_seed(config.seed, tag);
}

Dataset2D make_dataset(const RunConfig& config, bool for_pretraining) {
  const auto& d = config.dataset;
  const std::uint64_t seed = d.seed.value_or(stage_seed(config, kDatasetTag));
  if (d.kind == "swiss_roll") return sample_swiss_roll(d.n, seed, d.noise);
  if (d.kind == "gaussian_grid") return sample_gaussian_grid(d.n, d.rows, d.cols, d.spacing, d.std, seed);
  if (d.kind == "four_gaussians") {
    auto fg = sample_four_gaussians(d.n, seed, d.offset, d.std);
    if (!for_pretraining) return fg.real;
    return sample_mixture(d.n, fg.proposal_modes, d.std, derive_seed(seed, 1), "four_gaussians_proposal");
  }
  throw ConfigError("dataset: unknown kind '" + d.kind + "'");
}

// ---- bundle --------------------------------------------------------------

std::string encode_hex(std::span<const double> values) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(values.size() * 16);
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) {
      const auto byte = static_cast<unsigned>((bits >> (8 * b)) & 0xff);
      out.push_back(kDigits[byte >> 4]);
      out.push_back(kDigits[byte & 0xf]);
    }
  }
  return out;
}

std::vector<double> decode_hex(std::string_view hex) {
  if (hex.size() % 16 != 0) throw ConfigError("hex blob length must be a multiple of 16");
  auto nibble = [](char c) -> unsigned {
    if (c >= '0' && c <= '9') return static_cast<unsigned>(c - '0');
    if (c >= 'a' && c <= 'f') return static_cast<unsigned>(c - 'a' + 10);
    if (c >= 'A' && c <= 'F') return static_cast<unsigned>(c - 'A' + 10);
    throw ConfigError("hex blob contains a non-hex character");
  };
  std::vector<double> out(hex.size() / 16);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      const std::size_t at = i * 16 + 2 * static_cast<std::size_t>(b);
      const std::uint64_t byte = (nibble(hex[at]) << 4) | nibble(hex[at + 1]);
      bits |= byte << (8 * b);
    }
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

std::string serialize_bundle(const ModelBundle& b) {
  json nets = json::object();
  if (b.generator) nets["generator"] = net_to_json(*b.generator);
  if (b.critic) nets["critic"] = net_to_json(*b.critic);
  if (b.importance) nets["importance"] = net_to_json(*b.importance);
  if (b.ratio) nets["ratio"] = net_to_json(b.ratio->classifier);
  json doc = with_provenance(b.config, {{"format", "lrgan-bundle"},
                                        {"config", config_to_json(b.config)},
                                        {"networks", std::move(nets)},
                                        {"logs",
                                         {{"pretrain", pretrain_log_json(b.pretrain_log)},
                                          {"reweight", reweight_log_json(b.reweight_log)}}}});
  return doc.dump(1) + "\n";
}

ModelBundle parse_bundle(std::string_view text) {
  const json doc = parse_json(text, "bundle");
  if (!doc.is_object() || doc.value("format", "") != "lrgan-bundle") {
    throw ConfigError("bundle: not an lrgan bundle");
  }
  if (!doc.contains("format_version") || doc["format_version"] != kFormatVersion) {
    throw ConfigError("bundle: unsupported format version");
  }
  if (!doc.contains("config")) throw ConfigError("bundle: missing config");
  ModelBundle b;
  b.config = config_from_json(doc["config"]);
  if (doc.value("config_hash", "") != config_hash(b.config)) {
    throw ConfigError("bundle: config hash does not match the embedded config");
  }
  const json nets = doc.value("networks", json::object());
  if (!nets.is_object()) throw ConfigError("bundle: networks must be an object");
  for (auto it = nets.begin(); it != nets.end(); ++it) {
    const std::string& name = it.key();
    Mlp net = net_from_json(it.value(), name);
    if (name == "generator") b.generator = std::move(net);
    else if (name == "critic") b.critic = std::move(net);
    else if (name == "importance") b.importance = std::move(net);
    else if (name == "ratio") b.ratio = RatioModel{std::move(net)};
    else throw ConfigError("bundle: unknown network '" + name + "'");
  }
  const json logs = doc.value("logs", json::object());
  for (const auto& e : logs.value("pretrain", json::array())) {
    b.pretrain_log.push_back({static_cast<int>(number_field(e, "step")),
                              number_field(e, "critic_objective"),
                              number_field(e, "gradient_penalty")});
  }
  for (const auto& e : logs.value("reweight", json::array())) {
    b.reweight_log.push_back({static_cast<int>(number_field(e, "cycle")),
                              number_field(e, "weighted_emd"), number_field(e, "mean_weight"),
                              number_field(e, "ess"), number_field(e, "clip_rate")});
  }
  if (b.generator && (b.generator->spec.input_dim() != b.config.prior.dim ||
                      b.generator->spec.output_dim() != 2)) {
    throw ConfigError("bundle: generator does not match the latent prior");
  }
  if (b.importance && b.importance->spec.input_dim() != b.config.prior.dim) {
    throw ConfigError("bundle: importance network does not match the latent prior");
  }
  return b;
}

void write_bundle(const fs::path& path, const ModelBundle& bundle) {
  write_file(path, serialize_bundle(bundle));
}

ModelBundle read_bundle(const fs::path& path) { return parse_bundle(read_file(path, "bundle")); }

// ---- CSV -----------------------------------------------------------------

std::string provenance_line(std::uint64_t seed, const std::string& hash) {
  return "# lrgan format_version=" + std::to_string(kFormatVersion) + " seed=" +
         std::to_string(seed) + " config_hash=" + hash;
}

void write_samples_csv(std::ostream& out, const Tensor& points, std::string_view method,
                       std::uint64_t seed, double us_per_sample, const std::string& provenance) {
  out << provenance << "\n";
  out << "x,y,method,seed,wall_time_us\n";
  const std::string tail =
      "," + std::string(method) + "," + std::to_string(seed) + "," + format_double(us_per_sample);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    out << format_double(points(i, 0)) << "," << format_double(points(i, 1)) << tail << "\n";
  }
}

Tensor read_points_csv(const fs::path& path) {
  std::istringstream in(read_file(path, "CSV"));
  std::string line;
  std::vector<std::string> header;
  std::vector<double> xs, ys;
  int xcol = -1, ycol = -1;
  std::size_t lineno = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(s);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split(line);
    if (header.empty()) {
      header = cells;
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i] == "x") xcol = static_cast<int>(i);
        if (cells[i] == "y") ycol = static_cast<int>(i);
      }
      if (xcol < 0 || ycol < 0) throw ConfigError(path.string() + ": header needs x and y columns");
      continue;
    }
    auto parse = [&](int col) {
      if (col >= static_cast<int>(cells.size())) {
        throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": missing column");
      }
      const std::string& s = cells[static_cast<std::size_t>(col)];
      double v = 0.0;
      const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
      if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
        throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + s + "'");
      }
      return v;
    };
    xs.push_back(parse(xcol));
    ys.push_back(parse(ycol));
  }
  if (header.empty()) throw ConfigError(path.string() + ": missing header row");
  Tensor t(static_cast<Eigen::Index>(xs.size()), 2);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    t(static_cast<Eigen::Index>(i), 0) = xs[i];
    t(static_cast<Eigen::Index>(i), 1) = ys[i];
  }
  return t;
}

// ---- heatmap -------------------------------------------------------------

double Heatmap::coordinate(int i) const {
  return lo + (hi - lo) * (static_cast<double>(i) + 0.5) / static_cast<double>(resolution);
}

Heatmap importance_heatmap(const Mlp& importance, const LatentPrior& prior, int resolution) {
  if (prior.dim != 2) throw ConfigError("heatmap: needs a 2-D latent space");
  if (resolution < 2) throw ConfigError("heatmap: resolution must be >= 2");
  Heatmap map;
  map.resolution = resolution;
  map.lo = prior.kind == PriorKind::kGaussian ? -3.0 : -1.0;
  map.hi = -map.lo;
  Tensor z(static_cast<Eigen::Index>(resolution) * resolution, 2);
  for (int i = 0; i < resolution; ++i) {
    for (int j = 0; j < resolution; ++j) {
      z(i * resolution + j, 0) = map.coordinate(i);
      z(i * resolution + j, 1) = map.coordinate(j);
    }
  }
  const Tensor w = importance_forward(importance, z);
  map.values.assign(w.flat().begin(), w.flat().end());
  return map;
}

int count_local_maxima(const Heatmap& map) {
  const int r = map.resolution;
  int count = 0;
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < r; ++j) {
      const double v = map.values[static_cast<std::size_t>(i * r + j)];
      bool peak = true;
      for (int di = -1; di <= 1 && peak; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
          const int a = i + di, b = j + dj;
          if ((di == 0 && dj == 0) || a < 0 || b < 0 || a >= r || b >= r) continue;
          if (map.values[static_cast<std::size_t>(a * r + b)] >= v) {
            peak = false;
            break;
          }
        }
      }
      count += peak;
    }
  }
  return count;
}

std::array<std::uint8_t, 3> viridis(double t) {
  static constexpr std::uint32_t kRamp[256] = {
    0x440154, 0x440256, 0x450457, 0x450559, 0x46075a, 0x46085c, 0x460a5d, 0x460b5e,
    0x470d60, 0x470e61, 0x471063, 0x471164, 0x471365, 0x481467, 0x481668, 0x481769,
    0x48186a, 0x481a6c, 0x481b6d, 0x481c6e, 0x481d6f, 0x481f70, 0x482071, 0x482173,
    0x482374, 0x482475, 0x482576, 0x482677, 0x482878, 0x482979, 0x472a7a, 0x472c7a,
    0x472d7b, 0x472e7c, 0x472f7d, 0x46307e, 0x46327e, 0x46337f, 0x463480, 0x453581,
    0x453781, 0x453882, 0x443983, 0x443a83, 0x443b84, 0x433d84, 0x433e85, 0x423f85,
    0x424086, 0x424186, 0x414287, 0x414487, 0x404588, 0x404688, 0x3f4788, 0x3f4889,
    0x3e4989, 0x3e4a89, 0x3e4c8a, 0x3d4d8a, 0x3d4e8a, 0x3c4f8a, 0x3c508b, 0x3b518b,
    0x3b528b, 0x3a538b, 0x3a548c, 0x39558c, 0x39568c, 0x38588c, 0x38598c, 0x375a8c,
    0x375b8d, 0x365c8d, 0x365d8d, 0x355e8d, 0x355f8d, 0x34608d, 0x34618d, 0x33628d,
    0x33638d, 0x32648e, 0x32658e, 0x31668e, 0x31678e, 0x31688e, 0x30698e, 0x306a8e,
    0x2f6b8e, 0x2f6c8e, 0x2e6d8e, 0x2e6e8e, 0x2e6f8e, 0x2d708e, 0x2d718e, 0x2c718e,
    0x2c728e, 0x2c738e, 0x2b748e, 0x2b758e, 0x2a768e, 0x2a778e, 0x2a788e, 0x29798e,
    0x297a8e, 0x297b8e, 0x287c8e, 0x287d8e, 0x277e8e, 0x277f8e, 0x27808e, 0x26818e,
    0x26828e, 0x26828e, 0x25838e, 0x25848e, 0x25858e, 0x24868e, 0x24878e, 0x23888e,
    0x23898e, 0x238a8d, 0x228b8d, 0x228c8d, 0x228d8d, 0x218e8d, 0x218f8d, 0x21908d,
    0x21918c, 0x20928c, 0x20928c, 0x20938c, 0x1f948c, 0x1f958b, 0x1f968b, 0x1f978b,
    0x1f988b, 0x1f998a, 0x1f9a8a, 0x1e9b8a, 0x1e9c89, 0x1e9d89, 0x1f9e89, 0x1f9f88,
    0x1fa088, 0x1fa188, 0x1fa187, 0x1fa287, 0x20a386, 0x20a486, 0x21a585, 0x21a685,
    0x22a785, 0x22a884, 0x23a983, 0x24aa83, 0x25ab82, 0x25ac82, 0x26ad81, 0x27ad81,
    0x28ae80, 0x29af7f, 0x2ab07f, 0x2cb17e, 0x2db27d, 0x2eb37c, 0x2fb47c, 0x31b57b,
    0x32b67a, 0x34b679, 0x35b779, 0x37b878, 0x38b977, 0x3aba76, 0x3bbb75, 0x3dbc74,
    0x3fbc73, 0x40bd72, 0x42be71, 0x44bf70, 0x46c06f, 0x48c16e, 0x4ac16d, 0x4cc26c,
    0x4ec36b, 0x50c46a, 0x52c569, 0x54c568, 0x56c667, 0x58c765, 0x5ac864, 0x5cc863,
    0x5ec962, 0x60ca60, 0x63cb5f, 0x65cb5e, 0x67cc5c, 0x69cd5b, 0x6ccd5a, 0x6ece58,
    0x70cf57, 0x73d056, 0x75d054, 0x77d153, 0x7ad151, 0x7cd250, 0x7fd34e, 0x81d34d,
    0x84d44b, 0x86d549, 0x89d548, 0x8bd646, 0x8ed645, 0x90d743, 0x93d741, 0x95d840,
    0x98d83e, 0x9bd93c, 0x9dd93b, 0xa0da39, 0xa2da37, 0xa5db36, 0xa8db34, 0xaadc32,
    0xaddc30, 0xb0dd2f, 0xb2dd2d, 0xb5de2b, 0xb8de29, 0xbade28, 0xbddf26, 0xc0df25,
    0xc2df23, 0xc5e021, 0xc8e020, 0xcae11f, 0xcde11d, 0xd0e11c, 0xd2e21b, 0xd5e21a,
    0xd8e219, 0xdae319, 0xdde318, 0xdfe318, 0xe2e418, 0xe5e419, 0xe7e419, 0xeae51a,
    0xece51b, 0xefe51c, 0xf1e51d, 0xf4e61e, 0xf6e620, 0xf8e621, 0xfbe723, 0xfde725,
  };
  const double c = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
  const std::uint32_t rgb = kRamp[static_cast<int>(std::lround(c * 255.0))];
  return {static_cast<std::uint8_t>(rgb >> 16), static_cast<std::uint8_t>((rgb >> 8) & 0xff),
          static_cast<std::uint8_t>(rgb & 0xff)};
}

std::string heatmap_svg(const Heatmap& map, const std::string& provenance) {
  const int r = map.resolution;
  const int cell = std::max(1, 512 / r);
  const int size = cell * r;
  const auto [lo_it, hi_it] = std::minmax_element(map.values.begin(), map.values.end());
  const double lo = *lo_it, span = *hi_it - *lo_it;
  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<!-- " << provenance.substr(2) << " -->\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
      << "\" viewBox=\"0 0 " << size << " " << size << "\" shape-rendering=\"crispEdges\">\n";
  svg << "<title>importance weight over [" << format_double(map.lo) << ", "
      << format_double(map.hi) << "]^2, min " << format_double(lo) << ", max "
      << format_double(*hi_it) << "</title>\n";
  char colour[8];
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < r; ++j) {
      const double v = map.values[static_cast<std::size_t>(i * r + j)];
      const auto rgb = viridis(span > 0.0 ? (v - lo) / span : 0.0);
      std::snprintf(colour, sizeof colour, "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
      // z1 runs left to right, z2 bottom to top.
      svg << "<rect x=\"" << i * cell << "\" y=\"" << (r - 1 - j) * cell << "\" width=\"" << cell
          << "\" height=\"" << cell << "\" fill=\"" << colour << "\"/>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

// ---- commands ------------------------------------------------------------

unsigned threads_from_env() {
  const char* v = std::getenv("LR_THREADS");
  if (v == nullptr || *v == '\0') return std::max(1u, std::thread::hardware_concurrency());
  unsigned n = 0;
  const std::string_view s(v);
  const auto r = std::from_chars(s.data(), s.data() + s.size(), n);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || n == 0) {
    throw ConfigError("LR_THREADS must be a positive integer");
  }
  return n;
}

void cmd_pretrain(const CommandOptions& opts, std::ostream& log) {
  if (!opts.config) throw ConfigError("pretrain needs --config");
  const RunConfig c = resolve_config(opts, nullptr);
  WganConfig w = c.pretrain;
  w.seed = stage_seed(c, kPretrainTag);
  log << "pretraining on " << c.dataset.kind << " for " << w.generator_steps << " generator steps\n";
  auto result = pretrain(make_dataset(c, true), c.prior, w);
  ModelBundle b;
  b.config = c;
  b.generator = std::move(result.generator);
  b.critic = std::move(result.critic);
  b.pretrain_log = std::move(result.log);
  write_bundle(opts.out / "bundle.json", b);
  write_file(opts.out / "pretrain_log.json",
             with_provenance(c, {{"log", pretrain_log_json(b.pretrain_log)}}).dump(1) + "\n");
  log << "wrote " << (opts.out / "bundle.json").string() << "\n";
}

void cmd_reweight(const CommandOptions& opts, std::ostream& log) {
  const fs::path& in = require_bundle(opts, "reweight");
  const fs::path target = opts.out / "bundle.json";
  if (same_file(in, target)) throw ConfigError("reweight: --out would overwrite the input bundle");
  ModelBundle b = read_bundle(in);
  if (!b.generator) throw ConfigError("reweight: bundle has no generator");
  b.config = resolve_config(opts, &b.config);
  ReweightConfig rc = b.config.reweight;
  rc.seed = stage_seed(b.config, kReweightTag);
  if (!b.critic) log << "no critic in bundle: warm-starting a fresh one\n";
  log << "training the importance network for " << rc.cycles << " cycles\n";
  auto result = train_importance(*b.generator, b.critic, make_dataset(b.config), b.config.prior, rc);
  b.importance = std::move(result.importance);
  if (!b.critic) b.critic = std::move(result.critic);
  b.ratio.reset();
  b.reweight_log = std::move(result.log);
  Rng rng(stage_seed(b.config, kDiagnosticsTag));
  const auto w = ReweightedPrior{b.config.prior, *b.importance, rc.cap}.sample_weights(kDiagnosticDraws, rng);
  double mean = 0.0;
  for (double v : w) mean += v / static_cast<double>(w.size());
  log << "E[w] = " << mean << ", ESS = " << effective_sample_size(w) << "\n";
  write_bundle(target, b);
  write_file(opts.out / "reweight_log.json",
             with_provenance(b.config, {{"log", reweight_log_json(b.reweight_log)}}).dump(1) + "\n");
  log << "wrote " << target.string() << "\n";
}

void cmd_sample(const CommandOptions& opts, std::ostream& log) {
  const fs::path& in = require_bundle(opts, "sample");
  if (!opts.method) throw ConfigError("sample needs --method");
  ModelBundle b = read_bundle(in);
  const Method method = parse_method(*opts.method);
  const std::size_t n = opts.n.value_or(b.config.eval.n);
  const std::uint64_t seed = opts.seed.value_or(b.config.seed);
  if (needs_ratio(method)) ensure_ratio(b, opts, log);
  const SamplerModels models = models_of(b);

  Rng rng(seed);
  const auto t0 = std::chrono::steady_clock::now();
  const SampleBatch batch = draw_samples(method, models, b.config.sampling, n, rng);
  const double us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
  const double per_sample = n == 0 ? 0.0 : us / static_cast<double>(n);

  const std::string hash = config_hash(b.config);
  std::ostringstream csv;
  write_samples_csv(csv, batch.points, method_name(method), seed, per_sample, provenance_line(seed, hash));
  write_file(opts.out / "samples.csv", csv.str());

  json stats = {{"method", method_name(method)},
                {"n", n},
                {"proposals", batch.proposals},
                {"wall_time_us_per_sample", per_sample},
                {"format_version", kFormatVersion},
                {"seed", seed},
                {"config_hash", hash}};
  if (n > 0) stats["acceptance_rate"] = static_cast<double>(n) / static_cast<double>(batch.proposals);
  if ((method == Method::kLatentRs || method == Method::kLatentRsGa) && b.importance) {
    Rng drng(stage_seed(b.config, kDiagnosticsTag));
    const double mw = mean_weight({b.config.prior, *b.importance, models.cap}, kDiagnosticDraws, drng);
    stats["expected_acceptance_rate"] = mw / models.cap;
    log << "acceptance rate " << stats.value("acceptance_rate", 0.0) << " (mean w / m = " << mw / models.cap
        << ")\n";
  }
  write_file(opts.out / "sample_stats.json", stats.dump(1) + "\n");
  log << "wrote " << n << " samples to " << (opts.out / "samples.csv").string() << "\n";
}

void cmd_eval(const CommandOptions& opts, std::ostream& log) {
  if (opts.fake) {
    std::optional<ModelBundle> b;
    if (opts.bundle) b = read_bundle(*opts.bundle);
    const RunConfig c = resolve_config(opts, b ? &b->config : nullptr);
    const Tensor fake = read_points_csv(*opts.fake);
    Tensor real;
    if (opts.real) {
      real = read_points_csv(*opts.real);
    } else {
      RunConfig rc = c;
      rc.dataset.n = static_cast<std::size_t>(fake.rows());
      rc.dataset.seed = stage_seed(c, kEvalRealTag);
      real = make_dataset(rc).points;
    }
    if (real.rows() != fake.rows()) throw ConfigError("eval: real and fake sets differ in size");
    if (fake.rows() <= c.eval.k) throw ConfigError("eval: need more than k points");
    const RepeatResult r = score(real, fake, c.eval.k);
    json metrics = json::array();
    std::vector<std::array<std::string, 4>> rows;
    for (const auto& [name, v] : {std::pair{"emd", r.emd}, {"precision", r.precision},
                                  {"recall", r.recall}, {"frechet", r.frechet}}) {
      metrics.push_back(summary_json({name, v, 0.0, 1}));
      rows.push_back({"csv", name, format_double(v), "0,1"});
      log << name << " " << v << "\n";
    }
    write_metrics(opts.out, c, json::array({{{"method", "csv"}, {"metrics", metrics}}}), rows,
                  static_cast<std::size_t>(fake.rows()), 1);
    return;
  }

  const fs::path& in = require_bundle(opts, "eval");
  ModelBundle b = read_bundle(in);
  b.config = resolve_config(opts, &b.config);
  const RunConfig& c = b.config;
  const auto methods = eval_methods(opts, c);
  const std::size_t n = opts.n.value_or(c.eval.n);
  if (n <= static_cast<std::size_t>(c.eval.k)) throw ConfigError("eval: --n must exceed k");
  const int repeats = c.eval.repeats;
  for (Method m : methods) {
    if (needs_ratio(m)) {
      ensure_ratio(b, opts, log);
      break;
    }
  }
  const SamplerModels models = models_of(b);

  // Reference sets are shared by every method.
  std::vector<Tensor> reals(static_cast<std::size_t>(repeats));
  for (int r = 0; r < repeats; ++r) {
    RunConfig rc = c;
    rc.dataset.n = n;
    rc.dataset.seed = derive_seed(stage_seed(c, kEvalRealTag), static_cast<std::uint64_t>(r));
    reals[static_cast<std::size_t>(r)] = make_dataset(rc).points;
  }

  std::vector<RepeatResult> results(methods.size() * static_cast<std::size_t>(repeats));
  parallel_for(results.size(), opts.threads, [&](std::size_t task) {
    const std::size_t mi = task / static_cast<std::size_t>(repeats);
    const std::size_t rep = task % static_cast<std::size_t>(repeats);
    Rng rng(derive_seed(derive_seed(c.seed, kEvalFakeTag + 100 * (mi + 1)), rep));
    const auto t0 = std::chrono::steady_clock::now();
    const SampleBatch batch = draw_samples(methods[mi], models, c.sampling, n, rng);
    const double us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
    RepeatResult r = score(reals[rep], batch.points, c.eval.k);
    r.us_per_sample = us / static_cast<double>(n);
    r.proposals = batch.proposals;
    results[task] = r;
  });

  std::optional<double> ess;
  if (b.importance) {
    Rng rng(stage_seed(c, kDiagnosticsTag));
    ess = effective_sample_size(ReweightedPrior{c.prior, *b.importance, models.cap}.sample_weights(kDiagnosticDraws, rng));
  }

  json out_methods = json::array();
  std::vector<std::array<std::string, 4>> rows;
  log << std::left << std::setw(12) << "method" << std::setw(22) << "EMD" << std::setw(22)
      << "precision" << std::setw(22) << "recall" << "us/sample\n";
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    std::vector<double> emds, precs, recs, frs, times;
    std::size_t proposals = 0;
    for (int r = 0; r < repeats; ++r) {
      const auto& x = results[mi * static_cast<std::size_t>(repeats) + static_cast<std::size_t>(r)];
      emds.push_back(x.emd);
      precs.push_back(x.precision);
      recs.push_back(x.recall);
      frs.push_back(x.frechet);
      times.push_back(x.us_per_sample);
      proposals += x.proposals;
    }
    const std::string name(method_name(methods[mi]));
    MetricsReport report;
    report.metrics = {summarize("emd", emds), summarize("precision", precs),
                      summarize("recall", recs), summarize("frechet", frs)};
    report.wall_time_us = summarize("wall_time_us", times);
    report.acceptance_rate = static_cast<double>(n * static_cast<std::size_t>(repeats)) /
                             static_cast<double>(proposals);
    const bool latent = methods[mi] == Method::kLatentRs || methods[mi] == Method::kLatentGa ||
                        methods[mi] == Method::kLatentRsGa;
    if (latent) report.ess = ess;

    json metrics = json::array();
    for (const auto& m : report.metrics) {
      metrics.push_back(summary_json(m));
      rows.push_back({name, m.name, format_double(m.mean), format_double(m.half_width) + "," + std::to_string(m.repeats)});
    }
    rows.push_back({name, "wall_time_us", format_double(report.wall_time_us->mean),
                    format_double(report.wall_time_us->half_width) + "," + std::to_string(repeats)});
    rows.push_back({name, "acceptance_rate", format_double(*report.acceptance_rate), "0,1"});
    json entry = {{"method", name},
                  {"metrics", metrics},
                  {"wall_time_us", summary_json(*report.wall_time_us)},
                  {"acceptance_rate", *report.acceptance_rate}};
    if (report.ess) {
      entry["ess"] = *report.ess;
      rows.push_back({name, "ess", format_double(*report.ess), "0,1"});
    }
    out_methods.push_back(entry);

    auto cell = [](const MetricSummary& m) {
      std::ostringstream s;
      s << std::setprecision(4) << m.mean << " +- " << m.half_width;
      return s.str();
    };
    log << std::setw(12) << name << std::setw(22) << cell(report.metrics[0]) << std::setw(22)
        << cell(report.metrics[1]) << std::setw(22) << cell(report.metrics[2])
        << report.wall_time_us->mean << "\n";
  }
  write_metrics(opts.out, c, out_methods, rows, n, repeats);
  log << "wrote " << (opts.out / "metrics.json").string() << "\n";
}

void cmd_heatmap(const CommandOptions& opts, std::ostream& log) {
  const ModelBundle b = read_bundle(require_bundle(opts, "heatmap"));
  if (!b.importance) throw ConfigError("heatmap: bundle has no importance network");
  const int resolution = opts.n ? static_cast<int>(std::min<std::size_t>(*opts.n, 4096))
                                : b.config.heatmap_resolution;
  const Heatmap map = importance_heatmap(*b.importance, b.config.prior, resolution);
  const std::string prov = provenance_line(b.config.seed, config_hash(b.config));
  std::ostringstream csv;
  csv << prov << "\n" << "z1,z2,w\n";
  for (int i = 0; i < resolution; ++i) {
    for (int j = 0; j < resolution; ++j) {
      csv << format_double(map.coordinate(i)) << "," << format_double(map.coordinate(j)) << ","
          << format_double(map.values[static_cast<std::size_t>(i * resolution + j)]) << "\n";
    }
  }
  write_file(opts.out / "heatmap.csv", csv.str());
  write_file(opts.out / "heatmap.svg", heatmap_svg(map, prov));
  log << "heatmap " << resolution << "x" << resolution << ", " << count_local_maxima(map)
      << " local maxima\n";
}

int run_guarded(const std::function<void()>& fn, std::ostream& err) {
  try {
    fn();
    return 0;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace lrgan::cli
