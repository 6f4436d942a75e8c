#include "fedbio/cli/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <boost/uuid/detail/sha1.hpp>

#include "fedbio/noisylabel/weighted_erm.hpp"

namespace fedbio {
namespace {

namespace pt = boost::property_tree;

const std::vector<std::string> kSections = {"run", "problem", "federation", "estimator", "sweep"};

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

class Reader {
 public:
  Reader(const pt::ptree& tree, ExperimentConfig& cfg) : tree_(tree), cfg_(cfg) {}

  bool has(const std::string& section, const std::string& key) const {
    const auto sec = tree_.get_child_optional(section);
    return sec && sec->get_child_optional(pt::ptree::path_type(key, '\0'));
  }

  std::optional<std::string> raw(const std::string& section, const std::string& key) {
    used_.insert({section, key});
    if (!has(section, key)) return std::nullopt;
    return trim(tree_.get_child(section).get_child(pt::ptree::path_type(key, '\0')).data());
  }

  double real(const std::string& section, const std::string& key, double def) {
    double v = def;
    if (auto s = raw(section, key)) v = parse_real(section, key, *s);
    record(section, key, format_double(v));
    return v;
  }

  std::int64_t integer(const std::string& section, const std::string& key, std::int64_t def) {
    std::int64_t v = def;
    if (auto s = raw(section, key)) v = parse_int(section, key, *s);
    record(section, key, std::to_string(v));
    return v;
  }

  std::uint64_t seed(const std::string& section, const std::string& key, std::uint64_t def) {
    std::uint64_t v = def;
    if (auto s = raw(section, key)) {
      const auto res = std::from_chars(s->data(), s->data() + s->size(), v);
      if (res.ec != std::errc() || res.ptr != s->data() + s->size()) bad(section, key, *s, "a non-negative integer");
    }
    record(section, key, std::to_string(v));
    return v;
  }

  bool flag(const std::string& section, const std::string& key, bool def) {
    bool v = def;
    if (auto s = raw(section, key)) {
      if (*s == "true" || *s == "1" || *s == "yes") {
        v = true;
      } else if (*s == "false" || *s == "0" || *s == "no") {
        v = false;
      } else {
        bad(section, key, *s, "true or false");
      }
    }
    record(section, key, v ? "true" : "false");
    return v;
  }

  std::string choice(const std::string& section, const std::string& key, const std::string& def,
                     const std::vector<std::string>& allowed) {
    std::string v = def;
    if (auto s = raw(section, key)) v = *s;
    if (std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : " | ") + a;
      bad(section, key, v, list);
    }
    record(section, key, v);
    return v;
  }

  std::vector<double> reals(const std::string& section, const std::string& key, const std::vector<double>& def) {
    std::vector<double> v = def;
    if (auto s = raw(section, key)) {
      v.clear();
      std::stringstream ss(*s);
      std::string item;
      while (std::getline(ss, item, ',')) v.push_back(parse_real(section, key, trim(item)));
      if (v.empty()) bad(section, key, *s, "a comma-separated list of numbers");
    }
    std::string text;
    for (double x : v) text += (text.empty() ? "" : ", ") + format_double(x);
    record(section, key, text);
    return v;
  }

  /// Rejects every key that was never read.
  void reject_unused(const std::string& context) const {
    if (!tree_.data().empty()) throw ConfigError("config: unexpected top-level value");
    for (const auto& [section, node] : tree_) {
      if (std::find(kSections.begin(), kSections.end(), section) == kSections.end()) {
        throw ConfigError("config: unknown section [" + section + "]");
      }
      for (const auto& [key, value] : node) {
        if (!used_.count({section, key})) {
          throw ConfigError("config: unknown key '" + key + "' in [" + section + "]" + context);
        }
      }
    }
  }

 private:
  [[noreturn]] static void bad(const std::string& section, const std::string& key, const std::string& value,
                               const std::string& expected) {
    throw ConfigError("config: [" + section + "] " + key + " = '" + value + "', expected " + expected);
  }

  static double parse_real(const std::string& section, const std::string& key, const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) bad(section, key, s, "a finite number");
    return v;
  }

  static std::int64_t parse_int(const std::string& section, const std::string& key, const std::string& s) {
    std::int64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) bad(section, key, s, "an integer");
    return v;
  }

  void record(const std::string& section, const std::string& key, std::string value) {
    cfg_.resolved.push_back({section, key, std::move(value)});
  }

  const pt::ptree& tree_;
  ExperimentConfig& cfg_;
  std::set<std::pair<std::string, std::string>> used_;
};

void read_problem(Reader& in, ExperimentConfig& cfg) {
  auto& p = cfg.problem;
  const auto kind = in.choice("problem", "kind", "quadratic", {"quadratic", "noisy_label"});
  if (kind == "quadratic") {
    p.kind = ProblemKind::kQuadratic;
    auto& q = p.quadratic;
    q.outer_dim = in.integer("problem", "outer_dim", q.outer_dim);
    q.inner_dim = in.integer("problem", "inner_dim", q.inner_dim);
    q.clients = in.integer("problem", "clients", q.clients);
    q.spectrum = in.choice("problem", "spectrum", "uniform", {"uniform", "low_rank"}) == "uniform"
                     ? QuadraticSpectrum::kUniform
                     : QuadraticSpectrum::kLowRank;
    q.mu = in.real("problem", "mu", q.mu);
    q.smooth = in.real("problem", "smooth", q.smooth);
    q.rank = in.integer("problem", "rank", q.rank);
    q.dominant = in.real("problem", "dominant", q.dominant);
    q.cross_scale = in.real("problem", "cross_scale", q.cross_scale);
    q.outer_reg = in.real("problem", "outer_reg", q.outer_reg);
    q.seed = in.seed("problem", "seed", cfg.seed);
    if (q.outer_dim < 1 || q.inner_dim < 1 || q.clients < 1) throw ConfigError("config: quadratic dimensions must be positive");
  } else {
    p.kind = ProblemKind::kNoisyLabel;
    auto& b = p.blobs;
    b.clients = in.integer("problem", "clients", b.clients);
    b.samples_per_client = in.integer("problem", "samples_per_client", b.samples_per_client);
    b.validation_samples = in.integer("problem", "validation_samples", b.validation_samples);
    b.test_samples = in.integer("problem", "test_samples", b.test_samples);
    b.informative_dims = in.integer("problem", "informative_dims", b.informative_dims);
    b.noise_dims = in.integer("problem", "noise_dims", b.noise_dims);
    b.classes = static_cast<int>(in.integer("problem", "classes", b.classes));
    b.separation = in.real("problem", "separation", b.separation);
    b.spread = in.real("problem", "spread", b.spread);
    b.noise_spread = in.real("problem", "noise_spread", b.noise_spread);
    b.anisotropy = in.real("problem", "anisotropy", b.anisotropy);
    b.seed = in.seed("problem", "seed", cfg.seed);
    p.reg = in.real("problem", "reg", p.reg);
    p.noise.mode = in.choice("problem", "noise", "iid", {"iid", "non_iid"}) == "iid" ? NoiseMode::kIid : NoiseMode::kNonIid;
    p.noise.rho = in.real("problem", "rho", p.noise.rho);
    p.noise.rho_low = in.real("problem", "rho_low", p.noise.rho_low);
    p.noise.rho_high = in.real("problem", "rho_high", p.noise.rho_high);
    p.noise.seed = in.seed("problem", "noise_seed", b.seed);
    if (!(p.reg > 0.0)) throw ConfigError("config: [problem] reg must be positive");
    validate(p.noise);
  }
}

void read_federation(Reader& in, ExperimentConfig& cfg) {
  auto& f = cfg.federation;
  f.rounds = static_cast<int>(in.integer("federation", "rounds", f.rounds));
  f.local_steps = static_cast<int>(in.integer("federation", "local_steps", f.local_steps));
  f.inner_lr = in.real("federation", "inner_lr", f.inner_lr);
  f.outer_lr = in.real("federation", "outer_lr", f.outer_lr);
  f.clients_per_round = in.integer("federation", "clients_per_round", f.clients_per_round);
  f.seed = in.seed("federation", "seed", cfg.seed);
  f.resample_estimator_clients = in.flag("federation", "resample_estimator_clients", f.resample_estimator_clients);
  f.warm_start_v = in.flag("federation", "warm_start_v", f.warm_start_v);
  f.exact_inner = in.flag("federation", "exact_inner", f.exact_inner);
  f.grad_norm_diagnostic = in.flag("federation", "grad_norm_diagnostic", f.grad_norm_diagnostic);
  f.inner_smoothness = in.real("federation", "inner_smoothness", f.inner_smoothness);
}

void read_estimator(Reader& in, ExperimentConfig& cfg) {
  const auto method = in.choice("estimator", "method", "exact", {"exact", "iterative", "non_iterative"});
  if (method == "exact") {
    cfg.federation.estimator = ExactEstimator{};
  } else if (method == "iterative") {
    IterSolverConfig it;
    it.iterations = static_cast<int>(in.integer("estimator", "iterations", it.iterations));
    it.step_mode = in.choice("estimator", "step_mode", "constant", {"constant", "schedule"}) == "constant"
                       ? StepMode::kConstant
                       : StepMode::kSchedule;
    it.step = in.real("estimator", "step", it.step);
    it.mu = in.real("estimator", "mu", it.mu);
    it.shift = in.real("estimator", "shift", it.shift);
    const auto comp = in.choice("estimator", "compressor", "none", {"none", "count_sketch", "topk"});
    it.compressor = comp == "none" ? CompressorKind::kNone
                    : comp == "topk" ? CompressorKind::kTopK
                                     : CompressorKind::kCountSketch;
    const bool has_budget = in.has("estimator", "budget");
    const bool has_rate = in.has("estimator", "rate");
    if (has_budget && has_rate) throw ConfigError("config: [estimator] give either budget or rate, not both");
    if (it.compressor != CompressorKind::kNone && !has_budget && !has_rate) {
      throw ConfigError("config: [estimator] compressor '" + comp + "' needs a budget or a rate");
    }
    if (has_rate) {
      cfg.estimator_rate = in.real("estimator", "rate", 1.0);
      if (!(*cfg.estimator_rate >= 1.0)) throw ConfigError("config: [estimator] rate must be at least 1");
    } else {
      it.budget = in.integer("estimator", "budget", 0);
    }
    it.decompress_k = in.integer("estimator", "decompress_k", it.decompress_k);
    it.sketch_delta = in.real("estimator", "sketch_delta", it.sketch_delta);
    it.sketch_seed = in.seed("estimator", "sketch_seed", cfg.seed);
    it.error_feedback = in.flag("estimator", "error_feedback", it.error_feedback);
    it.averaging = in.choice("estimator", "averaging", "last", {"last", "weighted"}) == "last" ? Averaging::kLastIterate
                                                                                               : Averaging::kWeighted;
    if (it.iterations < 1) throw ConfigError("config: [estimator] iterations must be positive");
    if (!(it.sketch_delta > 0.0 && it.sketch_delta < 1.0)) throw ConfigError("config: [estimator] sketch_delta must be in (0, 1)");
    cfg.federation.estimator = it;
  } else {
    NonIterSolverConfig ni;
    ni.rows1 = in.integer("estimator", "rows1", ni.rows1);
    ni.rows2 = in.integer("estimator", "rows2", ni.rows2);
    ni.seed1 = in.seed("estimator", "seed1", cfg.seed);
    ni.seed2 = in.seed("estimator", "seed2", cfg.seed + 100);
    ni.lstsq_tol = in.real("estimator", "lstsq_tol", ni.lstsq_tol);
    if (ni.rows1 < 1 || ni.rows2 < 1) throw ConfigError("config: [estimator] rows1 and rows2 must be positive");
    cfg.federation.estimator = ni;
  }
}

}  // namespace

std::string ExperimentConfig::resolved_ini() const {
  std::string out;
  std::string section;
  for (const auto& e : resolved) {
    if (e.section != section) {
      out += (out.empty() ? "" : "\n") + ("[" + e.section + "]\n");
      section = e.section;
    }
    out += e.key + " = " + e.value + "\n";
  }
  return out;
}

std::string ExperimentConfig::problem_text() const {
  std::string out;
  for (const auto& e : resolved)
    if (e.section == "problem") out += e.key + " = " + e.value + "\n";
  return out;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& e : resolved) j[e.section][e.key] = e.value;
  return j;
}

ExperimentConfig parse_config(const std::string& text, std::optional<std::uint64_t> seed_override) {
  pt::ptree tree;
  try {
    std::istringstream is(text);
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig cfg;
  Reader in(tree, cfg);
  cfg.seed = in.seed("run", "seed", 1);
  if (seed_override) {
    cfg.seed = *seed_override;
    cfg.resolved.back().value = std::to_string(cfg.seed);
  }
  if (auto out = in.raw("run", "out")) cfg.out = *out;
  read_problem(in, cfg);
  read_federation(in, cfg);
  read_estimator(in, cfg);
  cfg.rates = in.reals("sweep", "rates", cfg.rates);
  for (double r : cfg.rates)
    if (!(r >= 1.0)) throw ConfigError("config: [sweep] rates must be at least 1");
  in.reject_unused(cfg.problem.kind == ProblemKind::kQuadratic ? " (problem kind quadratic)" : " (problem kind noisy_label)");
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), seed_override);
}

std::unique_ptr<BilevelProblem> build_problem(const ProblemSpec& spec) {
  if (spec.kind == ProblemKind::kQuadratic) return std::make_unique<QuadraticBilevelProblem>(spec.quadratic);
  return std::make_unique<WeightedERMProblem>(inject_label_noise(make_blobs(spec.blobs), spec.noise), spec.reg);
}

EstimatorConfig resolve_estimator(const ExperimentConfig& cfg, Index inner_dim) {
  EstimatorConfig est = cfg.federation.estimator;
  if (auto* it = std::get_if<IterSolverConfig>(&est); it && cfg.estimator_rate) {
    const double rate = *cfg.estimator_rate;
    if (rate == 1.0) {
      it->compressor = CompressorKind::kNone;
      it->budget = 0;
    } else {
      it->budget = static_cast<Index>(std::floor(static_cast<double>(inner_dim) / rate));
      if (it->budget < 1) {
        throw ConfigError("config: rate " + format_double(rate) + " leaves no budget for d = " + std::to_string(inner_dim));
      }
    }
  }
  return est;
}

std::string git_blob_sha1(const std::string& content) {
  boost::uuids::detail::sha1 h;
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  h.process_bytes(header.data(), header.size());
  h.process_bytes(content.data(), content.size());
  boost::uuids::detail::sha1::digest_type digest;
  h.get_digest(digest);
  char hex[41];
  for (int i = 0; i < 5; ++i) std::snprintf(hex + 8 * i, 9, "%08x", digest[i]);
  return std::string(hex, 40);
}

}  // namespace fedbio
