#include "llrkit/io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "llrkit/errors.hpp"

namespace llrkit::io {

using netzoo::Family;
using netzoo::NetworkSpec;
using netzoo::ParamPoint;

namespace {

constexpr int kVersion = 1;

const json& field(const json& j, const char* key) {
  if (!j.is_object()) throw ParseError("expected an object while looking for '" + std::string(key) + "'");
  auto it = j.find(key);
  if (it == j.end()) throw ParseError("missing field '" + std::string(key) + "'");
  return *it;
}

template <class T>
T get(const json& j, const char* key) {
  try {
    return field(j, key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError("field '" + std::string(key) + "': " + e.what());
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  return get<T>(j, key);
}

void expect_format(const json& j, const char* format) {
  const auto f = get<std::string>(j, "format");
  if (f != format) throw ParseError("expected format '" + std::string(format) + "', got '" + f + "'");
  const int v = get<int>(j, "version");
  if (v != kVersion) throw ParseError("unsupported " + f + " version " + std::to_string(v));
}

json real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double real_from(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw ParseError("expected a number, got " + j.dump());
}

// Validation failures while reading a document are parse failures.
template <class F>
auto parsing(const char* what, F&& f) {
  try {
    return f();
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------

json to_json(const NetworkSpec& s) {
  json j;
  j["family"] = netzoo::to_string(s.family);
  j["input_dim"] = s.input_dim;
  if (s.is_cnn()) {
    j["conv_dims"] = s.conv_dims;
    j["kernel_count"] = s.kernel_count;
    j["kernel_size"] = s.kernel_size;
  } else {
    j["hidden_widths"] = s.hidden_widths;
  }
  j["hidden_bias"] = s.hidden_bias;
  j["output_bias"] = s.output_bias;
  j["activation"] = netzoo::to_string(s.activation);
  return j;
}

NetworkSpec spec_from_json(const json& j) {
  return parsing("network spec", [&] {
    NetworkSpec s;
    s.family = netzoo::parse_family(get<std::string>(j, "family"));
    s.input_dim = get<int>(j, "input_dim");
    if (s.is_cnn()) {
      s.conv_dims = get_or<int>(j, "conv_dims", 2);
      s.kernel_count = get<int>(j, "kernel_count");
      s.kernel_size = get<int>(j, "kernel_size");
    } else {
      s.hidden_widths = get<std::vector<int>>(j, "hidden_widths");
    }
    s.hidden_bias = get_or<bool>(j, "hidden_bias", false);
    s.output_bias = get_or<bool>(j, "output_bias", false);
    s.activation = netzoo::parse_activation(get_or<std::string>(j, "activation", "tanh"));
    s.validate();
    return s;
  });
}

json to_json(const ParamPoint& p) {
  json j;
  j["format"] = "llrkit.params";
  j["version"] = kVersion;
  j["spec"] = to_json(p.spec());
  j["parameter_count"] = p.size();
  json values = json::array();
  for (double v : p.values()) values.push_back(real(v));
  j["values"] = std::move(values);
  return j;
}

ParamPoint params_from_json(const json& j) {
  expect_format(j, "llrkit.params");
  NetworkSpec spec = spec_from_json(field(j, "spec"));
  return parsing("parameter point", [&] {
    const auto& arr = field(j, "values");
    if (!arr.is_array()) throw ParseError("'values' must be an array");
    std::vector<double> values;
    values.reserve(arr.size());
    for (const auto& v : arr) values.push_back(real_from(v));
    const auto declared = get<std::size_t>(j, "parameter_count");
    if (declared != values.size())
      throw ParseError("parameter_count " + std::to_string(declared) + " does not match " +
                       std::to_string(values.size()) + " values");
    return ParamPoint(std::move(spec), std::move(values));
  });
}

json to_json(const embedding::EmbeddingPlan& plan) {
  json j;
  j["format"] = "llrkit.plan";
  j["version"] = kVersion;
  j["source"] = to_json(plan.source);
  j["target"] = to_json(plan.target);
  json steps = json::array();
  for (const auto& s : plan.steps) {
    json step;
    step["kind"] = s.kind == embedding::StepKind::Split ? "split" : "null";
    step["layer"] = s.layer;
    if (s.kind == embedding::StepKind::Split) {
      step["neuron"] = s.neuron;
      step["alpha"] = s.alpha;
    } else {
      step["count"] = s.count;
      step["input_init"] = s.input_init;
    }
    steps.push_back(std::move(step));
  }
  j["steps"] = std::move(steps);
  return j;
}

embedding::EmbeddingPlan plan_from_json(const json& j) {
  expect_format(j, "llrkit.plan");
  const NetworkSpec source = spec_from_json(field(j, "source"));
  std::vector<embedding::EmbeddingStep> steps;
  const auto& arr = field(j, "steps");
  if (!arr.is_array()) throw ParseError("'steps' must be an array");
  for (const auto& s : arr) {
    const auto kind = get<std::string>(s, "kind");
    const int layer = get_or<int>(s, "layer", 1);
    if (kind == "split")
      steps.push_back(embedding::EmbeddingStep::split(layer, get<int>(s, "neuron"), get_or<double>(s, "alpha", 0.5)));
    else if (kind == "null")
      steps.push_back(embedding::EmbeddingStep::null(layer, get_or<int>(s, "count", 1),
                                                     get_or<std::vector<double>>(s, "input_init", {})));
    else
      throw ParseError("unknown embedding step kind '" + kind + "'");
  }
  auto plan = parsing("embedding plan", [&] { return embedding::make_plan(source, std::move(steps)); });
  if (j.contains("target") && !(spec_from_json(j["target"]) == plan.target))
    throw ParseError("plan target spec does not match its steps");
  return plan;
}

json to_json(const rank::RankReport& r) {
  json j;
  j["rank"] = r.rank;
  j["tolerance"] = r.tolerance;
  j["gap_ratio"] = real(r.gap_ratio);
  j["ill_determined"] = r.ill_determined();
  j["trials"] = r.trials;
  j["singular_values"] = r.singular_values;
  return j;
}

rank::RankReport rank_report_from_json(const json& j) {
  return parsing("rank report", [&] {
    rank::RankReport r;
    r.rank = get<int>(j, "rank");
    r.tolerance = get<double>(j, "tolerance");
    r.gap_ratio = real_from(field(j, "gap_ratio"));
    r.trials = get_or<int>(j, "trials", 1);
    r.singular_values = get<std::vector<double>>(j, "singular_values");
    return r;
  });
}

json to_json(const llr::LLRReport& r) {
  json j;
  j["rank_S"] = r.rank_S;
  j["rank_model"] = r.rank_model;
  j["holds"] = r.holds;
  j["ill_determined"] = r.ill_determined;
  j["model_source"] = r.model_source == llr::RankSource::Formula ? "formula" : "oracle";
  j["empirical"] = to_json(r.empirical);
  j["model"] = to_json(r.model);
  return j;
}

json to_json(const trainlab::TrainConfig& c) {
  json j;
  j["init_std"] = c.init_std;
  j["learning_rates"] = c.learning_rates;
  j["max_steps"] = c.max_steps;
  j["train_loss_stop"] = c.train_loss_stop;
  j["divergence_loss"] = c.divergence_loss;
  j["trace_every"] = c.trace_every;
  return j;
}

trainlab::TrainConfig train_config_from_json(const json& j) {
  return parsing("train config", [&] {
    trainlab::TrainConfig c;
    c.init_std = get_or(j, "init_std", c.init_std);
    c.learning_rates = get_or(j, "learning_rates", c.learning_rates);
    c.max_steps = get_or(j, "max_steps", c.max_steps);
    c.train_loss_stop = get_or(j, "train_loss_stop", c.train_loss_stop);
    c.divergence_loss = get_or(j, "divergence_loss", c.divergence_loss);
    c.trace_every = get_or(j, "trace_every", c.trace_every);
    c.validate();
    return c;
  });
}

json to_json(const SweepFile& f) {
  json j;
  j["format"] = "llrkit.sweep";
  j["version"] = kVersion;
  json archs = json::array();
  for (const auto& a : f.sweep.architectures)
    archs.push_back({{"family", netzoo::to_string(a.family)}, {"N", a.scale}});
  j["architectures"] = std::move(archs);
  j["n_min"] = f.sweep.n_min;
  j["n_max"] = f.sweep.n_max;
  j["seeds_per_cell"] = f.sweep.seeds_per_cell;
  j["test_size"] = f.sweep.test_size;
  j["recovery_threshold"] = f.sweep.recovery_threshold;
  j["seed"] = f.sweep.seed;
  j["train"] = to_json(f.train);
  return j;
}

SweepFile sweep_file_from_json(const json& j) {
  expect_format(j, "llrkit.sweep");
  return parsing("sweep config", [&] {
    SweepFile f;
    auto& s = f.sweep;
    for (const auto& a : field(j, "architectures"))
      s.architectures.push_back({netzoo::parse_family(get<std::string>(a, "family")), get<int>(a, "N")});
    s.n_min = get_or(j, "n_min", s.n_min);
    s.n_max = get_or(j, "n_max", s.n_max);
    s.seeds_per_cell = get_or(j, "seeds_per_cell", s.seeds_per_cell);
    s.test_size = get_or(j, "test_size", s.test_size);
    s.recovery_threshold = get_or(j, "recovery_threshold", s.recovery_threshold);
    s.seed = get_or(j, "seed", s.seed);
    s.validate();
    f.train = train_config_from_json(j.contains("train") ? j["train"] : json::object());
    return f;
  });
}

json to_json(const embedding::OutputCheck& c) {
  return {{"probes", c.probes}, {"max_deviation", c.max_deviation}, {"tolerance", c.tolerance}, {"pass", c.pass}};
}

json to_json(const embedding::CriticalityCheck& c) {
  return {{"narrow_grad_norm", c.narrow_grad_norm},
          {"wide_grad_norm", c.wide_grad_norm},
          {"tolerance", c.tolerance},
          {"narrow_critical", c.narrow_critical},
          {"pass", c.pass}};
}

// ---------------------------------------------------------------------------

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json parse(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(what + " is not valid JSON: " + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

json read_json(const std::filesystem::path& path) { return parse(read_file(path), path.string()); }

ParamPoint read_params(const std::filesystem::path& path) { return params_from_json(read_json(path)); }

embedding::EmbeddingPlan read_plan(const std::filesystem::path& path) { return plan_from_json(read_json(path)); }

}  // namespace llrkit::io
