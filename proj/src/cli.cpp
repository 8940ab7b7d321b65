#include "llrkit/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "llrkit/digest.hpp"
#include "llrkit/embedding.hpp"
#include "llrkit/errors.hpp"
#include "llrkit/io.hpp"
#include "llrkit/llr.hpp"
#include "llrkit/random.hpp"
#include "llrkit/rank.hpp"
#include "llrkit/trainlab.hpp"

namespace llrkit::cli {

namespace fs = std::filesystem;
using io::json;
using netzoo::Family;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out_dir = "out";
  bool out_dir_given = false;
  int threads = 1;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int default_threads() {
  if (const char* env = std::getenv("LLRKIT_THREADS")) {
    try {
      const int t = std::stoi(env);
      if (t >= 1) return t;
    } catch (const std::exception&) {
    }
  }
  return 1;
}

// Outputs and inputs of one command, recorded in its manifest.
class Recorder {
 public:
  explicit Recorder(fs::path dir) : dir_(std::move(dir)) {}

  void output(const std::string& name, const std::string& content) {
    io::write_file(dir_ / name, content);
    outputs_[name] = sha256_hex(content);
  }
  void input(const std::string& path) { inputs_[path] = sha256_hex(io::read_file(path)); }

  json config = json::object();

  void write_manifest(const std::string& command, const std::vector<std::string>& argv, const Globals& g,
                      const std::string& started, int exit_code) const {
    json m;
    m["format"] = "llrkit.manifest";
    m["version"] = 1;
    m["tool_version"] = kToolVersion;
    m["command"] = command;
    m["argv"] = argv;
    m["cwd"] = fs::current_path().string();
    m["seed"] = g.seed;
    m["threads"] = g.threads;
    m["config"] = config;
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    m["exit_code"] = exit_code;
    m["started"] = started;
    m["finished"] = utc_now();
    io::write_file(dir_ / "manifest.json", io::dump(m));
  }

 private:
  fs::path dir_;
  std::map<std::string, std::string> outputs_;
  std::map<std::string, std::string> inputs_;
};

// ---------------------------------------------------------------------------
// Commands

struct TargetOpts {
  std::string family = "fc";
  bool hidden_bias = false;
};

int cmd_target(const TargetOpts& o, Recorder& rec, std::ostream& out) {
  const auto p = netzoo::make_phase_target(netzoo::parse_family(o.family), o.hidden_bias);
  rec.config = {{"family", o.family}, {"hidden_bias", o.hidden_bias}};
  rec.output("target.json", io::dump(io::to_json(p)));
  out << "wrote target.json (" << p.size() << " parameters)\n";
  return 0;
}

struct RankOpts {
  std::string params;
  std::string method = "both";
  std::optional<double> tol;
  int trials = 3;
};

int cmd_rank(const RankOpts& o, const Globals& g, Recorder& rec, std::ostream& out) {
  rec.input(o.params);
  const auto p = io::read_params(o.params);
  rank::MonteCarloOptions mc;
  mc.trials = o.trials;
  mc.seed = g.seed;
  mc.tolerance.absolute = o.tol;
  rec.config = {{"params", o.params}, {"method", o.method}, {"trials", o.trials}};
  rec.config["tol"] = o.tol ? json(*o.tol) : json(nullptr);

  json report;
  report["method"] = o.method;
  report["spec"] = io::to_json(p.spec());
  std::optional<long> formula;
  std::optional<rank::RankReport> oracle;
  if (o.method != "oracle") {
    formula = rank::rank_formula(p);
    report["formula"] = {{"rank", *formula}};
  }
  if (o.method != "formula") {
    oracle = rank::model_rank_mc(p, mc);
    report["oracle"] = io::to_json(*oracle);
  }
  const long r = formula ? *formula : oracle->rank;
  report["rank"] = r;
  int code = 0;
  if (formula && oracle) {
    const bool agree = *formula == oracle->rank;
    report["agree"] = agree;
    code = agree ? 0 : 1;
  }
  rec.output("rank.json", io::dump(report));
  out << "rank " << r;
  if (report.contains("agree")) out << " agree=" << (report["agree"].get<bool>() ? "true" : "false");
  out << '\n';
  return code;
}

struct FormulaOpts {
  std::string family;
  long k = 1;
  long d = 0;
  std::optional<long> s;
  std::optional<long> m_null;
  int dims = 2;
  bool table = false;
  std::optional<long> m;
};

int cmd_formula(const FormulaOpts& o, Recorder& rec, std::ostream& out) {
  const Family f = netzoo::parse_family(o.family);
  if (f == Family::FC && o.s) throw PreconditionError("--s only applies to CNN families");
  if (f == Family::FC && o.m_null) throw PreconditionError("--m-null only applies to CNN families");
  if (f != Family::FC && !o.s) throw PreconditionError("CNN families need --s");
  if (o.dims != 1 && o.dims != 2) throw PreconditionError("--dims must be 1 or 2");
  const long m_null = o.m_null.value_or(0);
  rec.config = {{"family", o.family}, {"k", o.k}, {"d", o.d}, {"dims", o.dims}, {"table", o.table}};
  if (o.s) rec.config["s"] = *o.s;
  if (o.m_null) rec.config["m_null"] = *o.m_null;

  if (o.table) {
    if (!o.m) throw PreconditionError("--table needs --m");
    if (*o.m < 0) throw PreconditionError("--m must be >= 0");
    rec.config["m"] = *o.m;
    std::ostringstream csv;
    if (f == Family::FC) {
      csv << "k,fc2\n";
      for (long k = 0; k <= *o.m; ++k) csv << k << ',' << rank::opt_sample_size_fc2(k, o.d) << '\n';
    } else {
      if (o.dims != 2) throw PreconditionError("the CNN comparison table is defined for 2-d inputs");
      csv << "k,cnn_ws,cnn_ns,fc\n";
      for (const auto& row : rank::comparison_table(o.d, *o.s, *o.m, m_null))
        csv << row.k << ',' << row.cnn_ws << ',' << row.cnn_ns << ',' << row.fc << '\n';
    }
    rec.output("formula.csv", csv.str());
    out << csv.str();
    return 0;
  }

  long value = 0;
  switch (f) {
    case Family::FC: value = rank::opt_sample_size_fc2(o.k, o.d); break;
    case Family::CNN_WS: value = rank::opt_sample_size_cnn_ws(o.k, o.d, *o.s, o.dims); break;
    case Family::CNN_NS: value = rank::opt_sample_size_cnn_ns(o.k, o.d, *o.s, m_null, o.dims); break;
  }
  json j = rec.config;
  j["value"] = value;
  rec.output("formula.json", io::dump(j));
  out << value << '\n';
  return 0;
}

struct EmbedOpts {
  std::string params;
  std::string plan;
  bool verify = false;
  int probes = 1000;
  double tol = 1e-10;
};

int cmd_embed(const EmbedOpts& o, const Globals& g, Recorder& rec, std::ostream& out) {
  rec.input(o.params);
  rec.input(o.plan);
  const auto narrow = io::read_params(o.params);
  const auto plan = io::read_plan(o.plan);
  rec.config = {{"params", o.params}, {"plan", o.plan}, {"verify", o.verify}, {"probes", o.probes}, {"tol", o.tol}};
  const auto wide = embedding::compose(plan, narrow);
  rec.output("embedded.json", io::dump(io::to_json(wide)));
  out << "wrote embedded.json (" << wide.size() << " parameters)\n";
  if (!o.verify) return 0;

  const auto output = embedding::verify_output_preserving(narrow, wide, o.probes, derive_seed(g.seed, {1}), o.tol);
  // Labels from the narrow net itself make it an exact interpolating critical point.
  netzoo::Dataset data;
  data.inputs = rank::gaussian_inputs(narrow.spec(), 16, derive_seed(g.seed, {2}));
  data.labels.resize(data.inputs.cols());
  netzoo::Evaluator ev(narrow.spec());
  for (std::size_t i = 0; i < data.size(); ++i)
    data.labels(static_cast<Eigen::Index>(i)) = ev.forward(narrow.values(), data.input(i));
  const auto crit = embedding::verify_criticality(narrow, wide, data, 1e-8);
  rank::MonteCarloOptions mc;
  mc.seed = derive_seed(g.seed, {3});
  const auto rn = rank::model_rank_mc(narrow, mc);
  const auto rw = rank::model_rank_mc(wide, mc);
  const bool rank_ok = rw.rank <= rn.rank;

  json report;
  report["output"] = io::to_json(output);
  report["criticality"] = io::to_json(crit);
  report["rank"] = {{"narrow", rn.rank}, {"wide", rw.rank}, {"pass", rank_ok}};
  report["pass"] = output.pass && crit.pass && rank_ok;
  rec.output("verify.json", io::dump(report));
  out << "output " << (output.pass ? "pass" : "FAIL") << " (max deviation " << output.max_deviation << ")\n"
      << "criticality " << (crit.pass ? "pass" : "FAIL") << " (wide gradient norm " << crit.wide_grad_norm << ")\n"
      << "rank " << (rank_ok ? "pass" : "FAIL") << " (narrow " << rn.rank << ", wide " << rw.rank << ")\n";
  return report["pass"].get<bool>() ? 0 : 1;
}

struct LlrOpts {
  std::string params;
  std::optional<int> n;
  std::optional<int> sweep;
  int trials = 3;
};

int cmd_llr(const LlrOpts& o, const Globals& g, Recorder& rec, std::ostream& out) {
  if (o.n.has_value() == o.sweep.has_value()) throw PreconditionError("give exactly one of --n and --sweep");
  rec.input(o.params);
  const auto p = io::read_params(o.params);
  rec.config = {{"params", o.params}, {"trials", o.trials}};
  if (o.n) {
    rec.config["n"] = *o.n;
    if (*o.n < 1) throw PreconditionError("--n must be >= 1");
    rank::MonteCarloOptions mc;
    mc.trials = o.trials;
    mc.seed = derive_seed(g.seed, {2});
    const auto x = rank::gaussian_inputs(p.spec(), *o.n, derive_seed(g.seed, {1}));
    const auto r = llr::llr_check(p, x, mc);
    rec.output("llr.json", io::dump(io::to_json(r)));
    out << "rank_S " << r.rank_S << " rank_model " << r.rank_model << " holds=" << (r.holds ? "true" : "false") << '\n';
    return 0;
  }
  rec.config["sweep"] = *o.sweep;
  const auto curve = llr::saturation_sweep(p, *o.sweep, o.trials, g.seed);
  rec.output("saturation.csv", llr::to_csv(curve));
  json summary = {{"n_max", curve.n_max()}, {"trials", o.trials}, {"rank_model", curve.rank_model}};
  summary["n_star"] = curve.n_star ? json(*curve.n_star) : json(nullptr);
  rec.output("llr.json", io::dump(summary));
  out << "rank_model " << curve.rank_model << " n_star ";
  if (curve.n_star)
    out << *curve.n_star;
  else
    out << "none";
  out << '\n';
  return 0;
}

int cmd_sweep(const std::string& config, const Globals& g, Recorder& rec, std::ostream& out) {
  rec.input(config);
  auto file = io::sweep_file_from_json(io::read_json(config));
  if (g.seed_given) file.sweep.seed = g.seed;
  file.sweep.threads = g.threads;
  rec.config = io::to_json(file);
  rec.config["config_file"] = config;

  const auto result = trainlab::run_sweep(file.sweep, file.train, netzoo::make_phase_target());
  rec.output("sweep.csv", trainlab::sweep_csv(result.cells));
  rec.output("runs.csv", trainlab::sweep_csv(result.runs));
  rec.output("grid.csv", trainlab::grid_csv(result));
  for (const auto& info : result.architectures) {
    out << trainlab::label(info.arch) << " N=" << info.arch.scale << " params=" << info.parameter_count
        << " marker=" << (info.model_rank ? std::to_string(*info.model_rank) : "-") << " first n with mean MSE < "
        << file.sweep.recovery_threshold << ": ";
    std::optional<int> first;
    for (int n = result.n_min; n <= result.n_max && !first; ++n)
      if (result.mean_test_mse(info.arch, n) < file.sweep.recovery_threshold) first = n;
    if (first)
      out << *first;
    else
      out << "none";
    out << '\n';
  }
  return 0;
}

std::vector<std::string> without_out_dir(const std::vector<std::string>& args) {
  std::vector<std::string> kept;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--out-dir") {
      ++i;
      continue;
    }
    if (args[i].rfind("--out-dir=", 0) == 0) continue;
    kept.push_back(args[i]);
  }
  return kept;
}

int cmd_replay(const std::string& manifest_path, const Globals& g, std::ostream& out, std::ostream& err) {
  const json m = io::read_json(manifest_path);
  if (m.value("format", "") != "llrkit.manifest") throw ParseError(manifest_path + " is not an llrkit manifest");
  const fs::path dir = g.out_dir_given ? fs::absolute(g.out_dir) : fs::absolute(manifest_path).parent_path() / "replay";
  const auto args_recorded = m.at("argv").get<std::vector<std::string>>();
  std::vector<std::string> args = args_recorded;
  args.push_back("--out-dir");
  args.push_back(dir.string());

  const fs::path here = fs::current_path();
  fs::current_path(m.at("cwd").get<std::string>());
  int code = 0;
  try {
    for (const auto& [path, sha] : m.at("inputs").items()) {
      if (sha256_hex(io::read_file(path)) != sha.get<std::string>()) {
        fs::current_path(here);
        err << "input " << path << " changed since the recorded run\n";
        return 1;
      }
    }
    std::ostringstream sink;
    code = run(args, sink, err);
  } catch (...) {
    fs::current_path(here);
    throw;
  }
  fs::current_path(here);

  bool same = code == m.at("exit_code").get<int>();
  if (!same) err << "exit code " << code << " differs from recorded " << m.at("exit_code") << '\n';
  for (const auto& [name, sha] : m.at("outputs").items()) {
    const fs::path f = dir / name;
    const std::string got = fs::exists(f) ? sha256_hex(io::read_file(f)) : "missing";
    const bool match = got == sha.get<std::string>();
    same = same && match;
    out << (match ? "identical " : "DIFFERENT ") << name << '\n';
  }
  out << (same ? "replay reproduced all outputs" : "replay differs") << " in " << dir.string() << '\n';
  return same ? 0 : 1;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"llrkit: tangent-feature ranks, embeddings and recovery experiments"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  g.threads = default_threads();
  app.add_option("--seed", g.seed, "Master seed")->each([&](const std::string&) { g.seed_given = true; });
  app.add_option("--out-dir", g.out_dir, "Output directory")->each([&](const std::string&) { g.out_dir_given = true; });
  app.add_option("--threads", g.threads, "Worker threads (default: $LLRKIT_THREADS or 1)")
      ->check(CLI::PositiveNumber);

  TargetOpts target;
  auto* c_target = app.add_subcommand("target", "Write the phase-transition teacher network");
  c_target->add_option("--family", target.family, "fc, cnn-ws or cnn-ns")->check(CLI::IsMember({"fc", "cnn-ws", "cnn-ns"}));
  c_target->add_flag("--hidden-bias", target.hidden_bias, "Include (zero) hidden biases");

  RankOpts rank;
  auto* c_rank = app.add_subcommand("rank", "Model rank of a parameter file");
  c_rank->add_option("params", rank.params, "Parameter file")->required();
  c_rank->add_option("--method", rank.method)->check(CLI::IsMember({"formula", "oracle", "both"}));
  c_rank->add_option("--tol", rank.tol, "Absolute singular-value tolerance");
  c_rank->add_option("--trials", rank.trials)->check(CLI::PositiveNumber);

  FormulaOpts formula;
  auto* c_formula = app.add_subcommand("formula", "Closed-form optimistic sample sizes");
  c_formula->add_option("--family", formula.family)->required()->check(CLI::IsMember({"fc", "fc2", "cnn-ws", "cnn-ns"}));
  c_formula->add_option("--k", formula.k)->check(CLI::NonNegativeNumber);
  c_formula->add_option("--d", formula.d)->required()->check(CLI::PositiveNumber);
  c_formula->add_option("--s", formula.s)->check(CLI::PositiveNumber);
  c_formula->add_option("--m-null", formula.m_null)->check(CLI::NonNegativeNumber);
  c_formula->add_option("--dims", formula.dims);
  c_formula->add_flag("--table", formula.table, "Rows k = 0..m");
  c_formula->add_option("--m", formula.m);

  EmbedOpts embed;
  auto* c_embed = app.add_subcommand("embed", "Apply an embedding plan");
  c_embed->add_option("params", embed.params)->required();
  c_embed->add_option("plan", embed.plan)->required();
  c_embed->add_flag("--verify", embed.verify, "Check output, criticality and rank");
  c_embed->add_option("--probes", embed.probes)->check(CLI::PositiveNumber);
  c_embed->add_option("--tol", embed.tol);

  LlrOpts llr_opts;
  auto* c_llr = app.add_subcommand("llr", "Empirical vs model rank");
  c_llr->add_option("params", llr_opts.params)->required();
  auto* opt_n = c_llr->add_option("--n", llr_opts.n, "Dataset size");
  auto* opt_sweep = c_llr->add_option("--sweep", llr_opts.sweep, "Saturation curve up to n_max");
  opt_n->excludes(opt_sweep);
  c_llr->add_option("--trials", llr_opts.trials)->check(CLI::PositiveNumber);

  std::string sweep_config;
  auto* c_sweep = app.add_subcommand("sweep", "Teacher-student recovery sweep");
  c_sweep->add_option("config", sweep_config)->required();

  std::string manifest;
  auto* c_replay = app.add_subcommand("replay", "Re-run a manifest and compare output digests");
  c_replay->add_option("manifest", manifest)->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  const std::string started = utc_now();
  try {
    if (c_replay->parsed()) return cmd_replay(manifest, g, out, err);

    Recorder rec(g.out_dir);
    int code = 0;
    std::string command;
    if (c_target->parsed()) {
      command = "target";
      code = cmd_target(target, rec, out);
    } else if (c_rank->parsed()) {
      command = "rank";
      code = cmd_rank(rank, g, rec, out);
    } else if (c_formula->parsed()) {
      command = "formula";
      code = cmd_formula(formula, rec, out);
    } else if (c_embed->parsed()) {
      command = "embed";
      code = cmd_embed(embed, g, rec, out);
    } else if (c_llr->parsed()) {
      command = "llr";
      code = cmd_llr(llr_opts, g, rec, out);
    } else {
      command = "sweep";
      code = cmd_sweep(sweep_config, g, rec, out);
    }
    rec.write_manifest(command, without_out_dir(args), g, started, code);
    return code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace llrkit::cli
