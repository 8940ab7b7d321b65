#include "llrkit/trainlab.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "llrkit/embedding.hpp"
#include "llrkit/errors.hpp"
#include "llrkit/llr.hpp"
#include "llrkit/parallel.hpp"
#include "llrkit/random.hpp"
#include "llrkit/rank.hpp"

namespace llrkit::trainlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (learning_rates.empty()) throw PreconditionError("learning_rates must be nonempty");
  for (double lr : learning_rates)
    if (!(lr > 0.0)) throw PreconditionError("learning rates must be positive");
  if (!(init_std >= 0.0)) throw PreconditionError("init_std must be >= 0");
  if (max_steps < 0) throw PreconditionError("max_steps must be >= 0");
  if (trace_every < 1) throw PreconditionError("trace_every must be >= 1");
}

Dataset make_dataset(const ParamPoint& target, int n, std::uint64_t seed) {
  if (n < 1) throw PreconditionError("dataset size must be >= 1");
  Dataset data;
  data.inputs = rank::gaussian_inputs(target.spec(), n, seed);
  data.labels.resize(n);
  netzoo::Evaluator ev(target.spec());
  for (int i = 0; i < n; ++i) data.labels(i) = ev.forward(target.values(), data.input(static_cast<std::size_t>(i)));
  return data;
}

ParamPoint initial_point(const NetworkSpec& spec, double init_std, std::uint64_t seed) {
  ParamPoint p(spec);
  if (init_std > 0.0) {
    Rng rng(seed);
    fill_normal(rng, p.values(), init_std);
  }
  return p;
}

TrainResult gd_train(const NetworkSpec& spec, const TrainConfig& config, const Dataset& data, double learning_rate,
                     std::uint64_t init_seed) {
  return gd_train_from(initial_point(spec, config.init_std, init_seed), config, data, learning_rate);
}

TrainResult gd_train_from(ParamPoint start, const TrainConfig& config, const Dataset& data, double learning_rate) {
  config.validate();
  data.validate();
  if (data.inputs.rows() != start.spec().input_size()) throw ShapeError("dataset inputs do not match network input size");

  TrainResult res{std::move(start), {}, learning_rate, 0, 0.0, 0.0, false};
  netzoo::Evaluator ev(res.params.spec());
  auto theta = res.params.values();
  std::vector<double> grad(theta.size());
  const auto n = data.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  for (long step = 0;; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = ev.forward(theta, data.input(i)) - data.labels(static_cast<Eigen::Index>(i));
      sq += r * r;
      ev.accumulate_gradient(theta, r * inv_n, grad);
    }
    const double loss = sq * inv_n;
    if (step == 0) res.initial_train_mse = loss;
    res.final_train_mse = loss;
    res.steps = step;
    if (step % config.trace_every == 0) res.trace.push_back({step, loss});
    if (!std::isfinite(loss) || loss > config.divergence_loss) {
      res.diverged = true;
      break;
    }
    if (loss < config.train_loss_stop || step >= config.max_steps) break;
    for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= learning_rate * grad[k];
  }
  if (res.trace.empty() || res.trace.back().step != res.steps) res.trace.push_back({res.steps, res.final_train_mse});
  return res;
}

double mse(const ParamPoint& params, const Dataset& data) {
  netzoo::Evaluator ev(params.spec());
  double sq = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double r = ev.forward(params.values(), data.input(i)) - data.labels(static_cast<Eigen::Index>(i));
    sq += r * r;
  }
  return sq / static_cast<double>(data.size());
}

double test_error(const ParamPoint& student, const ParamPoint& target, int n_test, std::uint64_t seed) {
  if (student.spec().input_size() != target.spec().input_size())
    throw ShapeError("student and target take different input shapes");
  return mse(student, make_dataset(target, n_test, seed));
}

// ---------------------------------------------------------------------------

namespace {

Eigen::VectorXd gradient_of(const ParamPoint& p, const Dataset& data) {
  const auto g = embedding::mse_gradient(p, data);
  return Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size()));
}

double half_sse(const ParamPoint& p, const Dataset& data) {
  return 0.5 * mse(p, data) * static_cast<double>(data.size());
}

ParamPoint shifted(const ParamPoint& p, const Eigen::VectorXd& delta) {
  ParamPoint q = p;
  auto v = q.values();
  for (Eigen::Index k = 0; k < delta.size(); ++k) v[static_cast<std::size_t>(k)] += delta(k);
  return q;
}

// Central differences of the analytic gradient.
Eigen::MatrixXd hessian_fd(const ParamPoint& p, const Dataset& data) {
  const auto M = static_cast<Eigen::Index>(p.size());
  Eigen::MatrixXd H(M, M);
  const double h = 1e-6;
  for (Eigen::Index j = 0; j < M; ++j) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(M);
    e(j) = h;
    H.col(j) = (gradient_of(shifted(p, e), data) - gradient_of(shifted(p, -e), data)) / (2.0 * h);
  }
  return 0.5 * (H + H.transpose());
}

}  // namespace

CriticalSearch refine_to_critical(ParamPoint start, const Dataset& data, double tol, int max_iter) {
  data.validate();
  CriticalSearch out{std::move(start), 0.0, 0, false};
  double lambda = 1e-3;
  const auto M = static_cast<Eigen::Index>(out.params.size());
  for (; out.iterations < max_iter; ++out.iterations) {
    const Eigen::VectorXd g = gradient_of(out.params, data);
    out.grad_norm = g.norm();
    if (out.grad_norm < tol) {
      out.converged = true;
      return out;
    }
    if (out.grad_norm < 1e-4) {
      // Newton on the gradient field; accepted only if it shrinks the gradient.
      const Eigen::MatrixXd H = hessian_fd(out.params, data);
      const Eigen::VectorXd step = H.completeOrthogonalDecomposition().solve(-g);
      ParamPoint trial = shifted(out.params, step);
      if (step.allFinite() && gradient_of(trial, data).norm() < out.grad_norm) {
        out.params = std::move(trial);
        continue;
      }
    }
    const Eigen::MatrixXd J = rank::empirical_tangent_matrix(out.params, data.inputs).entries.transpose();
    const Eigen::MatrixXd JtJ = J.transpose() * J;
    const double loss = half_sse(out.params, data);
    bool accepted = false;
    for (int tries = 0; tries < 30 && !accepted; ++tries) {
      const Eigen::MatrixXd A = JtJ + lambda * Eigen::MatrixXd::Identity(M, M);
      const Eigen::VectorXd step = A.ldlt().solve(-g);
      ParamPoint trial = shifted(out.params, step);
      if (step.allFinite() && half_sse(trial, data) < loss) {
        out.params = std::move(trial);
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
      } else {
        lambda *= 4.0;
      }
    }
    if (!accepted) break;
  }
  out.grad_norm = gradient_of(out.params, data).norm();
  out.converged = out.grad_norm < tol;
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps

std::string label(const Architecture& arch) { return std::string(netzoo::to_string(arch.family)); }

void SweepConfig::validate() const {
  if (architectures.empty()) throw PreconditionError("sweep needs at least one architecture");
  for (const auto& a : architectures)
    if (a.scale < 1) throw PreconditionError("architecture scale must be >= 1");
  if (n_min < 1 || n_max < n_min) throw PreconditionError("sample sizes must satisfy 1 <= n_min <= n_max");
  if (seeds_per_cell < 1) throw PreconditionError("seeds_per_cell must be >= 1");
  if (test_size < 1) throw PreconditionError("test_size must be >= 1");
}

SweepConfig SweepConfig::desk_scale() {
  SweepConfig c;
  for (auto f : {netzoo::Family::CNN_WS, netzoo::Family::CNN_NS, netzoo::Family::FC})
    for (int N : {1, 3, 10}) c.architectures.push_back({f, N});
  return c;
}

double SweepResult::mean_test_mse(const Architecture& arch, int n) const {
  double sum = 0.0;
  int count = 0;
  for (const auto& c : cells) {
    if (c.arch == arch && c.n == n) {
      sum += c.test_mse;
      ++count;
    }
  }
  if (count == 0) throw PreconditionError("no cells for this architecture and sample size");
  return sum / count;
}

const ArchitectureInfo& SweepResult::info(const Architecture& arch) const {
  for (const auto& a : architectures)
    if (a.arch == arch) return a;
  throw PreconditionError("architecture not in sweep");
}

std::optional<ParamPoint> phase_representation(const Architecture& arch) {
  ParamPoint p = netzoo::make_phase_target(arch.family, true);
  const int units = arch.family == netzoo::Family::FC ? 3 : 1;
  Rng rng(derive_seed(0x5EED, {static_cast<std::uint64_t>(arch.family), static_cast<std::uint64_t>(arch.scale)}));
  std::uniform_real_distribution<double> alpha(0.1, 0.9);
  for (int u = 0; u < units; ++u)
    for (int k = 1; k < arch.scale; ++k) p = embedding::split_neuron(p, 1, u, alpha(rng));
  if (!(p.spec() == netzoo::phase_student_spec(arch.family, arch.scale))) return std::nullopt;
  return p;
}

SweepResult run_sweep(const SweepConfig& sweep, const TrainConfig& train, const ParamPoint& target,
                      const Representation& represent) {
  sweep.validate();
  train.validate();
  const std::uint64_t master = sweep.seed;
  const Dataset test_set = make_dataset(target, sweep.test_size, derive_seed(master, {3}));

  SweepResult result;
  result.n_min = sweep.n_min;
  result.n_max = sweep.n_max;
  for (const auto& arch : sweep.architectures) {
    ArchitectureInfo info{arch, netzoo::phase_student_spec(arch.family, arch.scale).parameter_count(), std::nullopt};
    if (auto rep = represent(arch)) {
      rank::MonteCarloOptions mc;
      mc.seed = derive_seed(master, {4, static_cast<std::uint64_t>(arch.family), static_cast<std::uint64_t>(arch.scale)});
      info.model_rank = llr::optimistic_sample_size_numeric(*rep, mc);
    }
    result.architectures.push_back(info);
  }

  struct Job {
    Architecture arch;
    int n;
    int seed_index;
  };
  std::vector<Job> jobs;
  for (const auto& arch : sweep.architectures)
    for (int n = sweep.n_min; n <= sweep.n_max; ++n)
      for (int s = 0; s < sweep.seeds_per_cell; ++s) jobs.push_back({arch, n, s});

  const std::size_t lrs = train.learning_rates.size();
  result.runs.resize(jobs.size() * lrs);
  result.cells.resize(jobs.size());
  parallel_for(jobs.size(), sweep.threads, [&](std::size_t j) {
    const Job& job = jobs[j];
    const auto n = static_cast<std::uint64_t>(job.n);
    const auto s = static_cast<std::uint64_t>(job.seed_index);
    const Dataset data = make_dataset(target, job.n, derive_seed(master, {1, n, s}));
    const NetworkSpec spec = netzoo::phase_student_spec(job.arch.family, job.arch.scale);
    const std::uint64_t init_seed = derive_seed(
        master, {2, static_cast<std::uint64_t>(job.arch.family), static_cast<std::uint64_t>(job.arch.scale), n, s});

    std::size_t best = 0;
    for (std::size_t k = 0; k < lrs; ++k) {
      const double lr = train.learning_rates[k];
      const TrainResult tr = gd_train(spec, train, data, lr, init_seed);
      double test = tr.diverged ? kInf : mse(tr.params, test_set);
      if (!std::isfinite(test)) test = kInf;
      SweepRun& run = result.runs[j * lrs + k];
      run = {job.arch, job.n, job.seed_index, lr, tr.steps, tr.final_train_mse, test, tr.diverged};
      const SweepRun& cur = result.runs[j * lrs + best];
      if (k > 0 && (cur.diverged || run.test_mse < cur.test_mse) && !run.diverged) best = k;
    }
    result.cells[j] = result.runs[j * lrs + best];
  });
  return result;
}

std::string sweep_csv(const std::vector<SweepRun>& runs) {
  std::ostringstream os;
  os << "architecture,N,n,seed,lr,steps,train_mse,test_mse,diverged\n";
  for (const auto& r : runs)
    os << label(r.arch) << ',' << r.arch.scale << ',' << r.n << ',' << r.seed_index << ',' << fmt(r.learning_rate)
       << ',' << r.steps << ',' << fmt(r.train_mse) << ',' << fmt(r.test_mse) << ',' << (r.diverged ? "true" : "false")
       << '\n';
  return os.str();
}

std::string grid_csv(const SweepResult& result) {
  std::ostringstream os;
  os << "architecture,N,parameters,model_rank";
  for (int n = result.n_min; n <= result.n_max; ++n) os << ",n=" << n;
  os << '\n';
  for (const auto& info : result.architectures) {
    os << label(info.arch) << ',' << info.arch.scale << ',' << info.parameter_count << ','
       << (info.model_rank ? std::to_string(*info.model_rank) : "");
    for (int n = result.n_min; n <= result.n_max; ++n) os << ',' << fmt(result.mean_test_mse(info.arch, n));
    os << '\n';
  }
  return os.str();
}

}  // namespace llrkit::trainlab
