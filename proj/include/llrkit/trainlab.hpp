#pragma once

// Teacher-student recovery experiments: noiseless Gaussian datasets from a
// target network, full-batch gradient descent from tiny initialization, and
// sweeps over architecture scale x sample size x seed.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "llrkit/netzoo.hpp"

namespace llrkit::trainlab {

using netzoo::Dataset;
using netzoo::NetworkSpec;
using netzoo::ParamPoint;

struct TrainConfig {
  double init_std = 1e-10;
  std::vector<double> learning_rates{0.05, 0.1, 0.2, 0.35, 0.5};
  long max_steps = 200000;
  double train_loss_stop = 1e-10;  ///< on plain train MSE
  double divergence_loss = 1e6;
  long trace_every = 1000;

  void validate() const;
};

struct TracePoint {
  long step = 0;
  double train_mse = 0.0;
};

struct TrainResult {
  ParamPoint params;
  std::vector<TracePoint> trace;
  double learning_rate = 0.0;
  long steps = 0;
  double initial_train_mse = 0.0;
  double final_train_mse = 0.0;
  bool diverged = false;
};

/// Inputs iid standard normal, labels y_i = f_target(x_i).
Dataset make_dataset(const ParamPoint& target, int n, std::uint64_t seed);

/// All parameters iid N(0, init_std^2).
ParamPoint initial_point(const NetworkSpec& spec, double init_std, std::uint64_t seed);

/// Full-batch GD on R_S = (1/n) * 1/2 * sum residual^2, from initial_point(spec, ...).
TrainResult gd_train(const NetworkSpec& spec, const TrainConfig& config, const Dataset& data, double learning_rate,
                     std::uint64_t init_seed);
TrainResult gd_train_from(ParamPoint start, const TrainConfig& config, const Dataset& data, double learning_rate);

/// Plain MSE between two networks over n_test fresh standard-normal inputs.
double test_error(const ParamPoint& student, const ParamPoint& target, int n_test, std::uint64_t seed);
/// Plain MSE of a network against a labelled set.
double mse(const ParamPoint& params, const Dataset& data);

/// Damped Gauss-Newton followed by Newton polishing until the gradient of
/// 1/2 sum residual^2 has norm below tol.
struct CriticalSearch {
  ParamPoint params;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};
CriticalSearch refine_to_critical(ParamPoint start, const Dataset& data, double tol, int max_iter = 2000);

// ---------------------------------------------------------------------------
// Sweeps

struct Architecture {
  netzoo::Family family = netzoo::Family::FC;
  int scale = 1;
  bool operator==(const Architecture&) const = default;
};
std::string label(const Architecture& arch);

struct SweepConfig {
  std::vector<Architecture> architectures;
  int n_min = 1;
  int n_max = 30;
  int seeds_per_cell = 3;
  int test_size = 1000;
  double recovery_threshold = 1e-4;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
  /// N in {1, 3, 10} for each family, n in 1..30, 3 seeds.
  static SweepConfig desk_scale();
};

/// One (architecture, n, seed) cell with a single learning rate.
struct SweepRun {
  Architecture arch;
  int n = 0;
  int seed_index = 0;
  double learning_rate = 0.0;
  long steps = 0;
  double train_mse = 0.0;
  double test_mse = 0.0;
  bool diverged = false;
};

struct ArchitectureInfo {
  Architecture arch;
  std::size_t parameter_count = 0;
  std::optional<int> model_rank;  ///< rank of the target represented in this architecture
};

struct SweepResult {
  std::vector<SweepRun> cells;  ///< best learning rate per cell (by test MSE)
  std::vector<SweepRun> runs;   ///< every learning rate
  std::vector<ArchitectureInfo> architectures;
  int n_min = 1;
  int n_max = 0;

  /// Mean over seeds of the chosen cells' test MSE; +inf if a seed diverged everywhere.
  double mean_test_mse(const Architecture& arch, int n) const;
  const ArchitectureInfo& info(const Architecture& arch) const;
};

/// Representation of the target in a student architecture, used for the
/// model-rank marker. Returns nullopt when unknown.
using Representation = std::function<std::optional<ParamPoint>(const Architecture&)>;

/// The phase-transition teacher at 1x in the family, split-embedded to scale N.
std::optional<ParamPoint> phase_representation(const Architecture& arch);

SweepResult run_sweep(const SweepConfig& sweep, const TrainConfig& train, const ParamPoint& target,
                      const Representation& represent = phase_representation);

/// Long form: architecture,N,n,seed,lr,steps,train_mse,test_mse,diverged.
std::string sweep_csv(const std::vector<SweepRun>& runs);
/// One row per architecture: architecture,N,parameters,model_rank,n=<n_min>..n=<n_max> (mean test MSE).
std::string grid_csv(const SweepResult& result);

}  // namespace llrkit::trainlab
