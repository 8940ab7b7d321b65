#pragma once

// Empirical tangent matrices, numerical rank, the Monte-Carlo model-rank
// oracle, and the closed-form model-rank / optimistic-sample-size formulas
// for two-layer tanh networks.

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "llrkit/netzoo.hpp"

namespace llrkit::rank {

using netzoo::ParamPoint;

/// M x n matrix whose column i is the tangent feature vector at x_i.
struct TangentMatrix {
  Eigen::MatrixXd entries;
  std::string params_digest;
  std::string inputs_digest;
};

/// tau = relative_factor * sigma_max * max(M, n) * eps, unless `absolute` is set.
struct TolerancePolicy {
  double relative_factor = 100.0;
  std::optional<double> absolute;
};

/// Gap ratios below this mark a rank as ill-determined.
inline constexpr double kIllDeterminedGap = 1e3;

struct RankReport {
  int rank = 0;
  std::vector<double> singular_values;  ///< descending
  double tolerance = 0.0;
  double gap_ratio = 0.0;               ///< sigma_rank / sigma_{rank+1}; +inf if rank == min(M, n) or rank == 0
  int trials = 1;
  bool ill_determined() const { return gap_ratio < kIllDeterminedGap; }
};

TangentMatrix empirical_tangent_matrix(const ParamPoint& params, const Eigen::MatrixXd& inputs);

RankReport numerical_rank(const Eigen::MatrixXd& matrix, const TolerancePolicy& tol = {});
RankReport numerical_rank(const TangentMatrix& tangent, const TolerancePolicy& tol = {});

struct MonteCarloOptions {
  int oversample = 16;
  int trials = 3;
  std::uint64_t seed = 0;
  TolerancePolicy tolerance;
};

/// Standard-normal inputs of the spec's shape, one per column.
Eigen::MatrixXd gaussian_inputs(const netzoo::NetworkSpec& spec, int n, std::uint64_t seed);

/// Model rank at `params`: max numerical rank over `trials` Gaussian tangent
/// matrices with M + oversample columns.
RankReport model_rank_mc(const ParamPoint& params, const MonteCarloOptions& opts = {});

/// Absolute tolerance used to decide equality / zero-ness of weight arrays.
/// abs_tol = 0 gives exact comparison.
struct EqualityPolicy {
  double abs_tol = 1e-12;
  static EqualityPolicy exact() { return {0.0}; }
};

struct EffectiveProfile {
  // Two-layer FC.
  int m_w = 0;                    ///< nonzero weight directions up to sign
  int m_a = 0;                    ///< independent effective neurons (zero-weight class counted once)
  int zero_weight_effective = 0;  ///< raw count of neurons with w = 0, a != 0
  // CNNs.
  int m_K = 0;                                ///< independent (padded) kernels up to sign
  std::vector<std::vector<int>> kernel_classes;  ///< CNN-ws: h(K) per sign class
  int m_null = 0;                             ///< neurons with zero output weight (CNN-ns)
};

/// m_w, m_a for an L = 2, no-bias tanh FC point. Throws UnsupportedSpec otherwise.
EffectiveProfile effective_profile_fc2(const ParamPoint& params, const EqualityPolicy& eq = {});
long rank_formula_fc2(const EffectiveProfile& profile, int d);

/// Kernel classes and span dimensions for a no-bias tanh CNN point.
/// Throws PreconditionError for input-ineffective kernels/neurons, or when
/// padded kernels of different neurons alias under translation.
EffectiveProfile effective_profile_cnn_ws(const ParamPoint& params, const EqualityPolicy& eq = {});
EffectiveProfile effective_profile_cnn_ns(const ParamPoint& params, const EqualityPolicy& eq = {});

/// m_a s^k + m_K P^k.
long rank_formula_cnn_ws(const ParamPoint& params, const EqualityPolicy& eq = {});
/// m_a s^k + m_K.
long rank_formula_cnn_ns(const ParamPoint& params, const EqualityPolicy& eq = {});

/// True when a closed-form rank formula covers this spec.
bool closed_form_applies(const netzoo::NetworkSpec& spec);
/// Dispatches to the family's formula; throws UnsupportedSpec when none applies.
long rank_formula(const ParamPoint& params, const EqualityPolicy& eq = {});

// Optimistic sample sizes. `dims` is the number of convolution index axes.
long opt_sample_size_fc2(long k, long d);
long opt_sample_size_cnn_ws(long k, long d, long s, int dims = 2);
long opt_sample_size_cnn_ns(long k, long d, long s, long m_null, int dims = 2);
/// Depth-L no-bias upper bound: d m'_1 + m'_1 m'_2 + ... + m'_{L-1}.
long upper_bound_dnn(const std::vector<int>& narrow_widths, long d);

struct ComparisonRow {
  long k = 0;
  long cnn_ws = 0;
  long cnn_ns = 0;
  long fc = 0;
};
/// Optimistic sample sizes of k-kernel CNN functions, k = 0..m, in the
/// shared CNN, unshared CNN and fully-connected net (2-d inputs).
std::vector<ComparisonRow> comparison_table(long d, long s, long m, long m_null = 0);

}  // namespace llrkit::rank
