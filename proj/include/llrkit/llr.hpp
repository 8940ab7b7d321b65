#pragma once

// Local-linear-recovery checks: empirical rank vs. model rank at a parameter
// point, rank-saturation curves over nested Gaussian datasets, and numeric
// optimistic sample sizes.

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "llrkit/netzoo.hpp"
#include "llrkit/rank.hpp"

namespace llrkit::llr {

using netzoo::ParamPoint;

enum class RankSource { Formula, Oracle };

struct ModelRank {
  int rank = 0;
  RankSource source = RankSource::Oracle;
  rank::RankReport oracle;  ///< always computed; cross-checks the formula when one applies
};

/// Closed-form rank when the spec qualifies (cross-checked against the
/// Monte-Carlo oracle; a mismatch throws NumericalError), oracle otherwise.
ModelRank model_rank(const ParamPoint& params, const rank::MonteCarloOptions& opts = {});

struct LLRReport {
  int rank_S = 0;
  int rank_model = 0;
  bool holds = false;
  bool ill_determined = false;  ///< either rank had a small spectral gap
  RankSource model_source = RankSource::Oracle;
  rank::RankReport empirical;
  rank::RankReport model;
};

LLRReport llr_check(const ParamPoint& params, const Eigen::MatrixXd& inputs,
                    const rank::MonteCarloOptions& opts = {});

struct SaturationCurve {
  std::vector<int> rank_S;  ///< entry n - 1 is the max empirical rank with n samples
  int rank_model = 0;
  std::optional<int> n_star;

  int n_max() const { return static_cast<int>(rank_S.size()); }
};

/// Per trial, draws one Gaussian batch of n_max inputs and ranks every prefix.
SaturationCurve saturation_sweep(const ParamPoint& params, int n_max, int trials, std::uint64_t seed);

/// Rank of the given representation (model_rank_mc).
int optimistic_sample_size_numeric(const ParamPoint& params, const rank::MonteCarloOptions& opts = {});

/// CSV with header n,rank_S,rank_model,holds.
std::string to_csv(const SaturationCurve& curve);

}  // namespace llrkit::llr
