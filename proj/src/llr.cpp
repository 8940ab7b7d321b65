#include "llrkit/llr.hpp"

#include <algorithm>
#include <sstream>

#include "llrkit/errors.hpp"
#include "llrkit/random.hpp"

namespace llrkit::llr {

ModelRank model_rank(const ParamPoint& params, const rank::MonteCarloOptions& opts) {
  ModelRank out;
  out.oracle = rank::model_rank_mc(params, opts);
  out.rank = out.oracle.rank;
  if (!rank::closed_form_applies(params.spec())) return out;

  long formula = 0;
  try {
    formula = rank::rank_formula(params);
  } catch (const PreconditionError&) {
    // Input-ineffective or aliased neurons: only the oracle is defined here.
    return out;
  }
  if (formula != out.oracle.rank)
    throw NumericalError("closed-form rank " + std::to_string(formula) + " disagrees with oracle rank " +
                         std::to_string(out.oracle.rank));
  out.source = RankSource::Formula;
  out.rank = static_cast<int>(formula);
  return out;
}

LLRReport llr_check(const ParamPoint& params, const Eigen::MatrixXd& inputs, const rank::MonteCarloOptions& opts) {
  if (inputs.cols() < 1) throw PreconditionError("llr_check needs at least one input");
  LLRReport r;
  r.empirical = rank::numerical_rank(rank::empirical_tangent_matrix(params, inputs), opts.tolerance);
  const ModelRank mr = model_rank(params, opts);
  r.model = mr.oracle;
  r.model_source = mr.source;
  r.rank_S = r.empirical.rank;
  r.rank_model = mr.rank;
  r.holds = r.rank_S == r.rank_model;
  r.ill_determined = r.empirical.ill_determined() || r.model.ill_determined();
  return r;
}

SaturationCurve saturation_sweep(const ParamPoint& params, int n_max, int trials, std::uint64_t seed) {
  if (n_max < 1) throw PreconditionError("n_max must be >= 1");
  if (trials < 1) throw PreconditionError("trials must be >= 1");
  SaturationCurve curve;
  curve.rank_S.assign(static_cast<std::size_t>(n_max), 0);
  rank::MonteCarloOptions mc;
  mc.seed = derive_seed(seed, {0xC0FFEEULL});
  curve.rank_model = model_rank(params, mc).rank;

  for (int t = 0; t < trials; ++t) {
    const Eigen::MatrixXd x =
        rank::gaussian_inputs(params.spec(), n_max, derive_seed(seed, {static_cast<std::uint64_t>(t)}));
    const rank::TangentMatrix full = rank::empirical_tangent_matrix(params, x);
    for (int n = 1; n <= n_max; ++n) {
      const int r = rank::numerical_rank(Eigen::MatrixXd(full.entries.leftCols(n))).rank;
      int& slot = curve.rank_S[static_cast<std::size_t>(n - 1)];
      slot = std::max(slot, r);
    }
  }
  for (int n = 1; n <= n_max; ++n) {
    if (curve.rank_S[static_cast<std::size_t>(n - 1)] == curve.rank_model) {
      curve.n_star = n;
      break;
    }
  }
  return curve;
}

int optimistic_sample_size_numeric(const ParamPoint& params, const rank::MonteCarloOptions& opts) {
  return rank::model_rank_mc(params, opts).rank;
}

std::string to_csv(const SaturationCurve& curve) {
  std::ostringstream os;
  os << "n,rank_S,rank_model,holds\n";
  for (int n = 1; n <= curve.n_max(); ++n) {
    const int r = curve.rank_S[static_cast<std::size_t>(n - 1)];
    os << n << ',' << r << ',' << curve.rank_model << ',' << (r == curve.rank_model ? "true" : "false") << '\n';
  }
  return os.str();
}

}  // namespace llrkit::llr
