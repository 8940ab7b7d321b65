#include "llrkit/rank.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>

#include "llrkit/digest.hpp"
#include "llrkit/errors.hpp"
#include "llrkit/random.hpp"

namespace llrkit::rank {

using netzoo::Family;
using netzoo::NetworkSpec;
using netzoo::Role;

TangentMatrix empirical_tangent_matrix(const ParamPoint& params, const Eigen::MatrixXd& inputs) {
  const NetworkSpec& spec = params.spec();
  if (inputs.rows() != spec.input_size())
    throw ShapeError("inputs have " + std::to_string(inputs.rows()) + " rows, network expects " +
                     std::to_string(spec.input_size()));
  if (!params.all_finite()) throw PreconditionError("parameter point has non-finite values");

  TangentMatrix t;
  t.entries = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(params.size()), inputs.cols());
  netzoo::Evaluator ev(spec);
  for (Eigen::Index i = 0; i < inputs.cols(); ++i) {
    ev.forward(params.values(), {inputs.col(i).data(), static_cast<std::size_t>(inputs.rows())});
    ev.accumulate_gradient(params.values(), 1.0,
                           {t.entries.col(i).data(), static_cast<std::size_t>(t.entries.rows())});
  }
  t.params_digest = digest(params);
  t.inputs_digest = digest(inputs);
  return t;
}

RankReport numerical_rank(const Eigen::MatrixXd& matrix, const TolerancePolicy& tol) {
  RankReport r;
  const Eigen::Index min_dim = std::min(matrix.rows(), matrix.cols());
  if (min_dim == 0) {
    r.gap_ratio = std::numeric_limits<double>::infinity();
    return r;
  }
  if (!matrix.allFinite()) throw NumericalError("matrix " + digest(matrix) + " has non-finite entries");

  Eigen::BDCSVD<Eigen::MatrixXd> svd(matrix);
  if (svd.info() != Eigen::Success) throw NumericalError("SVD did not converge for matrix " + digest(matrix));
  const Eigen::VectorXd& sv = svd.singularValues();
  r.singular_values.assign(sv.data(), sv.data() + sv.size());
  std::sort(r.singular_values.begin(), r.singular_values.end(), std::greater<>());

  const double sigma_max = r.singular_values.front();
  const auto big_dim = static_cast<double>(std::max(matrix.rows(), matrix.cols()));
  r.tolerance = tol.absolute ? *tol.absolute
                             : tol.relative_factor * sigma_max * big_dim * std::numeric_limits<double>::epsilon();
  r.rank = static_cast<int>(std::count_if(r.singular_values.begin(), r.singular_values.end(),
                                          [&](double s) { return s > r.tolerance; }));
  const auto ur = static_cast<std::size_t>(r.rank);
  if (r.rank == 0 || ur == r.singular_values.size() || r.singular_values[ur] == 0.0)
    r.gap_ratio = std::numeric_limits<double>::infinity();
  else
    r.gap_ratio = r.singular_values[ur - 1] / r.singular_values[ur];
  return r;
}

RankReport numerical_rank(const TangentMatrix& tangent, const TolerancePolicy& tol) {
  try {
    return numerical_rank(tangent.entries, tol);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(e.what()) + " (params " + tangent.params_digest + ", inputs " +
                         tangent.inputs_digest + ")");
  }
}

Eigen::MatrixXd gaussian_inputs(const NetworkSpec& spec, int n, std::uint64_t seed) {
  Eigen::MatrixXd x(spec.input_size(), n);
  Rng rng(seed);
  fill_normal(rng, {x.data(), static_cast<std::size_t>(x.size())});
  return x;
}

RankReport model_rank_mc(const ParamPoint& params, const MonteCarloOptions& opts) {
  if (opts.oversample < 1) throw PreconditionError("oversample must be >= 1");
  if (opts.trials < 1) throw PreconditionError("trials must be >= 1");
  const int n = static_cast<int>(params.size()) + opts.oversample;
  RankReport best;
  best.rank = -1;
  for (int t = 0; t < opts.trials; ++t) {
    const Eigen::MatrixXd x = gaussian_inputs(params.spec(), n, derive_seed(opts.seed, {static_cast<std::uint64_t>(t)}));
    RankReport r = numerical_rank(empirical_tangent_matrix(params, x), opts.tolerance);
    if (r.rank > best.rank) best = std::move(r);
  }
  best.trials = opts.trials;
  return best;
}

// ---------------------------------------------------------------------------
// Effective profiles

namespace {

bool is_zero(std::span<const double> v, double tol) {
  return std::all_of(v.begin(), v.end(), [tol](double x) { return std::abs(x) <= tol; });
}

// Sign-canonical copy: the first component with |c| > tol becomes positive.
std::vector<double> canonical(std::span<const double> v, double tol) {
  std::vector<double> c(v.begin(), v.end());
  for (double x : c) {
    if (std::abs(x) > tol) {
      if (x < 0) std::transform(c.begin(), c.end(), c.begin(), [](double y) { return -y; });
      break;
    }
  }
  return c;
}

bool close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::abs(a[i] - b[i]) > tol) return false;
  return true;
}

// Groups vectors into classes of equality up to sign. Returns class id per item
// (-1 for zero vectors) and the number of classes.
struct SignClasses {
  std::vector<int> id;
  std::vector<std::vector<double>> representative;
};

SignClasses sign_classes(const std::vector<std::vector<double>>& items, double tol) {
  SignClasses out;
  out.id.assign(items.size(), -1);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (is_zero(items[i], tol)) continue;
    auto c = canonical(items[i], tol);
    for (std::size_t k = 0; k < out.representative.size(); ++k) {
      if (close(c, out.representative[k], tol)) {
        out.id[i] = static_cast<int>(k);
        break;
      }
    }
    if (out.id[i] < 0) {
      out.id[i] = static_cast<int>(out.representative.size());
      out.representative.push_back(std::move(c));
    }
  }
  return out;
}

void require_plain_tanh(const NetworkSpec& spec, Family family, const char* what) {
  if (spec.family != family || !spec.is_plain_two_layer_tanh())
    throw UnsupportedSpec(std::string(what) + " requires a two-layer tanh " +
                          std::string(netzoo::to_string(family)) + " network without biases");
}

// Pads kernel of position p into a d^k array (the neuron's full input weight vector).
std::vector<double> padded(const NetworkSpec& spec, std::span<const double> kernel, int p) {
  const int d = spec.input_dim, s = spec.kernel_size, P = spec.positions_per_axis();
  std::vector<double> out(static_cast<std::size_t>(spec.input_size()), 0.0);
  if (spec.conv_dims == 1) {
    for (int a = 0; a < s; ++a) out[static_cast<std::size_t>(p + a)] = kernel[static_cast<std::size_t>(a)];
  } else {
    const int i = p / P, j = p % P;
    for (int a = 0; a < s; ++a)
      for (int b = 0; b < s; ++b)
        out[static_cast<std::size_t>((i + a) * d + j + b)] = kernel[static_cast<std::size_t>(a * s + b)];
  }
  return out;
}

int span_dimension(const std::vector<std::span<const double>>& rows) {
  if (rows.empty()) return 0;
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return numerical_rank(m).rank;
}

}  // namespace

EffectiveProfile effective_profile_fc2(const ParamPoint& params, const EqualityPolicy& eq) {
  const NetworkSpec& spec = params.spec();
  require_plain_tanh(spec, Family::FC, "effective_profile_fc2");
  const int m = spec.hidden_widths.front();
  const int d = spec.input_dim;
  const auto W = params.block(1, Role::Weight);
  const auto a = params.block(2, Role::OutputWeight);

  std::vector<std::vector<double>> rows;
  for (int i = 0; i < m; ++i) {
    auto r = W.subspan(static_cast<std::size_t>(i * d), static_cast<std::size_t>(d));
    rows.emplace_back(r.begin(), r.end());
  }
  const SignClasses cls = sign_classes(rows, eq.abs_tol);

  EffectiveProfile prof;
  prof.m_w = static_cast<int>(cls.representative.size());
  std::vector<bool> effective_class(cls.representative.size(), false);
  for (int i = 0; i < m; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    if (std::abs(a[ui]) <= eq.abs_tol) continue;
    if (cls.id[ui] < 0)
      ++prof.zero_weight_effective;
    else
      effective_class[static_cast<std::size_t>(cls.id[ui])] = true;
  }
  prof.m_a = static_cast<int>(std::count(effective_class.begin(), effective_class.end(), true)) +
             (prof.zero_weight_effective > 0 ? 1 : 0);
  return prof;
}

long rank_formula_fc2(const EffectiveProfile& profile, int d) {
  return static_cast<long>(profile.m_w) + static_cast<long>(profile.m_a) * d;
}

EffectiveProfile effective_profile_cnn_ws(const ParamPoint& params, const EqualityPolicy& eq) {
  const NetworkSpec& spec = params.spec();
  require_plain_tanh(spec, Family::CNN_WS, "effective_profile_cnn_ws");
  const int m = spec.kernel_count;
  const auto q = static_cast<std::size_t>(spec.patch_size());
  const auto P = static_cast<std::size_t>(spec.positions());
  const auto K = params.block(1, Role::Kernel);
  const auto A = params.block(2, Role::OutputWeight);

  std::vector<std::vector<double>> kernels;
  for (int l = 0; l < m; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    auto k = K.subspan(ul * q, q);
    if (is_zero(k, eq.abs_tol) && !is_zero(A.subspan(ul * P, P), eq.abs_tol))
      throw PreconditionError("kernel " + std::to_string(l) + " is input-ineffective (zero kernel, nonzero outputs)");
    kernels.emplace_back(k.begin(), k.end());
  }
  const SignClasses cls = sign_classes(kernels, eq.abs_tol);

  EffectiveProfile prof;
  prof.m_K = static_cast<int>(cls.representative.size());
  prof.kernel_classes.resize(cls.representative.size());
  for (int l = 0; l < m; ++l)
    if (cls.id[static_cast<std::size_t>(l)] >= 0)
      prof.kernel_classes[static_cast<std::size_t>(cls.id[static_cast<std::size_t>(l)])].push_back(l);

  for (const auto& members : prof.kernel_classes) {
    std::vector<std::span<const double>> outs;
    for (int l : members) outs.push_back(A.subspan(static_cast<std::size_t>(l) * P, P));
    prof.m_a += span_dimension(outs);
  }

  // Translated copies of different kernels must not coincide as neurons.
  std::vector<std::vector<double>> neurons;
  std::vector<int> owner;
  for (std::size_t c = 0; c < cls.representative.size(); ++c) {
    for (std::size_t p = 0; p < P; ++p) {
      neurons.push_back(padded(spec, cls.representative[c], static_cast<int>(p)));
      owner.push_back(static_cast<int>(c));
    }
  }
  const SignClasses neuron_cls = sign_classes(neurons, eq.abs_tol);
  std::vector<int> class_owner(neuron_cls.representative.size(), -1);
  for (std::size_t i = 0; i < neurons.size(); ++i) {
    int& o = class_owner[static_cast<std::size_t>(neuron_cls.id[i])];
    if (o >= 0 && o != owner[i])
      throw PreconditionError("kernels of different classes coincide after translation; formula does not apply");
    o = owner[i];
  }
  return prof;
}

EffectiveProfile effective_profile_cnn_ns(const ParamPoint& params, const EqualityPolicy& eq) {
  const NetworkSpec& spec = params.spec();
  require_plain_tanh(spec, Family::CNN_NS, "effective_profile_cnn_ns");
  const int m = spec.kernel_count;
  const int P = spec.positions();
  const auto q = static_cast<std::size_t>(spec.patch_size());
  const auto K = params.block(1, Role::Kernel);
  const auto A = params.block(2, Role::OutputWeight);

  EffectiveProfile prof;
  std::vector<std::vector<double>> neurons;
  std::vector<int> position;
  std::vector<bool> effective;
  for (int l = 0; l < m; ++l) {
    for (int p = 0; p < P; ++p) {
      const auto unit = static_cast<std::size_t>(l * P + p);
      auto k = K.subspan(unit * q, q);
      const bool zero_out = std::abs(A[unit]) <= eq.abs_tol;
      if (is_zero(k, eq.abs_tol) && !zero_out)
        throw PreconditionError("neuron (" + std::to_string(l) + ", " + std::to_string(p) +
                                ") is input-ineffective (zero kernel, nonzero output)");
      if (zero_out) ++prof.m_null;
      neurons.push_back(padded(spec, k, p));
      position.push_back(p);
      effective.push_back(!zero_out);
    }
  }
  const SignClasses cls = sign_classes(neurons, eq.abs_tol);
  prof.m_K = static_cast<int>(cls.representative.size());

  std::vector<int> effective_position(cls.representative.size(), -1);
  for (std::size_t i = 0; i < neurons.size(); ++i) {
    if (cls.id[i] < 0 || !effective[i]) continue;
    int& pos = effective_position[static_cast<std::size_t>(cls.id[i])];
    if (pos >= 0 && pos != position[i])
      throw PreconditionError("effective neurons at different positions share a padded kernel; formula does not apply");
    pos = position[i];
  }
  prof.m_a = static_cast<int>(std::count_if(effective_position.begin(), effective_position.end(),
                                            [](int p) { return p >= 0; }));
  return prof;
}

long rank_formula_cnn_ws(const ParamPoint& params, const EqualityPolicy& eq) {
  const auto prof = effective_profile_cnn_ws(params, eq);
  const NetworkSpec& spec = params.spec();
  return static_cast<long>(prof.m_a) * spec.patch_size() + static_cast<long>(prof.m_K) * spec.positions();
}

long rank_formula_cnn_ns(const ParamPoint& params, const EqualityPolicy& eq) {
  const auto prof = effective_profile_cnn_ns(params, eq);
  return static_cast<long>(prof.m_a) * params.spec().patch_size() + prof.m_K;
}

bool closed_form_applies(const NetworkSpec& spec) { return spec.is_plain_two_layer_tanh(); }

long rank_formula(const ParamPoint& params, const EqualityPolicy& eq) {
  switch (params.spec().family) {
    case Family::FC:
      return rank_formula_fc2(effective_profile_fc2(params, eq), params.spec().input_dim);
    case Family::CNN_WS: return rank_formula_cnn_ws(params, eq);
    case Family::CNN_NS: return rank_formula_cnn_ns(params, eq);
  }
  throw UnsupportedSpec("unknown family");
}

// ---------------------------------------------------------------------------
// Closed-form optimistic sample sizes

namespace {

long lpow(long base, int exp) {
  long r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

void check_conv(long k, long d, long s, int dims) {
  if (k < 0) throw PreconditionError("k must be nonnegative");
  if (d < 1 || s < 1 || s > d) throw PreconditionError("need 1 <= s <= d");
  if (dims != 1 && dims != 2) throw PreconditionError("dims must be 1 or 2");
}

}  // namespace

long opt_sample_size_fc2(long k, long d) {
  if (k < 0 || d < 1) throw PreconditionError("need k >= 0 and d >= 1");
  return k * (d + 1);
}

long opt_sample_size_cnn_ws(long k, long d, long s, int dims) {
  check_conv(k, d, s, dims);
  return k * (lpow(s, dims) + lpow(d + 1 - s, dims));
}

long opt_sample_size_cnn_ns(long k, long d, long s, long m_null, int dims) {
  check_conv(k, d, s, dims);
  const long neurons = k * lpow(d + 1 - s, dims);
  if (m_null < 0 || m_null > neurons) throw PreconditionError("need 0 <= m_null <= k (d+1-s)^dims");
  return (lpow(s, dims) + 1) * (neurons - m_null);
}

long upper_bound_dnn(const std::vector<int>& widths, long d) {
  if (widths.empty() || d < 1) throw PreconditionError("need at least one hidden width and d >= 1");
  for (int w : widths)
    if (w < 1) throw PreconditionError("widths must be positive");
  long total = d * widths.front();
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) total += static_cast<long>(widths[i]) * widths[i + 1];
  return total + widths.back();
}

std::vector<ComparisonRow> comparison_table(long d, long s, long m, long m_null) {
  check_conv(m, d, s, 2);
  std::vector<ComparisonRow> rows;
  for (long k = 0; k <= m; ++k) {
    ComparisonRow row{k, 0, 0, 0};
    if (k > 0) {
      row.cnn_ws = opt_sample_size_cnn_ws(k, d, s, 2);
      row.cnn_ns = opt_sample_size_cnn_ns(k, d, s, m_null, 2);
      row.fc = (d * d + 1) * (k * lpow(d + 1 - s, 2) - m_null);
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace llrkit::rank
