#include "llrkit/netzoo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "llrkit/errors.hpp"

namespace llrkit::netzoo {

namespace {

int ipow(int base, int exp) {
  int r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

std::size_t product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int s : shape) n *= static_cast<std::size_t>(s);
  return n;
}

// Axis extents of a conv grid: {n} or {n, n}.
std::vector<int> grid(int conv_dims, int n) { return std::vector<int>(conv_dims, n); }

std::vector<int> concat(std::vector<int> a, const std::vector<int>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

std::string_view to_string(Family f) {
  switch (f) {
    case Family::FC: return "fc";
    case Family::CNN_WS: return "cnn-ws";
    case Family::CNN_NS: return "cnn-ns";
  }
  return "?";
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Gelu: return "gelu";
  }
  return "?";
}

std::string_view to_string(Role r) {
  switch (r) {
    case Role::Weight: return "weight";
    case Role::Bias: return "bias";
    case Role::Kernel: return "kernel";
    case Role::OutputWeight: return "output_weight";
  }
  return "?";
}

Family parse_family(std::string_view s) {
  if (s == "fc" || s == "fc2") return Family::FC;
  if (s == "cnn-ws") return Family::CNN_WS;
  if (s == "cnn-ns") return Family::CNN_NS;
  throw ParseError("unknown network family '" + std::string(s) + "'");
}

Activation parse_activation(std::string_view s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "gelu") return Activation::Gelu;
  throw ParseError("unknown activation '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// NetworkSpec

NetworkSpec NetworkSpec::fc(int d, std::vector<int> widths, bool hidden_bias, bool output_bias,
                            Activation act) {
  NetworkSpec s;
  s.family = Family::FC;
  s.input_dim = d;
  s.hidden_widths = std::move(widths);
  s.hidden_bias = hidden_bias;
  s.output_bias = output_bias;
  s.activation = act;
  s.validate();
  return s;
}

NetworkSpec NetworkSpec::cnn(Family family, int d, int s, int m, int conv_dims, bool hidden_bias,
                             bool output_bias, Activation act) {
  NetworkSpec n;
  n.family = family;
  n.input_dim = d;
  n.kernel_size = s;
  n.kernel_count = m;
  n.conv_dims = conv_dims;
  n.hidden_bias = hidden_bias;
  n.output_bias = output_bias;
  n.activation = act;
  n.validate();
  return n;
}

void NetworkSpec::validate() const {
  if (input_dim < 1) throw PreconditionError("input_dim must be positive");
  if (family == Family::FC) {
    if (hidden_widths.empty()) throw PreconditionError("FC network needs at least one hidden layer");
    for (int w : hidden_widths)
      if (w < 1) throw PreconditionError("hidden widths must be positive");
  } else {
    if (conv_dims != 1 && conv_dims != 2) throw PreconditionError("conv_dims must be 1 or 2");
    if (kernel_count < 1) throw PreconditionError("kernel_count must be positive");
    if (kernel_size < 1 || kernel_size > input_dim)
      throw PreconditionError("kernel_size must satisfy 1 <= s <= d");
  }
}

int NetworkSpec::depth() const {
  return family == Family::FC ? static_cast<int>(hidden_widths.size()) + 1 : 2;
}

int NetworkSpec::input_size() const {
  return family == Family::FC ? input_dim : ipow(input_dim, conv_dims);
}

int NetworkSpec::positions() const { return ipow(positions_per_axis(), conv_dims); }
int NetworkSpec::patch_size() const { return ipow(kernel_size, conv_dims); }

std::size_t NetworkSpec::parameter_count() const { return Layout(*this).size(); }

bool NetworkSpec::is_plain_two_layer_tanh() const {
  return depth() == 2 && activation == Activation::Tanh && !hidden_bias && !output_bias;
}

// ---------------------------------------------------------------------------
// Layout

std::size_t Block::size() const { return product(shape); }

Layout::Layout(const NetworkSpec& spec) {
  spec.validate();
  auto add = [this](int layer, Role role, std::vector<int> shape) {
    Block b{layer, role, std::move(shape), size_};
    size_ += b.size();
    blocks_.push_back(std::move(b));
  };
  if (spec.family == Family::FC) {
    int prev = spec.input_dim;
    const int L = spec.depth();
    for (int l = 1; l < L; ++l) {
      const int m = spec.hidden_widths[static_cast<std::size_t>(l - 1)];
      add(l, Role::Weight, {m, prev});
      if (spec.hidden_bias) add(l, Role::Bias, {m});
      prev = m;
    }
    add(L, Role::OutputWeight, {prev});
    if (spec.output_bias) add(L, Role::Bias, {1});
    return;
  }
  const int m = spec.kernel_count;
  const auto pos = grid(spec.conv_dims, spec.positions_per_axis());
  const auto ker = grid(spec.conv_dims, spec.kernel_size);
  if (spec.family == Family::CNN_WS) {
    add(1, Role::Kernel, concat({m}, ker));
    if (spec.hidden_bias) add(1, Role::Bias, {m});
  } else {
    add(1, Role::Kernel, concat(concat({m}, pos), ker));
    if (spec.hidden_bias) add(1, Role::Bias, concat({m}, pos));
  }
  add(2, Role::OutputWeight, concat({m}, pos));
  if (spec.output_bias) add(2, Role::Bias, {1});
}

bool Layout::has(int layer, Role role) const {
  return std::any_of(blocks_.begin(), blocks_.end(),
                     [&](const Block& b) { return b.layer == layer && b.role == role; });
}

const Block& Layout::block(int layer, Role role) const {
  for (const Block& b : blocks_)
    if (b.layer == layer && b.role == role) return b;
  throw PreconditionError("no block (layer " + std::to_string(layer) + ", " +
                          std::string(to_string(role)) + ") in this layout");
}

std::size_t Layout::offset(int layer, Role role, std::span<const int> index) const {
  const Block& b = block(layer, role);
  if (index.size() != b.shape.size()) throw PreconditionError("index rank does not match block shape");
  std::size_t flat = 0;
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] < 0 || index[k] >= b.shape[k]) throw PreconditionError("block index out of range");
    flat = flat * static_cast<std::size_t>(b.shape[k]) + static_cast<std::size_t>(index[k]);
  }
  return b.offset + flat;
}

// ---------------------------------------------------------------------------
// ParamPoint

ParamPoint::ParamPoint(NetworkSpec spec)
    : spec_(std::move(spec)), layout_(spec_), values_(layout_.size(), 0.0) {}

ParamPoint::ParamPoint(NetworkSpec spec, std::vector<double> values)
    : spec_(std::move(spec)), layout_(spec_), values_(std::move(values)) {
  if (values_.size() != layout_.size())
    throw ShapeError("parameter vector has " + std::to_string(values_.size()) + " entries, spec needs " +
                     std::to_string(layout_.size()));
}

std::span<const double> ParamPoint::block(int layer, Role role) const {
  const Block& b = layout_.block(layer, role);
  return std::span<const double>(values_).subspan(b.offset, b.size());
}

std::span<double> ParamPoint::block(int layer, Role role) {
  const Block& b = layout_.block(layer, role);
  return std::span<double>(values_).subspan(b.offset, b.size());
}

double& ParamPoint::at(int layer, Role role, std::initializer_list<int> index) {
  return values_[layout_.offset(layer, role, index)];
}

double ParamPoint::at(int layer, Role role, std::initializer_list<int> index) const {
  return values_[layout_.offset(layer, role, index)];
}

std::vector<BlockValues> ParamPoint::to_structured() const {
  std::vector<BlockValues> out;
  out.reserve(layout_.blocks().size());
  for (const Block& b : layout_.blocks()) {
    auto first = values_.begin() + static_cast<std::ptrdiff_t>(b.offset);
    out.push_back({b.layer, b.role, b.shape, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(b.size()))});
  }
  return out;
}

ParamPoint ParamPoint::from_structured(NetworkSpec spec, std::span<const BlockValues> blocks) {
  ParamPoint p(std::move(spec));
  std::vector<bool> seen(p.layout_.blocks().size(), false);
  for (const BlockValues& bv : blocks) {
    const Block& b = p.layout_.block(bv.layer, bv.role);
    if (bv.shape != b.shape || bv.values.size() != b.size())
      throw ShapeError("structured block shape does not match layout");
    std::copy(bv.values.begin(), bv.values.end(), p.values_.begin() + static_cast<std::ptrdiff_t>(b.offset));
    seen[static_cast<std::size_t>(&b - p.layout_.blocks().data())] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end())
    throw ShapeError("structured view is missing blocks");
  return p;
}

bool ParamPoint::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void Dataset::validate() const {
  if (inputs.cols() < 1) throw PreconditionError("dataset is empty");
  if (labels.size() != inputs.cols()) throw PreconditionError("label count does not match input count");
  if (!inputs.allFinite() || !labels.allFinite()) throw PreconditionError("dataset contains non-finite values");
}

// ---------------------------------------------------------------------------
// Activations

ActivationValue activate(Activation act, double z) {
  switch (act) {
    case Activation::Tanh: {
      const double t = std::tanh(z);
      return {t, 1.0 - t * t};
    }
    case Activation::Sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-z));
      return {s, s * (1.0 - s)};
    }
    case Activation::Gelu: {
      const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
      const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
      return {z * cdf, cdf + z * pdf};
    }
  }
  return {0.0, 0.0};
}

// ---------------------------------------------------------------------------
// Evaluator

Evaluator::Evaluator(const NetworkSpec& spec) : spec_(spec) {
  const Layout layout(spec_);
  param_count_ = layout.size();
  x_.resize(static_cast<std::size_t>(spec_.input_size()));
  if (spec_.family == Family::FC) {
    const int L = spec_.depth();
    sizes_.push_back(spec_.input_dim);
    for (int w : spec_.hidden_widths) sizes_.push_back(w);
    weight_off_.assign(static_cast<std::size_t>(L), 0);
    bias_off_.assign(static_cast<std::size_t>(L), 0);
    h_.resize(static_cast<std::size_t>(L));
    slope_.resize(static_cast<std::size_t>(L));
    int widest = 0;
    for (int l = 1; l < L; ++l) {
      const auto ul = static_cast<std::size_t>(l);
      weight_off_[ul] = layout.block(l, Role::Weight).offset;
      if (spec_.hidden_bias) bias_off_[ul] = layout.block(l, Role::Bias).offset;
      h_[ul].resize(static_cast<std::size_t>(sizes_[ul]));
      slope_[ul].resize(static_cast<std::size_t>(sizes_[ul]));
      widest = std::max(widest, sizes_[ul]);
    }
    out_off_ = layout.block(L, Role::OutputWeight).offset;
    if (spec_.output_bias) out_bias_off_ = layout.block(L, Role::Bias).offset;
    delta_.resize(static_cast<std::size_t>(widest));
    delta_prev_.resize(static_cast<std::size_t>(widest));
    return;
  }
  kernel_off_ = layout.block(1, Role::Kernel).offset;
  if (spec_.hidden_bias) kbias_off_ = layout.block(1, Role::Bias).offset;
  out_off_ = layout.block(2, Role::OutputWeight).offset;
  if (spec_.output_bias) out_bias_off_ = layout.block(2, Role::Bias).offset;

  const int d = spec_.input_dim;
  const int s = spec_.kernel_size;
  const int P = spec_.positions_per_axis();
  patches_.resize(static_cast<std::size_t>(spec_.positions()));
  for (int p = 0; p < spec_.positions(); ++p) {
    auto& patch = patches_[static_cast<std::size_t>(p)];
    if (spec_.conv_dims == 1) {
      for (int a = 0; a < s; ++a) patch.push_back(p + a);
    } else {
      const int i = p / P, j = p % P;
      for (int a = 0; a < s; ++a)
        for (int b = 0; b < s; ++b) patch.push_back((i + a) * d + (j + b));
    }
  }
  const auto units = static_cast<std::size_t>(spec_.kernel_count * spec_.positions());
  conv_h_.resize(units);
  conv_slope_.resize(units);
}

double Evaluator::forward(std::span<const double> theta, std::span<const double> x) {
  if (x.size() != x_.size())
    throw ShapeError("input has " + std::to_string(x.size()) + " entries, network expects " +
                     std::to_string(x_.size()));
  if (theta.size() != param_count_) throw ShapeError("parameter vector size mismatch");
  std::copy(x.begin(), x.end(), x_.begin());
  return spec_.family == Family::FC ? forward_fc(theta) : forward_cnn(theta);
}

void Evaluator::accumulate_gradient(std::span<const double> theta, double scale, std::span<double> grad) {
  if (spec_.family == Family::FC)
    backward_fc(theta, scale, grad);
  else
    backward_cnn(theta, scale, grad);
}

double Evaluator::forward_fc(std::span<const double> theta) {
  const int L = spec_.depth();
  const double* prev = x_.data();
  for (int l = 1; l < L; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    const int rows = sizes_[ul], cols = sizes_[ul - 1];
    const double* W = theta.data() + weight_off_[ul];
    for (int i = 0; i < rows; ++i) {
      double z = spec_.hidden_bias ? theta[bias_off_[ul] + static_cast<std::size_t>(i)] : 0.0;
      const double* row = W + static_cast<std::ptrdiff_t>(i) * cols;
      for (int j = 0; j < cols; ++j) z += row[j] * prev[j];
      const auto [v, dv] = activate(spec_.activation, z);
      h_[ul][static_cast<std::size_t>(i)] = v;
      slope_[ul][static_cast<std::size_t>(i)] = dv;
    }
    prev = h_[ul].data();
  }
  const int last = sizes_.back();
  double f = spec_.output_bias ? theta[out_bias_off_] : 0.0;
  for (int j = 0; j < last; ++j) f += theta[out_off_ + static_cast<std::size_t>(j)] * prev[j];
  return f;
}

void Evaluator::backward_fc(std::span<const double> theta, double scale, std::span<double> grad) {
  const int L = spec_.depth();
  const auto top = static_cast<std::size_t>(L - 1);
  const int last = sizes_.back();
  for (int j = 0; j < last; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    grad[out_off_ + uj] += scale * h_[top][uj];
    delta_[uj] = scale * theta[out_off_ + uj] * slope_[top][uj];
  }
  if (spec_.output_bias) grad[out_bias_off_] += scale;

  for (int l = L - 1; l >= 1; --l) {
    const auto ul = static_cast<std::size_t>(l);
    const int rows = sizes_[ul], cols = sizes_[ul - 1];
    const double* prev = l == 1 ? x_.data() : h_[ul - 1].data();
    double* gW = grad.data() + weight_off_[ul];
    for (int i = 0; i < rows; ++i) {
      const double di = delta_[static_cast<std::size_t>(i)];
      double* grow = gW + static_cast<std::ptrdiff_t>(i) * cols;
      for (int j = 0; j < cols; ++j) grow[j] += di * prev[j];
      if (spec_.hidden_bias) grad[bias_off_[ul] + static_cast<std::size_t>(i)] += di;
    }
    if (l == 1) break;
    const double* W = theta.data() + weight_off_[ul];
    for (int j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (int i = 0; i < rows; ++i) acc += W[static_cast<std::ptrdiff_t>(i) * cols + j] * delta_[static_cast<std::size_t>(i)];
      delta_prev_[static_cast<std::size_t>(j)] = acc * slope_[ul - 1][static_cast<std::size_t>(j)];
    }
    std::swap(delta_, delta_prev_);
  }
}

double Evaluator::forward_cnn(std::span<const double> theta) {
  const int m = spec_.kernel_count;
  const int P = spec_.positions();
  const int q = spec_.patch_size();
  const bool shared = spec_.family == Family::CNN_WS;
  double f = spec_.output_bias ? theta[out_bias_off_] : 0.0;
  for (int l = 0; l < m; ++l) {
    for (int p = 0; p < P; ++p) {
      const std::size_t unit = static_cast<std::size_t>(l * P + p);
      const std::size_t k0 = kernel_off_ + (shared ? static_cast<std::size_t>(l * q) : unit * static_cast<std::size_t>(q));
      double z = 0.0;
      if (spec_.hidden_bias) z = theta[kbias_off_ + (shared ? static_cast<std::size_t>(l) : unit)];
      const auto& patch = patches_[static_cast<std::size_t>(p)];
      for (int a = 0; a < q; ++a) z += theta[k0 + static_cast<std::size_t>(a)] * x_[static_cast<std::size_t>(patch[static_cast<std::size_t>(a)])];
      const auto [v, dv] = activate(spec_.activation, z);
      conv_h_[unit] = v;
      conv_slope_[unit] = dv;
      f += theta[out_off_ + unit] * v;
    }
  }
  return f;
}

void Evaluator::backward_cnn(std::span<const double> theta, double scale, std::span<double> grad) {
  const int m = spec_.kernel_count;
  const int P = spec_.positions();
  const int q = spec_.patch_size();
  const bool shared = spec_.family == Family::CNN_WS;
  if (spec_.output_bias) grad[out_bias_off_] += scale;
  for (int l = 0; l < m; ++l) {
    for (int p = 0; p < P; ++p) {
      const std::size_t unit = static_cast<std::size_t>(l * P + p);
      grad[out_off_ + unit] += scale * conv_h_[unit];
      const double delta = scale * theta[out_off_ + unit] * conv_slope_[unit];
      const std::size_t k0 = kernel_off_ + (shared ? static_cast<std::size_t>(l * q) : unit * static_cast<std::size_t>(q));
      const auto& patch = patches_[static_cast<std::size_t>(p)];
      for (int a = 0; a < q; ++a) grad[k0 + static_cast<std::size_t>(a)] += delta * x_[static_cast<std::size_t>(patch[static_cast<std::size_t>(a)])];
      if (spec_.hidden_bias) grad[kbias_off_ + (shared ? static_cast<std::size_t>(l) : unit)] += delta;
    }
  }
}

// ---------------------------------------------------------------------------

double forward(const ParamPoint& params, std::span<const double> x) {
  Evaluator ev(params.spec());
  return ev.forward(params.values(), x);
}

std::vector<double> tangent_features(const ParamPoint& params, std::span<const double> x) {
  Evaluator ev(params.spec());
  std::vector<double> grad(params.size(), 0.0);
  ev.forward(params.values(), x);
  ev.accumulate_gradient(params.values(), 1.0, grad);
  return grad;
}

namespace {
constexpr double kPhaseKernel[3] = {0.6, 0.8, 1.0};
}

ParamPoint make_phase_target() { return make_phase_target(Family::FC, false); }

ParamPoint make_phase_target(Family family, bool hidden_bias) {
  if (family == Family::FC) {
    ParamPoint p(NetworkSpec::fc(5, {3}, hidden_bias));
    for (int i = 0; i < 3; ++i) {
      for (int t = 0; t < 3; ++t) p.at(1, Role::Weight, {i, i + t}) = kPhaseKernel[t];
      p.at(2, Role::OutputWeight, {i}) = 1.0;
    }
    return p;
  }
  ParamPoint p(NetworkSpec::cnn(family, 5, 3, 1, 1, hidden_bias));
  for (int pos = 0; pos < 3; ++pos) {
    for (int t = 0; t < 3; ++t) {
      if (family == Family::CNN_WS)
        p.at(1, Role::Kernel, {0, t}) = kPhaseKernel[t];
      else
        p.at(1, Role::Kernel, {0, pos, t}) = kPhaseKernel[t];
    }
    p.at(2, Role::OutputWeight, {0, pos}) = 1.0;
  }
  return p;
}

NetworkSpec phase_student_spec(Family family, int scale) {
  if (scale < 1) throw PreconditionError("scale must be positive");
  if (family == Family::FC) return NetworkSpec::fc(5, {3 * scale}, true, false);
  return NetworkSpec::cnn(family, 5, 3, scale, 1, true, false);
}

}  // namespace llrkit::netzoo
