#include "llrkit/embedding.hpp"

#include <algorithm>
#include <cmath>

#include "llrkit/errors.hpp"
#include "llrkit/rank.hpp"

namespace llrkit::embedding {

using netzoo::Family;
using netzoo::Role;

int EmbeddingPlan::added() const {
  int k = 0;
  for (const auto& s : steps) k += s.kind == StepKind::Split ? 1 : s.count;
  return k;
}

namespace {

// Width of the embeddable unit at `layer` and its fan-in (weights per new unit).
struct Slot {
  int width;
  std::size_t fan_in;
};

Slot slot_of(const NetworkSpec& spec, int layer) {
  if (spec.family == Family::FC) {
    if (layer < 1 || layer >= spec.depth())
      throw PreconditionError("layer " + std::to_string(layer) + " is not a hidden layer");
    const int prev = layer == 1 ? spec.input_dim : spec.hidden_widths[static_cast<std::size_t>(layer - 2)];
    return {spec.hidden_widths[static_cast<std::size_t>(layer - 1)], static_cast<std::size_t>(prev)};
  }
  if (layer != 1) throw PreconditionError("CNN embeddings act on layer 1 (kernels)");
  const auto q = static_cast<std::size_t>(spec.patch_size());
  return {spec.kernel_count, spec.family == Family::CNN_WS ? q : q * static_cast<std::size_t>(spec.positions())};
}

NetworkSpec widened(const NetworkSpec& spec, int layer, int extra) {
  NetworkSpec out = spec;
  if (spec.family == Family::FC)
    out.hidden_widths[static_cast<std::size_t>(layer - 1)] += extra;
  else
    out.kernel_count += extra;
  return out;
}

// Copies a row-major [rows, cols] matrix into a larger [rows', cols'] one.
void copy_matrix(std::span<const double> src, int rows, int cols, std::span<double> dst, int dst_cols) {
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      dst[static_cast<std::size_t>(i * dst_cols + j)] = src[static_cast<std::size_t>(i * cols + j)];
}

// Wider point with all old parameters in place and new units zeroed.
ParamPoint grow(const ParamPoint& p, int layer, int extra) {
  const NetworkSpec& spec = p.spec();
  ParamPoint wide(widened(spec, layer, extra));
  if (spec.family == Family::FC) {
    for (const auto& b : p.layout().blocks()) {
      const auto& nb = wide.layout().block(b.layer, b.role);
      auto src = p.block(b.layer, b.role);
      auto dst = wide.block(b.layer, b.role);
      if (b.shape.size() == 2)
        copy_matrix(src, b.shape[0], b.shape[1], dst, nb.shape[1]);
      else
        std::copy(src.begin(), src.end(), dst.begin());
    }
    return wide;
  }
  // CNN blocks all lead with the kernel index, so old values form a prefix.
  for (const auto& b : p.layout().blocks()) {
    auto src = p.block(b.layer, b.role);
    std::copy(src.begin(), src.end(), wide.block(b.layer, b.role).begin());
  }
  return wide;
}

}  // namespace

NetworkSpec apply_to_spec(const NetworkSpec& spec, const EmbeddingStep& step) {
  const Slot slot = slot_of(spec, step.layer);
  if (step.kind == StepKind::Split) {
    if (step.neuron < 0 || step.neuron >= slot.width)
      throw PreconditionError("split target " + std::to_string(step.neuron) + " out of range (width " +
                              std::to_string(slot.width) + ")");
    if (!std::isfinite(step.alpha)) throw PreconditionError("split ratio must be finite");
    return widened(spec, step.layer, 1);
  }
  if (step.count < 1) throw PreconditionError("null embedding count must be >= 1");
  const auto n = step.input_init.size();
  if (n != 0 && n != slot.fan_in && n != slot.fan_in * static_cast<std::size_t>(step.count))
    throw PreconditionError("null embedding input_init must have 0, fan_in or count * fan_in entries");
  return widened(spec, step.layer, step.count);
}

EmbeddingPlan make_plan(const NetworkSpec& source, std::vector<EmbeddingStep> steps) {
  EmbeddingPlan plan{source, source, std::move(steps)};
  for (const auto& s : plan.steps) plan.target = apply_to_spec(plan.target, s);
  return plan;
}

ParamPoint split_neuron(const ParamPoint& narrow, int layer, int neuron, double alpha) {
  const NetworkSpec& spec = narrow.spec();
  const Slot slot = slot_of(spec, layer);
  apply_to_spec(spec, EmbeddingStep::split(layer, neuron, alpha));
  ParamPoint wide = grow(narrow, layer, 1);
  const int copy = slot.width;

  if (spec.family == Family::FC) {
    const auto fan_in = static_cast<int>(slot.fan_in);
    for (int j = 0; j < fan_in; ++j)
      wide.at(layer, Role::Weight, {copy, j}) = narrow.at(layer, Role::Weight, {neuron, j});
    if (spec.hidden_bias) wide.at(layer, Role::Bias, {copy}) = narrow.at(layer, Role::Bias, {neuron});
    if (layer + 1 == spec.depth()) {
      const double a = narrow.at(layer + 1, Role::OutputWeight, {neuron});
      wide.at(layer + 1, Role::OutputWeight, {neuron}) = alpha * a;
      wide.at(layer + 1, Role::OutputWeight, {copy}) = (1.0 - alpha) * a;
    } else {
      const int next = spec.hidden_widths[static_cast<std::size_t>(layer)];
      for (int i = 0; i < next; ++i) {
        const double w = narrow.at(layer + 1, Role::Weight, {i, neuron});
        wide.at(layer + 1, Role::Weight, {i, neuron}) = alpha * w;
        wide.at(layer + 1, Role::Weight, {i, copy}) = (1.0 - alpha) * w;
      }
    }
    return wide;
  }

  // CNN: duplicate the whole kernel channel and split its output array.
  auto duplicate = [&](Role role, std::size_t per_kernel) {
    auto src = narrow.block(1, role).subspan(static_cast<std::size_t>(neuron) * per_kernel, per_kernel);
    auto dst = wide.block(1, role).subspan(static_cast<std::size_t>(copy) * per_kernel, per_kernel);
    std::copy(src.begin(), src.end(), dst.begin());
  };
  const auto P = static_cast<std::size_t>(spec.positions());
  duplicate(Role::Kernel, slot.fan_in);
  if (spec.hidden_bias) duplicate(Role::Bias, spec.family == Family::CNN_WS ? 1 : P);
  auto out_old = narrow.block(2, Role::OutputWeight).subspan(static_cast<std::size_t>(neuron) * P, P);
  auto out_keep = wide.block(2, Role::OutputWeight).subspan(static_cast<std::size_t>(neuron) * P, P);
  auto out_copy = wide.block(2, Role::OutputWeight).subspan(static_cast<std::size_t>(copy) * P, P);
  for (std::size_t p = 0; p < P; ++p) {
    out_keep[p] = alpha * out_old[p];
    out_copy[p] = (1.0 - alpha) * out_old[p];
  }
  return wide;
}

ParamPoint null_embed(const ParamPoint& params, int layer, int count, std::span<const double> input_init) {
  const NetworkSpec& spec = params.spec();
  const Slot slot = slot_of(spec, layer);
  apply_to_spec(spec, EmbeddingStep::null(layer, count, {input_init.begin(), input_init.end()}));
  ParamPoint wide = grow(params, layer, count);
  if (input_init.empty()) return wide;

  for (int c = 0; c < count; ++c) {
    const std::size_t src0 = input_init.size() == slot.fan_in ? 0 : static_cast<std::size_t>(c) * slot.fan_in;
    const int unit = slot.width + c;
    if (spec.family == Family::FC) {
      for (std::size_t j = 0; j < slot.fan_in; ++j)
        wide.at(layer, Role::Weight, {unit, static_cast<int>(j)}) = input_init[src0 + j];
    } else {
      auto dst = wide.block(1, Role::Kernel).subspan(static_cast<std::size_t>(unit) * slot.fan_in, slot.fan_in);
      std::copy_n(input_init.begin() + static_cast<std::ptrdiff_t>(src0), slot.fan_in, dst.begin());
    }
  }
  return wide;
}

ParamPoint apply_step(const ParamPoint& params, const EmbeddingStep& step) {
  if (step.kind == StepKind::Split) return split_neuron(params, step.layer, step.neuron, step.alpha);
  return null_embed(params, step.layer, step.count, step.input_init);
}

ParamPoint compose(const EmbeddingPlan& plan, const ParamPoint& narrow) {
  if (!(plan.source == narrow.spec())) throw PreconditionError("plan source spec does not match parameter point");
  ParamPoint current = narrow;
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    try {
      current = apply_step(current, plan.steps[i]);
    } catch (const PreconditionError& e) {
      throw PreconditionError("step " + std::to_string(i) + ": " + e.what());
    }
  }
  if (!(current.spec() == plan.target)) throw PreconditionError("plan steps do not produce the declared target spec");
  return current;
}

OutputCheck verify_output_preserving(const ParamPoint& narrow, const ParamPoint& wide, int n_probe,
                                     std::uint64_t seed, double tol) {
  if (narrow.spec().input_size() != wide.spec().input_size())
    throw ShapeError("narrow and wide networks take different input shapes");
  const Eigen::MatrixXd x = rank::gaussian_inputs(narrow.spec(), n_probe, seed);
  netzoo::Evaluator en(narrow.spec()), ew(wide.spec());
  OutputCheck out{n_probe, 0.0, tol, false};
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    std::span<const double> xi(x.col(i).data(), static_cast<std::size_t>(x.rows()));
    out.max_deviation = std::max(out.max_deviation, std::abs(en.forward(narrow.values(), xi) - ew.forward(wide.values(), xi)));
  }
  out.pass = out.max_deviation < tol;
  return out;
}

std::vector<double> mse_gradient(const ParamPoint& params, const Dataset& data) {
  data.validate();
  netzoo::Evaluator ev(params.spec());
  std::vector<double> grad(params.size(), 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double r = ev.forward(params.values(), data.input(i)) - data.labels(static_cast<Eigen::Index>(i));
    ev.accumulate_gradient(params.values(), r, grad);
  }
  return grad;
}

namespace {
double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}
}  // namespace

CriticalityCheck verify_criticality(const ParamPoint& narrow, const ParamPoint& wide, const Dataset& data,
                                    double tol) {
  CriticalityCheck c;
  c.tolerance = tol;
  c.narrow_grad_norm = norm(mse_gradient(narrow, data));
  c.wide_grad_norm = norm(mse_gradient(wide, data));
  c.narrow_critical = c.narrow_grad_norm < tol;
  c.pass = !c.narrow_critical || c.wide_grad_norm < 10.0 * tol;
  return c;
}

}  // namespace llrkit::embedding
