#pragma once

// Critical embeddings from a narrower network to a wider one: neuron/kernel
// splitting and null-neuron insertion, plus numerical checks of output and
// criticality preservation.

#include <cstdint>
#include <span>
#include <vector>

#include "llrkit/netzoo.hpp"

namespace llrkit::embedding {

using netzoo::Dataset;
using netzoo::NetworkSpec;
using netzoo::ParamPoint;

enum class StepKind { Split, Null };

/// `layer` is a hidden layer (1..L-1) for FC nets and 1 for CNNs, where
/// `neuron` then indexes a kernel (channel).
struct EmbeddingStep {
  StepKind kind = StepKind::Split;
  int layer = 1;
  int neuron = 0;                  ///< split only
  double alpha = 0.5;              ///< split only: original keeps alpha, copy gets 1 - alpha
  int count = 1;                   ///< null only
  std::vector<double> input_init;  ///< null only: empty = zero input weights

  static EmbeddingStep split(int layer, int neuron, double alpha) {
    return {StepKind::Split, layer, neuron, alpha, 1, {}};
  }
  static EmbeddingStep null(int layer, int count, std::vector<double> input_init = {}) {
    return {StepKind::Null, layer, 0, 0.0, count, std::move(input_init)};
  }
  bool operator==(const EmbeddingStep&) const = default;
};

struct EmbeddingPlan {
  NetworkSpec source;
  NetworkSpec target;
  std::vector<EmbeddingStep> steps;

  /// Total number of added neurons / kernels.
  int added() const;
};

/// Spec after one step. Throws PreconditionError for invalid steps.
NetworkSpec apply_to_spec(const NetworkSpec& spec, const EmbeddingStep& step);
/// Plan whose target is computed from the steps.
EmbeddingPlan make_plan(const NetworkSpec& source, std::vector<EmbeddingStep> steps);

/// Duplicates the neuron's incoming weights and bias; its outgoing weights are
/// multiplied by alpha and the copy (appended last in the layer) receives
/// 1 - alpha times them.
ParamPoint split_neuron(const ParamPoint& narrow, int layer, int neuron, double alpha);

/// Appends `count` neurons with zero outgoing weights, zero bias and the given
/// incoming weights. `input_init` holds one fan-in vector shared by all new
/// neurons, `count` of them back to back, or nothing (zeros).
ParamPoint null_embed(const ParamPoint& params, int layer, int count, std::span<const double> input_init = {});

ParamPoint apply_step(const ParamPoint& params, const EmbeddingStep& step);
/// Applies the plan's steps in order; checks source and target specs.
ParamPoint compose(const EmbeddingPlan& plan, const ParamPoint& narrow);

struct OutputCheck {
  int probes = 0;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};
OutputCheck verify_output_preserving(const ParamPoint& narrow, const ParamPoint& wide, int n_probe,
                                     std::uint64_t seed, double tol);

/// Gradient of R_S(theta) = 1/2 sum_i (f(x_i; theta) - y_i)^2.
std::vector<double> mse_gradient(const ParamPoint& params, const Dataset& data);

struct CriticalityCheck {
  double narrow_grad_norm = 0.0;
  double wide_grad_norm = 0.0;
  double tolerance = 0.0;
  bool narrow_critical = false;
  bool pass = false;  ///< narrow_grad_norm < tol implies wide_grad_norm < 10 tol
};
CriticalityCheck verify_criticality(const ParamPoint& narrow, const ParamPoint& wide, const Dataset& data,
                                    double tol);

}  // namespace llrkit::embedding
