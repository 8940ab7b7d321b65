#pragma once

// Network families (fully connected, CNN with and without weight sharing),
// their flat parameter layout, exact forward evaluation and analytic
// per-sample parameter gradients.
//
// Parameter layout (frozen): layer-major, weights before biases, row-major
// inside every block.
//
//   FC, layers l = 1..L-1:  Weight [m_l, m_{l-1}], Bias [m_l] (hidden_bias)
//   FC, layer L:            OutputWeight [m_{L-1}], Bias [1] (output_bias)
//   CNN-ws, layer 1:        Kernel [m, s(, s)], Bias [m] (hidden_bias)
//   CNN-ns, layer 1:        Kernel [m, P(, P), s(, s)], Bias [m, P(, P)]
//   CNN, layer 2:           OutputWeight [m, P(, P)], Bias [1] (output_bias)
//
// with P = d + 1 - s output positions per axis (stride 1). Convolutions are
// cross-correlations: z_{l,(i,j)} = sum_{a,b} K_{l;a,b} I_{i+a, j+b}.

#include <Eigen/Core>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace llrkit::netzoo {

enum class Family { FC, CNN_WS, CNN_NS };
enum class Activation { Tanh, Sigmoid, Gelu };
enum class Role { Weight, Bias, Kernel, OutputWeight };

std::string_view to_string(Family f);
std::string_view to_string(Activation a);
std::string_view to_string(Role r);
Family parse_family(std::string_view s);
Activation parse_activation(std::string_view s);

struct NetworkSpec {
  Family family = Family::FC;
  int input_dim = 1;               ///< d: vector length, or image side for CNNs
  int conv_dims = 2;               ///< CNN only: 1 (sequence) or 2 (square image)
  std::vector<int> hidden_widths;  ///< FC only: m_1..m_{L-1}
  int kernel_count = 1;            ///< CNN only: m
  int kernel_size = 1;             ///< CNN only: s
  bool hidden_bias = false;
  bool output_bias = false;
  Activation activation = Activation::Tanh;

  static NetworkSpec fc(int d, std::vector<int> widths, bool hidden_bias = false,
                        bool output_bias = false, Activation act = Activation::Tanh);
  static NetworkSpec cnn(Family family, int d, int s, int m, int conv_dims = 2,
                         bool hidden_bias = false, bool output_bias = false,
                         Activation act = Activation::Tanh);

  /// Throws PreconditionError if the descriptor is inconsistent.
  void validate() const;

  bool is_cnn() const { return family != Family::FC; }
  int depth() const;
  int input_size() const;
  int positions_per_axis() const { return input_dim + 1 - kernel_size; }
  int positions() const;   ///< P^k
  int patch_size() const;  ///< s^k
  std::size_t parameter_count() const;
  /// True for L = 2 tanh networks without any bias (closed-form rank formulas apply).
  bool is_plain_two_layer_tanh() const;

  bool operator==(const NetworkSpec&) const = default;
};

struct Block {
  int layer = 0;
  Role role = Role::Weight;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size() const;
};

class Layout {
 public:
  explicit Layout(const NetworkSpec& spec);

  std::span<const Block> blocks() const { return blocks_; }
  bool has(int layer, Role role) const;
  const Block& block(int layer, Role role) const;
  std::size_t offset(int layer, Role role, std::span<const int> index) const;
  std::size_t offset(int layer, Role role, std::initializer_list<int> index) const {
    return offset(layer, role, std::span<const int>(index.begin(), index.size()));
  }
  std::size_t size() const { return size_; }

 private:
  std::vector<Block> blocks_;
  std::size_t size_ = 0;
};

/// One block of a structured parameter view.
struct BlockValues {
  int layer = 0;
  Role role = Role::Weight;
  std::vector<int> shape;
  std::vector<double> values;
  bool operator==(const BlockValues&) const = default;
};

class ParamPoint {
 public:
  explicit ParamPoint(NetworkSpec spec);
  ParamPoint(NetworkSpec spec, std::vector<double> values);

  const NetworkSpec& spec() const { return spec_; }
  const Layout& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  std::span<const double> block(int layer, Role role) const;
  std::span<double> block(int layer, Role role);
  double& at(int layer, Role role, std::initializer_list<int> index);
  double at(int layer, Role role, std::initializer_list<int> index) const;

  std::vector<BlockValues> to_structured() const;
  static ParamPoint from_structured(NetworkSpec spec, std::span<const BlockValues> blocks);

  bool all_finite() const;

 private:
  NetworkSpec spec_;
  Layout layout_;
  std::vector<double> values_;
};

/// Inputs X (one sample per column) and labels y.
struct Dataset {
  Eigen::MatrixXd inputs;
  Eigen::VectorXd labels;

  std::size_t size() const { return static_cast<std::size_t>(inputs.cols()); }
  std::span<const double> input(std::size_t i) const {
    return {inputs.col(static_cast<Eigen::Index>(i)).data(), static_cast<std::size_t>(inputs.rows())};
  }
  /// Throws PreconditionError when empty, mismatched or non-finite.
  void validate() const;
};

/// Activation value and first derivative at z.
struct ActivationValue {
  double value;
  double slope;
};
ActivationValue activate(Activation act, double z);

/// Reusable evaluator for one spec. Holds scratch buffers, so one instance per
/// thread; the free functions below construct a fresh one per call.
class Evaluator {
 public:
  explicit Evaluator(const NetworkSpec& spec);

  const NetworkSpec& spec() const { return spec_; }

  /// f(x; theta). Caches the activations needed by accumulate_gradient.
  double forward(std::span<const double> theta, std::span<const double> x);

  /// grad += scale * d f(x; theta) / d theta for the x of the last forward call.
  void accumulate_gradient(std::span<const double> theta, double scale, std::span<double> grad);

 private:
  double forward_fc(std::span<const double> theta);
  double forward_cnn(std::span<const double> theta);
  void backward_fc(std::span<const double> theta, double scale, std::span<double> grad);
  void backward_cnn(std::span<const double> theta, double scale, std::span<double> grad);

  NetworkSpec spec_;
  std::size_t param_count_ = 0;
  std::vector<int> sizes_;  // FC: d, m_1..m_{L-1}
  std::vector<std::size_t> weight_off_, bias_off_;
  std::size_t out_off_ = 0, out_bias_off_ = 0;
  std::size_t kernel_off_ = 0, kbias_off_ = 0;
  std::vector<std::vector<int>> patches_;  // CNN: [position][q] -> input index

  std::vector<double> x_;
  std::vector<std::vector<double>> h_, slope_;  // FC layers 1..L-1 (index 0 unused)
  std::vector<double> delta_, delta_prev_;
  std::vector<double> conv_h_, conv_slope_;     // CNN [l * P + p]
};

/// Exact network output at x. Throws ShapeError on input size mismatch.
double forward(const ParamPoint& params, std::span<const double> x);

/// d f(x; theta) / d theta laid out per params.layout().
std::vector<double> tangent_features(const ParamPoint& params, std::span<const double> x);

/// FC width-3, d = 5, no-bias teacher of the phase-transition experiment.
ParamPoint make_phase_target();

/// Same teacher expressed at 1x in the experiment's student families
/// (hidden bias present and set to zero; CNNs are 1-d with s = 3).
ParamPoint make_phase_target(Family family, bool hidden_bias);

/// Student architecture at scale N: FC width 3N or N kernels, hidden bias only.
NetworkSpec phase_student_spec(Family family, int scale);

}  // namespace llrkit::netzoo
