#pragma once

// Small differentiable-model engine: dense feed-forward networks with exact
// backpropagation, three losses and two first-order optimizers. It covers the
// linear predictors, two-layer networks, adversarial discriminators and
// test-statistic regressors used elsewhere in the library; nothing more.

#include "fairdummies/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

namespace fairdummies {

enum class Activation { ReLU, Sigmoid, Softmax, Identity };
enum class Mode { Train, Eval };

const char* to_string(Activation act);
Activation parse_activation(const std::string& text);

/// Architecture of a dense network. An empty `hidden` list gives a linear model.
struct ModelSpec {
  Eigen::Index input_dim = 1;
  std::vector<Eigen::Index> hidden;
  Eigen::Index output_dim = 1;
  Activation hidden_activation = Activation::ReLU;
  Activation head = Activation::Identity;
  double dropout = 0.0;  ///< applied after every hidden activation, in [0, 1)

  void validate() const;
};

/// One affine map `x * weight + bias`; weight is (fan_in x fan_out).
struct DenseLayer {
  Matrix weight;
  Vector bias;
};

/// Parameters and gradients share this layout.
using Parameters = std::vector<DenseLayer>;

struct DiffModel {
  ModelSpec spec;
  Parameters layers;
  Mode mode = Mode::Eval;

  Eigen::Index input_dim() const { return spec.input_dim; }
  Eigen::Index output_dim() const { return spec.output_dim; }
  Eigen::Index parameter_count() const;
};

/// Builds a model with Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)) and zero biases.
DiffModel make_model(const ModelSpec& spec, Rng& rng);

/// Same architecture with every parameter set to zero.
Parameters zeros_like(const Parameters& params);

/// Intermediate values kept by a forward pass for backpropagation.
struct ForwardCache {
  std::vector<Matrix> layer_inputs;  ///< input fed to each dense layer (after dropout)
  std::vector<Matrix> hidden_pre;    ///< pre-activation of each hidden layer
  std::vector<Matrix> dropout_masks; ///< scale masks (0 or 1/(1-rate)); empty when inactive
  Matrix output;                     ///< post-head output
};

/// Evaluates the network. Train mode with dropout > 0 needs `rng`; eval mode never draws.
/// Throws ShapeError when X has the wrong column count.
Matrix forward(const DiffModel& model, const Matrix& X, Rng* rng = nullptr);

ForwardCache forward_cached(const DiffModel& model, const Matrix& X, Rng* rng = nullptr);

/// Backpropagates `grad_output` (derivative of a scalar w.r.t. the post-head output).
/// Writes the derivative w.r.t. the network input into `grad_input` when given.
Parameters backward(const DiffModel& model, const ForwardCache& cache,
                    const Matrix& grad_output, Matrix* grad_input = nullptr);

enum class LossKind { MeanSquaredError, CrossEntropy, BinaryCrossEntropy };

const char* to_string(LossKind kind);

/// Per-row losses summed over output columns and averaged over rows.
/// Targets always have the prediction's shape: values for MSE, one-hot or soft
/// class distributions for cross-entropy, probabilities in [0,1] for binary cross-entropy.
struct Loss {
  LossKind kind = LossKind::MeanSquaredError;
  double clip = 1e-7;  ///< probabilities are clipped into [clip, 1-clip] before every log

  double value(const Matrix& pred, const Matrix& target) const;
  Matrix grad(const Matrix& pred, const Matrix& target) const;
};

/// MSE pairs with an identity head, cross-entropy with softmax, binary cross-entropy with sigmoid.
void check_compatible(const Loss& loss, Activation head);

/// Exact gradient of `loss` averaged over the batch, for every parameter.
Parameters gradient(const DiffModel& model, const Loss& loss, const Matrix& X,
                    const Matrix& target, Rng* rng = nullptr);

/// log(clip(p)) and its derivative, shared by the adversarial objectives.
double clipped_log(double p, double clip);
double clipped_log_derivative(double p, double clip);

enum class OptimizerKind { Sgd, Adam };

const char* to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& text);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  double learning_rate = 0.01;
  double momentum = 0.0;  // SGD only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

/// Stateful first-order optimizer bound to one parameter layout.
/// SGD with momentum follows v <- m*v + g, w <- w - lr*v. Adam is bias corrected.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  /// Throws DivergenceError on non-finite gradients (parameters untouched) and
  /// ShapeError when the gradient layout differs from the model.
  void step(DiffModel& model, const Parameters& grads);

  std::int64_t steps() const { return steps_; }
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  std::int64_t steps_ = 0;
  Parameters first_;
  Parameters second_;
};

bool all_finite(const Parameters& params);

// Checkpoint format (text, one token stream):
//   diffmodel 1
//   input <p> output <k> hidden <h> <w1> .. <wh> hidden_act <tag> head <tag> dropout <hexfloat>
//   then per layer: "layer <rows> <cols>" followed by the row-major weight
//   entries and the bias entries, all as C99 hexadecimal floats.
// Hexadecimal floats make the round trip bit-exact.
void save_model(std::ostream& out, const DiffModel& model);
DiffModel load_model(std::istream& in);

// Hex-float helpers reused by the other serializers.
void write_hex(std::ostream& out, double value);
double read_hex(std::istream& in);

}  // namespace fairdummies
