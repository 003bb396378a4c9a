#include "fairdummies/diffmodels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace fairdummies {

namespace {

Matrix apply_activation(Activation act, const Matrix& z) {
  switch (act) {
    case Activation::Identity:
      return z;
    case Activation::ReLU:
      return z.cwiseMax(0.0);
    case Activation::Sigmoid:
      return z.unaryExpr([](double v) {
        // split by sign so exp never overflows
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
    case Activation::Softmax: {
      Matrix out(z.rows(), z.cols());
      for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double m = z.row(i).maxCoeff();
        out.row(i) = (z.row(i).array() - m).exp().matrix();
        out.row(i) /= out.row(i).sum();
      }
      return out;
    }
  }
  return z;
}

// Chain rule through an activation; `pre` is its input, `post` its output.
Matrix activation_backward(Activation act, const Matrix& pre, const Matrix& post, const Matrix& g) {
  switch (act) {
    case Activation::Identity:
      return g;
    case Activation::ReLU:
      return (pre.array() > 0.0).select(g, 0.0);
    case Activation::Sigmoid:
      return (g.array() * post.array() * (1.0 - post.array())).matrix();
    case Activation::Softmax: {
      const Vector inner = (g.array() * post.array()).rowwise().sum();
      return (post.array() * (g.colwise() - inner).array()).matrix();
    }
  }
  return g;
}

void require(bool cond, const std::string& what) {
  if (!cond) throw ConfigError(what);
}

}  // namespace

const char* to_string(Activation act) {
  switch (act) {
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Softmax: return "softmax";
    case Activation::Identity: return "identity";
  }
  return "?";
}

Activation parse_activation(const std::string& text) {
  if (text == "relu") return Activation::ReLU;
  if (text == "sigmoid") return Activation::Sigmoid;
  if (text == "softmax") return Activation::Softmax;
  if (text == "identity") return Activation::Identity;
  throw ConfigError("unknown activation '" + text + "'");
}

void ModelSpec::validate() const {
  require(input_dim >= 0, "model input dimension must be nonnegative");
  require(output_dim >= 1, "model output dimension must be positive");
  for (auto w : hidden) require(w >= 1, "hidden widths must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "dropout rate must lie in [0, 1)");
  require(hidden_activation == Activation::ReLU || hidden_activation == Activation::Sigmoid,
          "hidden activation must be relu or sigmoid");
  require(head != Activation::ReLU, "output head must be identity, sigmoid or softmax");
}

Eigen::Index DiffModel::parameter_count() const {
  Eigen::Index total = 0;
  for (const auto& layer : layers) total += layer.weight.size() + layer.bias.size();
  return total;
}

DiffModel make_model(const ModelSpec& spec, Rng& rng) {
  spec.validate();
  DiffModel model;
  model.spec = spec;
  Eigen::Index fan_in = spec.input_dim;
  auto add_layer = [&](Eigen::Index fan_out) {
    DenseLayer layer;
    layer.weight.resize(fan_in, fan_out);
    const double limit = (fan_in + fan_out) > 0
                             ? std::sqrt(6.0 / static_cast<double>(fan_in + fan_out))
                             : 0.0;
    for (Eigen::Index c = 0; c < fan_out; ++c)
      for (Eigen::Index r = 0; r < fan_in; ++r)
        layer.weight(r, c) = (2.0 * uniform01(rng) - 1.0) * limit;
    layer.bias = Vector::Zero(fan_out);
    model.layers.push_back(std::move(layer));
    fan_in = fan_out;
  };
  for (auto width : spec.hidden) add_layer(width);
  add_layer(spec.output_dim);
  return model;
}

Parameters zeros_like(const Parameters& params) {
  Parameters out;
  out.reserve(params.size());
  for (const auto& layer : params)
    out.push_back({Matrix::Zero(layer.weight.rows(), layer.weight.cols()),
                   Vector::Zero(layer.bias.size())});
  return out;
}

ForwardCache forward_cached(const DiffModel& model, const Matrix& X, Rng* rng) {
  if (X.cols() != model.input_dim()) {
    std::ostringstream msg;
    msg << "input has " << X.cols() << " columns, model expects " << model.input_dim();
    throw ShapeError(msg.str());
  }
  const bool drop = model.mode == Mode::Train && model.spec.dropout > 0.0;
  if (drop && rng == nullptr) throw ConfigError("train-mode dropout needs a random generator");

  ForwardCache cache;
  const std::size_t n_hidden = model.spec.hidden.size();
  Matrix current = X;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const DenseLayer& layer = model.layers[l];
    Matrix z = current * layer.weight;
    z.rowwise() += layer.bias.transpose();
    cache.layer_inputs.push_back(std::move(current));
    if (l < n_hidden) {
      Matrix h = apply_activation(model.spec.hidden_activation, z);
      cache.hidden_pre.push_back(std::move(z));
      if (drop) {
        const double keep_scale = 1.0 / (1.0 - model.spec.dropout);
        Matrix mask(h.rows(), h.cols());
        for (Eigen::Index c = 0; c < mask.cols(); ++c)
          for (Eigen::Index r = 0; r < mask.rows(); ++r)
            mask(r, c) = uniform01(*rng) < model.spec.dropout ? 0.0 : keep_scale;
        h.array() *= mask.array();
        cache.dropout_masks.push_back(std::move(mask));
      }
      current = std::move(h);
    } else {
      cache.output = apply_activation(model.spec.head, z);
    }
  }
  return cache;
}

Matrix forward(const DiffModel& model, const Matrix& X, Rng* rng) {
  return forward_cached(model, X, rng).output;
}

Parameters backward(const DiffModel& model, const ForwardCache& cache,
                    const Matrix& grad_output, Matrix* grad_input) {
  if (grad_output.rows() != cache.output.rows() || grad_output.cols() != cache.output.cols())
    throw ShapeError("output gradient shape does not match the forward pass");

  Parameters grads(model.layers.size());
  const bool dropped = !cache.dropout_masks.empty();

  // The head's pre-activation is not cached; the Jacobians used here only need its output.
  Matrix g = activation_backward(model.spec.head, Matrix(), cache.output, grad_output);
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    const Matrix& input = cache.layer_inputs[l];
    grads[l].weight = input.transpose() * g;
    grads[l].bias = g.colwise().sum().transpose();
    if (l == 0) {
      if (grad_input != nullptr) *grad_input = g * model.layers[0].weight.transpose();
      break;
    }
    Matrix gh = g * model.layers[l].weight.transpose();
    const std::size_t h = l - 1;  // hidden layer feeding layer l
    if (dropped) gh.array() *= cache.dropout_masks[h].array();
    // post-activation before dropout, needed only for sigmoid hidden units
    Matrix post;
    if (model.spec.hidden_activation == Activation::Sigmoid)
      post = apply_activation(Activation::Sigmoid, cache.hidden_pre[h]);
    g = activation_backward(model.spec.hidden_activation, cache.hidden_pre[h], post, gh);
  }
  return grads;
}

double clipped_log(double p, double clip) {
  return std::log(std::clamp(p, clip, 1.0 - clip));
}

double clipped_log_derivative(double p, double clip) {
  if (p < clip || p > 1.0 - clip) return 0.0;
  return 1.0 / p;
}

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::MeanSquaredError: return "mse";
    case LossKind::CrossEntropy: return "cross_entropy";
    case LossKind::BinaryCrossEntropy: return "binary_cross_entropy";
  }
  return "?";
}

double Loss::value(const Matrix& pred, const Matrix& target) const {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw ShapeError("loss target shape does not match prediction");
  if (pred.rows() == 0) throw ShapeError("loss of an empty batch is undefined");
  double total = 0.0;
  switch (kind) {
    case LossKind::MeanSquaredError:
      total = (pred - target).squaredNorm();
      break;
    case LossKind::CrossEntropy:
      for (Eigen::Index i = 0; i < pred.rows(); ++i)
        for (Eigen::Index j = 0; j < pred.cols(); ++j)
          if (target(i, j) != 0.0) total -= target(i, j) * clipped_log(pred(i, j), clip);
      break;
    case LossKind::BinaryCrossEntropy:
      for (Eigen::Index i = 0; i < pred.rows(); ++i)
        for (Eigen::Index j = 0; j < pred.cols(); ++j) {
          const double t = target(i, j);
          const double p = pred(i, j);
          total -= t * clipped_log(p, clip) + (1.0 - t) * clipped_log(1.0 - p, clip);
        }
      break;
  }
  return total / static_cast<double>(pred.rows());
}

Matrix Loss::grad(const Matrix& pred, const Matrix& target) const {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw ShapeError("loss target shape does not match prediction");
  const double inv_n = 1.0 / static_cast<double>(pred.rows());
  Matrix g(pred.rows(), pred.cols());
  switch (kind) {
    case LossKind::MeanSquaredError:
      g = 2.0 * inv_n * (pred - target);
      break;
    case LossKind::CrossEntropy:
      for (Eigen::Index i = 0; i < pred.rows(); ++i)
        for (Eigen::Index j = 0; j < pred.cols(); ++j)
          g(i, j) = -inv_n * target(i, j) * clipped_log_derivative(pred(i, j), clip);
      break;
    case LossKind::BinaryCrossEntropy:
      for (Eigen::Index i = 0; i < pred.rows(); ++i)
        for (Eigen::Index j = 0; j < pred.cols(); ++j) {
          const double t = target(i, j);
          const double p = pred(i, j);
          g(i, j) = -inv_n * (t * clipped_log_derivative(p, clip) -
                              (1.0 - t) * clipped_log_derivative(1.0 - p, clip));
        }
      break;
  }
  return g;
}

void check_compatible(const Loss& loss, Activation head) {
  const bool ok = (loss.kind == LossKind::MeanSquaredError && head == Activation::Identity) ||
                  (loss.kind == LossKind::CrossEntropy && head == Activation::Softmax) ||
                  (loss.kind == LossKind::BinaryCrossEntropy && head == Activation::Sigmoid);
  if (!ok)
    throw ConfigError(std::string("loss '") + to_string(loss.kind) +
                      "' is incompatible with a '" + to_string(head) + "' output head");
}

Parameters gradient(const DiffModel& model, const Loss& loss, const Matrix& X,
                    const Matrix& target, Rng* rng) {
  check_compatible(loss, model.spec.head);
  const ForwardCache cache = forward_cached(model, X, rng);
  return backward(model, cache, loss.grad(cache.output, target));
}

const char* to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Sgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer(const std::string& text) {
  if (text == "sgd") return OptimizerKind::Sgd;
  if (text == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + text + "' (expected sgd or adam)");
}

void OptimizerConfig::validate() const {
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning rate must be positive");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
          "Adam decay rates must lie in [0, 1)");
  require(epsilon > 0.0, "Adam epsilon must be positive");
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) { config_.validate(); }

bool all_finite(const Parameters& params) {
  for (const auto& layer : params)
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  return true;
}

void Optimizer::step(DiffModel& model, const Parameters& grads) {
  if (grads.size() != model.layers.size()) throw ShapeError("gradient layer count mismatch");
  for (std::size_t l = 0; l < grads.size(); ++l) {
    if (grads[l].weight.rows() != model.layers[l].weight.rows() ||
        grads[l].weight.cols() != model.layers[l].weight.cols() ||
        grads[l].bias.size() != model.layers[l].bias.size())
      throw ShapeError("gradient shape mismatch in layer " + std::to_string(l));
  }
  if (!all_finite(grads)) throw DivergenceError("non-finite gradient entries");

  if (first_.empty()) {
    first_ = zeros_like(model.layers);
    if (config_.kind == OptimizerKind::Adam) second_ = zeros_like(model.layers);
  }
  ++steps_;
  const double lr = config_.learning_rate;
  if (config_.kind == OptimizerKind::Sgd) {
    for (std::size_t l = 0; l < grads.size(); ++l) {
      if (config_.momentum > 0.0) {
        first_[l].weight = config_.momentum * first_[l].weight + grads[l].weight;
        first_[l].bias = config_.momentum * first_[l].bias + grads[l].bias;
        model.layers[l].weight -= lr * first_[l].weight;
        model.layers[l].bias -= lr * first_[l].bias;
      } else {
        model.layers[l].weight -= lr * grads[l].weight;
        model.layers[l].bias -= lr * grads[l].bias;
      }
    }
    return;
  }

  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config_.epsilon);
  };
  for (std::size_t l = 0; l < grads.size(); ++l) {
    update(model.layers[l].weight, first_[l].weight, second_[l].weight, grads[l].weight);
    update(model.layers[l].bias, first_[l].bias, second_[l].bias, grads[l].bias);
  }
}

void write_hex(std::ostream& out, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", value);
  out << buf;
}

double read_hex(std::istream& in) {
  std::string token;
  if (!(in >> token)) throw DataError("unexpected end of serialized data");
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (end == token.c_str() || *end != '\0') throw DataError("malformed number '" + token + "'");
  return v;
}

namespace {

void expect_token(std::istream& in, const std::string& want) {
  std::string got;
  if (!(in >> got) || got != want)
    throw DataError("malformed model checkpoint: expected '" + want + "', got '" + got + "'");
}

Eigen::Index read_index(std::istream& in) {
  long long v = -1;
  if (!(in >> v) || v < 0) throw DataError("malformed model checkpoint: bad dimension");
  return static_cast<Eigen::Index>(v);
}

}  // namespace

void save_model(std::ostream& out, const DiffModel& model) {
  const ModelSpec& s = model.spec;
  out << "diffmodel 1\n";
  out << "input " << s.input_dim << " output " << s.output_dim << " hidden " << s.hidden.size();
  for (auto w : s.hidden) out << ' ' << w;
  out << " hidden_act " << to_string(s.hidden_activation) << " head " << to_string(s.head)
      << " dropout ";
  write_hex(out, s.dropout);
  out << '\n';
  for (const auto& layer : model.layers) {
    out << "layer " << layer.weight.rows() << ' ' << layer.weight.cols() << '\n';
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        if (c) out << ' ';
        write_hex(out, layer.weight(r, c));
      }
      out << '\n';
    }
    for (Eigen::Index c = 0; c < layer.bias.size(); ++c) {
      if (c) out << ' ';
      write_hex(out, layer.bias(c));
    }
    out << '\n';
  }
}

DiffModel load_model(std::istream& in) {
  expect_token(in, "diffmodel");
  expect_token(in, "1");
  DiffModel model;
  ModelSpec& s = model.spec;
  expect_token(in, "input");
  s.input_dim = read_index(in);
  expect_token(in, "output");
  s.output_dim = read_index(in);
  expect_token(in, "hidden");
  const Eigen::Index n_hidden = read_index(in);
  for (Eigen::Index h = 0; h < n_hidden; ++h) s.hidden.push_back(read_index(in));
  std::string tag;
  expect_token(in, "hidden_act");
  in >> tag;
  s.hidden_activation = parse_activation(tag);
  expect_token(in, "head");
  in >> tag;
  s.head = parse_activation(tag);
  expect_token(in, "dropout");
  s.dropout = read_hex(in);
  s.validate();

  Eigen::Index fan_in = s.input_dim;
  std::vector<Eigen::Index> widths = s.hidden;
  widths.push_back(s.output_dim);
  for (auto fan_out : widths) {
    expect_token(in, "layer");
    if (read_index(in) != fan_in || read_index(in) != fan_out)
      throw DataError("malformed model checkpoint: layer shape disagrees with header");
    DenseLayer layer{Matrix(fan_in, fan_out), Vector(fan_out)};
    for (Eigen::Index r = 0; r < fan_in; ++r)
      for (Eigen::Index c = 0; c < fan_out; ++c) layer.weight(r, c) = read_hex(in);
    for (Eigen::Index c = 0; c < fan_out; ++c) layer.bias(c) = read_hex(in);
    model.layers.push_back(std::move(layer));
    fan_in = fan_out;
  }
  return model;
}

}  // namespace fairdummies
