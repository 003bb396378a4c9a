#include "fairdummies/fairtrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace fairdummies {

void TrainConfig::validate() const {
  if (!(lambda >= 0.0 && lambda < 1.0)) throw ConfigError("lambda must lie in [0, 1)");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be nonnegative");
  if (outer_iterations < 1) throw ConfigError("outer iterations must be at least 1");
  if (steps_per_round < 1) throw ConfigError("gradient steps per round must be at least 1");
  if (batch_size < 0 || batch_size == 1) throw ConfigError("batch size must be 0 (full) or >= 2");
  if (pretrain_epochs < 0) throw ConfigError("pretrain epochs must be nonnegative");
  if (!(clip > 0.0 && clip < 0.5)) throw ConfigError("probability clip must lie in (0, 0.5)");
  predictor.validate();
  discriminator.validate();
}

TrainConfig TrainConfig::regression_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::classification_defaults() {
  TrainConfig c;
  c.lambda = 0.9;
  c.gamma = 10.0;
  c.outer_iterations = 50;
  c.steps_per_round = 2;
  c.predictor = {OptimizerKind::Adam, 0.01};
  c.discriminator = {OptimizerKind::Adam, 0.01};
  c.batch_size = 32;
  return c;
}

AdversarialBatch AdversarialBatch::rows(std::span<const Eigen::Index> idx) const {
  AdversarialBatch out;
  const auto n = static_cast<Eigen::Index>(idx.size());
  out.X.resize(n, X.cols());
  out.target.resize(n, target.cols());
  out.response.resize(n, response.cols());
  out.attribute.resize(n);
  out.dummy.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::Index i = idx[static_cast<std::size_t>(r)];
    out.X.row(r) = X.row(i);
    out.target.row(r) = target.row(i);
    out.response.row(r) = response.row(i);
    out.attribute(r) = attribute(i);
    out.dummy(r) = dummy(i);
  }
  return out;
}

Matrix discriminator_input(const Matrix& yhat, const Vector& a, const Matrix& response) {
  if (yhat.rows() != a.size() || yhat.rows() != response.rows())
    throw ShapeError("discriminator input parts have different row counts");
  Matrix z(yhat.rows(), yhat.cols() + 1 + response.cols());
  z << yhat, a, response;
  return z;
}

namespace {

// (a - mean a) - (dummy - mean dummy)
Vector centered_difference(const Vector& a, const Vector& dummy) {
  return (a.array() - a.mean()).matrix() - (dummy.array() - dummy.mean()).matrix();
}

void check_penalty_shapes(const Matrix& yhat, const Vector& a, const Vector& dummy) {
  if (yhat.rows() != a.size() || a.size() != dummy.size())
    throw ShapeError("covariance penalty inputs have different row counts");
  if (yhat.rows() < 2) throw ShapeError("covariance is undefined for fewer than two rows");
}

// Stacks dummy-attribute rows above real-attribute rows.
Matrix stacked_input(const Matrix& yhat, const AdversarialBatch& b, bool dummy_first) {
  const Vector& top = dummy_first ? b.dummy : b.attribute;
  const Vector& bottom = dummy_first ? b.attribute : b.dummy;
  Matrix z(2 * yhat.rows(), yhat.cols() + 1 + b.response.cols());
  z.topRows(yhat.rows()) = discriminator_input(yhat, top, b.response);
  z.bottomRows(yhat.rows()) = discriminator_input(yhat, bottom, b.response);
  return z;
}

// -(mean log p(top) + mean log(1 - p(bottom))) and its derivative w.r.t. p.
double log_pair_value(const Matrix& p, Eigen::Index n, double clip) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) s += clipped_log(p(i, 0), clip);
  for (Eigen::Index i = n; i < 2 * n; ++i) s += clipped_log(1.0 - p(i, 0), clip);
  return -s / static_cast<double>(n);
}

Matrix log_pair_grad(const Matrix& p, Eigen::Index n, double clip, double weight) {
  Matrix g(2 * n, 1);
  const double w = -weight / static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) g(i, 0) = w * clipped_log_derivative(p(i, 0), clip);
  for (Eigen::Index i = n; i < 2 * n; ++i)
    g(i, 0) = -w * clipped_log_derivative(1.0 - p(i, 0), clip);
  return g;
}

DiffModel as_eval(const DiffModel& m) {
  DiffModel e = m;
  e.mode = Mode::Eval;
  return e;
}

}  // namespace

double covariance_penalty(const Matrix& yhat, const Vector& a, const Vector& dummy) {
  check_penalty_shapes(yhat, a, dummy);
  const Vector c = centered_difference(a, dummy);
  const Vector diff = yhat.transpose() * c / static_cast<double>(yhat.rows());
  return diff.squaredNorm();
}

Matrix covariance_penalty_grad(const Matrix& yhat, const Vector& a, const Vector& dummy) {
  check_penalty_shapes(yhat, a, dummy);
  const double n = static_cast<double>(yhat.rows());
  const Vector c = centered_difference(a, dummy);
  const Vector diff = yhat.transpose() * c / n;
  return (2.0 / n) * c * diff.transpose();
}

double discriminator_loss(const DiffModel& d, const DiffModel& f, const AdversarialBatch& batch,
                          double clip) {
  const Matrix yhat = forward(as_eval(f), batch.X);
  const Matrix p = forward(as_eval(d), stacked_input(yhat, batch, /*dummy_first=*/false));
  const double value = log_pair_value(p, batch.size(), clip);
  if (!std::isfinite(value)) throw DivergenceError("discriminator objective is not finite");
  return value;
}

Parameters discriminator_gradient(const DiffModel& d, const DiffModel& f,
                                  const AdversarialBatch& batch, double clip, Rng* rng) {
  const Matrix yhat = forward(as_eval(f), batch.X);
  const ForwardCache cache = forward_cached(d, stacked_input(yhat, batch, false), rng);
  return backward(d, cache, log_pair_grad(cache.output, batch.size(), clip, 1.0));
}

double discriminator_accuracy(const DiffModel& d, const DiffModel& f, const AdversarialBatch& batch) {
  const Matrix yhat = forward(as_eval(f), batch.X);
  const Matrix p = forward(as_eval(d), stacked_input(yhat, batch, false));
  const Eigen::Index n = batch.size();
  double correct = 0;
  for (Eigen::Index i = 0; i < n; ++i) correct += p(i, 0) >= 0.5;
  for (Eigen::Index i = n; i < 2 * n; ++i) correct += p(i, 0) < 0.5;
  return correct / static_cast<double>(2 * n);
}

PredictorObjective predictor_loss(const DiffModel& f, const DiffModel& d,
                                  const AdversarialBatch& batch, const Loss& loss, double lambda,
                                  double gamma) {
  const Matrix yhat = forward(as_eval(f), batch.X);
  PredictorObjective obj;
  obj.loss = loss.value(yhat, batch.target);
  obj.penalty = covariance_penalty(yhat, batch.attribute, batch.dummy);
  const Matrix p = forward(as_eval(d), stacked_input(yhat, batch, /*dummy_first=*/true));
  obj.adversarial = log_pair_value(p, batch.size(), loss.clip);
  obj.total = (1.0 - lambda) * obj.loss + lambda * gamma * obj.penalty + lambda * obj.adversarial;
  if (!std::isfinite(obj.total)) throw DivergenceError("predictor objective is not finite");
  return obj;
}

Parameters predictor_gradient(const DiffModel& f, const DiffModel& d, const AdversarialBatch& batch,
                              const Loss& loss, double lambda, double gamma, Rng* rng) {
  check_compatible(loss, f.spec.head);
  const ForwardCache cache = forward_cached(f, batch.X, rng);
  const Matrix& yhat = cache.output;
  Matrix g = (1.0 - lambda) * loss.grad(yhat, batch.target);
  if (lambda > 0.0) {
    if (gamma > 0.0)
      g += lambda * gamma * covariance_penalty_grad(yhat, batch.attribute, batch.dummy);
    const DiffModel d_eval = as_eval(d);
    const ForwardCache dcache = forward_cached(d_eval, stacked_input(yhat, batch, true));
    Matrix grad_z;
    backward(d_eval, dcache, log_pair_grad(dcache.output, batch.size(), loss.clip, lambda), &grad_z);
    const Eigen::Index n = batch.size();
    g += grad_z.topRows(n).leftCols(yhat.cols()) + grad_z.bottomRows(n).leftCols(yhat.cols());
  }
  return backward(f, cache, g);
}

Loss predictor_loss_kind(Task task) {
  return Loss{task == Task::Regression ? LossKind::MeanSquaredError : LossKind::CrossEntropy};
}

ModelSpec predictor_spec(const Dataset& data, const PlayerSpecs& players) {
  ModelSpec s;
  s.input_dim = data.X.cols();
  s.hidden = players.predictor_hidden;
  s.dropout = players.predictor_hidden.empty() ? 0.0 : players.predictor_dropout;
  if (data.task == Task::Regression) {
    s.output_dim = 1;
    s.head = Activation::Identity;
  } else {
    s.output_dim = data.num_classes;
    s.head = Activation::Softmax;
  }
  return s;
}

ModelSpec discriminator_spec(const Dataset& data, const PlayerSpecs& players) {
  ModelSpec s;
  const Eigen::Index k = data.task == Task::Regression ? 1 : data.num_classes;
  const Eigen::Index y_dim = data.task == Task::Regression ? 1 : data.num_classes;
  s.input_dim = k + 1 + y_dim;
  s.hidden = players.discriminator_hidden;
  s.output_dim = 1;
  s.head = Activation::Sigmoid;
  return s;
}

AdversarialBatch make_batch(const Dataset& data, const ResponseScaling& scaling) {
  AdversarialBatch b;
  b.X = data.X;
  b.attribute = data.attribute_vector();
  b.dummy = b.attribute;
  if (data.task == Task::Regression) {
    b.target = ((data.Y.array() - scaling.mean) / scaling.scale).matrix();
    b.response = b.target;
  } else {
    b.target = data.one_hot_response();
    b.response = b.target;
  }
  return b;
}

Matrix FairModel::predict(const Matrix& X) const {
  Matrix out = forward(as_eval(predictor), X);
  if (task == Task::Regression) out = (out.array() * scaling.scale + scaling.mean).matrix();
  return out;
}

namespace {

// Contiguous chunks of `order`; a trailing single row joins the previous chunk
// so every batch has a defined covariance.
std::vector<std::vector<Eigen::Index>> make_batches(const std::vector<Eigen::Index>& order,
                                                    Eigen::Index batch_size) {
  std::vector<std::vector<Eigen::Index>> out;
  const auto n = static_cast<Eigen::Index>(order.size());
  const Eigen::Index b = batch_size <= 0 ? n : batch_size;
  for (Eigen::Index start = 0; start < n; start += b) {
    const Eigen::Index stop = std::min(n, start + b);
    out.emplace_back(order.begin() + start, order.begin() + stop);
  }
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

class Trainer {
 public:
  Trainer(const Dataset& train, const DummySampler& sampler, const PlayerSpecs& players,
          const TrainConfig& config)
      : config_(config),
        loss_(predictor_loss_kind(train.task)),
        rng_f_(make_rng(config.seed, 1)),
        rng_d_(make_rng(config.seed, 2)),
        rng_dummy_(make_rng(config.seed, 3)),
        opt_f_(config.predictor),
        opt_d_(config.discriminator) {
    loss_.clip = config.clip;
    model_.task = train.task;
    model_.num_classes = train.num_classes;
    model_.sampler = sampler;
    if (train.task == Task::Regression) {
      model_.scaling.mean = train.Y.mean();
      const double sd = std::sqrt((train.Y.array() - model_.scaling.mean).square().mean());
      model_.scaling.scale = sd > 0.0 ? sd : 1.0;
    }
    model_.predictor = make_model(predictor_spec(train, players), rng_f_);
    model_.discriminator = make_model(discriminator_spec(train, players), rng_d_);
    data_ = make_batch(train, model_.scaling);
    posterior_ = sampler.posteriors(train.Y);
    order_.resize(static_cast<std::size_t>(train.size()));
    std::iota(order_.begin(), order_.end(), Eigen::Index{0});
  }

  FairModel run() {
    try {
      pretrain();
      for (int k = 0; k < config_.outer_iterations; ++k) round(k);
    } catch (const DivergenceError& e) {
      throw TrainingDiverged(e.what(), model_.trace);
    }
    model_.predictor.mode = Mode::Eval;
    model_.discriminator.mode = Mode::Eval;
    return std::move(model_);
  }

 private:
  bool minibatch() const { return config_.batch_size > 0 && config_.batch_size < data_.size(); }

  std::vector<std::vector<Eigen::Index>> epoch_batches(Rng& rng) {
    if (minibatch()) std::shuffle(order_.begin(), order_.end(), rng);
    return make_batches(order_, minibatch() ? config_.batch_size : 0);
  }

  void resample_dummies() {
    const auto draws = sample_dummies(posterior_, rng_dummy_);
    for (std::size_t i = 0; i < draws.size(); ++i) data_.dummy(static_cast<Eigen::Index>(i)) = draws[i];
  }

  AdversarialBatch slice(const std::vector<Eigen::Index>& idx) const {
    return minibatch() ? data_.rows(idx) : data_;
  }

  void predictor_step(const AdversarialBatch& b, double lambda) {
    DiffModel& f = model_.predictor;
    f.mode = Mode::Train;
    auto g = predictor_gradient(f, model_.discriminator, b, loss_, lambda, config_.gamma, &rng_f_);
    opt_f_.step(f, g);
  }

  void discriminator_step(const AdversarialBatch& b) {
    DiffModel& d = model_.discriminator;
    d.mode = Mode::Train;
    auto g = discriminator_gradient(d, model_.predictor, b, config_.clip, &rng_d_);
    opt_d_.step(d, g);
  }

  void pretrain() {
    for (int e = 0; e < config_.pretrain_epochs; ++e)
      for (const auto& idx : epoch_batches(rng_f_)) predictor_step(slice(idx), 0.0);
    for (int e = 0; e < config_.pretrain_epochs; ++e) {
      resample_dummies();
      for (const auto& idx : epoch_batches(rng_d_)) discriminator_step(slice(idx));
    }
  }

  void round(int k) {
    resample_dummies();
    for (const auto& idx : epoch_batches(rng_f_)) {
      const AdversarialBatch b = slice(idx);
      for (int s = 0; s < config_.steps_per_round; ++s) discriminator_step(b);
      for (int s = 0; s < config_.steps_per_round; ++s) predictor_step(b, config_.lambda);
    }
    record(k);
  }

  void record(int k) {
    TraceRecord r;
    r.iteration = k + 1;
    const auto obj = predictor_loss(model_.predictor, model_.discriminator, data_, loss_,
                                    config_.lambda, config_.gamma);
    r.predictor_objective = obj.total;
    r.train_loss = obj.loss;
    r.penalty = obj.penalty;
    r.discriminator_objective =
        discriminator_loss(model_.discriminator, model_.predictor, data_, config_.clip);
    model_.trace.push_back(r);
    if (!std::isfinite(r.predictor_objective) || !std::isfinite(r.discriminator_objective) ||
        !std::isfinite(r.penalty) || !std::isfinite(r.train_loss))
      throw DivergenceError("non-finite training objective at round " + std::to_string(k + 1));
  }

  TrainConfig config_;
  Loss loss_;
  Rng rng_f_;
  Rng rng_d_;
  Rng rng_dummy_;
  Optimizer opt_f_;
  Optimizer opt_d_;
  FairModel model_;
  AdversarialBatch data_;
  std::vector<double> posterior_;
  std::vector<Eigen::Index> order_;
};

}  // namespace

FairModel fit_fair(const Dataset& train, const DummySampler& sampler, const PlayerSpecs& players,
                   const TrainConfig& config) {
  config.validate();
  train.validate();
  if (train.size() < 2) throw DataError("training needs at least two rows");
  if (sampler.task() != train.task) throw ConfigError("sampler task differs from the training task");
  return Trainer(train, sampler, players, config).run();
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRecord>& trace) {
  out << "iteration,J_f,J_d,penalty,train_loss\n";
  char buf[160];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", r.iteration,
                  r.predictor_objective, r.discriminator_objective, r.penalty, r.train_loss);
    out << buf;
  }
}

}  // namespace fairdummies
