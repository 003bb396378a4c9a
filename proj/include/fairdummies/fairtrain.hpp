#pragma once

// Equalized-odds regularized training. A predictor f and a discriminator d are
// optimized in alternation: d learns to tell real triples (f(X), A, Y) from
// dummy triples (f(X), A~, Y), while f minimizes its loss plus a term that
// rewards fooling d and a penalty matching cov(f(X), A) to cov(f(X), A~).
//
// Both players descend a binary cross-entropy:
//   J_d = -mean[ log d(yhat, a, y) + log(1 - d(yhat, a~, y)) ]
//   J_f = (1-lambda) mean loss + lambda*gamma*penalty
//         - lambda * mean[ log d(yhat, a~, y) + log(1 - d(yhat, a, y)) ]
// d labels real triples 1 and dummy triples 0; f is rewarded when d swaps
// the labels. At the fair point d = 1/2 everywhere and J_d = 2 log 2.

#include "fairdummies/data.hpp"
#include "fairdummies/diffmodels.hpp"
#include "fairdummies/dummies.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace fairdummies {

struct TrainConfig {
  double lambda = 0.9;      ///< fairness weight in [0, 1)
  double gamma = 20.0;      ///< second-moment weight >= 0
  int outer_iterations = 100;
  int steps_per_round = 60;  ///< gradient steps per player per batch
  OptimizerConfig predictor{OptimizerKind::Sgd, 0.003, 0.9};
  OptimizerConfig discriminator{OptimizerKind::Adam, 0.001};
  Eigen::Index batch_size = 0;  ///< 0 trains on the full batch
  int pretrain_epochs = 5;      ///< plain epochs for each player before the adversarial rounds
  double clip = 1e-7;
  std::uint64_t seed = 0;

  void validate() const;

  static TrainConfig regression_defaults();
  static TrainConfig classification_defaults();
};

/// Inputs for one adversarial evaluation. Rows align across members.
struct AdversarialBatch {
  Matrix X;         ///< predictor inputs
  Matrix target;    ///< loss target, shape of the predictor output
  Matrix response;  ///< Y as fed to the discriminator: n x 1 (regression) or one-hot n x L
  Vector attribute; ///< A
  Vector dummy;     ///< A~

  Eigen::Index size() const { return X.rows(); }
  AdversarialBatch rows(std::span<const Eigen::Index> idx) const;
};

/// Discriminator input [yhat, a, response].
Matrix discriminator_input(const Matrix& yhat, const Vector& a, const Matrix& response);

/// Squared norm of cov(yhat_j, A) - cov(yhat_j, A~) over columns j, with
/// denominator-n covariances. Throws ShapeError for fewer than two rows.
double covariance_penalty(const Matrix& yhat, const Vector& a, const Vector& dummy);
/// Derivative of covariance_penalty w.r.t. yhat.
Matrix covariance_penalty_grad(const Matrix& yhat, const Vector& a, const Vector& dummy);

double discriminator_loss(const DiffModel& d, const DiffModel& f, const AdversarialBatch& batch,
                          double clip = 1e-7);
/// Gradient of J_d w.r.t. the discriminator parameters (f held fixed, eval mode).
Parameters discriminator_gradient(const DiffModel& d, const DiffModel& f,
                                  const AdversarialBatch& batch, double clip = 1e-7,
                                  Rng* rng = nullptr);

/// Fraction of the 2n real/dummy triples that d labels correctly
/// (d >= 0.5 means real, d < 0.5 means dummy).
double discriminator_accuracy(const DiffModel& d, const DiffModel& f, const AdversarialBatch& batch);

struct PredictorObjective {
  double total = 0;  ///< J_f
  double loss = 0;
  double penalty = 0;
  double adversarial = 0;  ///< -mean[log d(yhat,a~,y) + log(1 - d(yhat,a,y))]
};

PredictorObjective predictor_loss(const DiffModel& f, const DiffModel& d,
                                  const AdversarialBatch& batch, const Loss& loss, double lambda,
                                  double gamma);
/// Gradient of J_f w.r.t. the predictor parameters. `rng` drives predictor dropout.
Parameters predictor_gradient(const DiffModel& f, const DiffModel& d, const AdversarialBatch& batch,
                              const Loss& loss, double lambda, double gamma, Rng* rng = nullptr);

struct TraceRecord {
  int iteration = 0;
  double predictor_objective = 0;      ///< J_f
  double discriminator_objective = 0;  ///< J_d
  double penalty = 0;
  double train_loss = 0;
};

/// Affine map between the response and the scale the predictor is trained on.
/// Regression predictors learn (y - mean) / scale; classification uses the identity.
struct ResponseScaling {
  double mean = 0.0;
  double scale = 1.0;
};

struct FairModel {
  Task task = Task::Regression;
  int num_classes = 0;
  DiffModel predictor;
  DiffModel discriminator;
  DummySampler sampler;
  ResponseScaling scaling;
  std::vector<TraceRecord> trace;

  /// Predictions in response units (regression, n x 1) or class probabilities (n x L).
  Matrix predict(const Matrix& X) const;
};

/// Raised when a loss or gradient turns non-finite; carries the trace so far.
class TrainingDiverged : public DivergenceError {
 public:
  TrainingDiverged(const std::string& what, std::vector<TraceRecord> trace)
      : DivergenceError(what), trace_(std::move(trace)) {}
  const std::vector<TraceRecord>& trace() const { return trace_; }

 private:
  std::vector<TraceRecord> trace_;
};

/// Architectures for the two players. Input/output dimensions are filled in by fit_fair.
struct PlayerSpecs {
  std::vector<Eigen::Index> predictor_hidden;  ///< empty: linear predictor
  double predictor_dropout = 0.0;
  std::vector<Eigen::Index> discriminator_hidden{30};
};

/// Predictor architecture for a dataset (identity head for regression, softmax for classification).
ModelSpec predictor_spec(const Dataset& data, const PlayerSpecs& players);
ModelSpec discriminator_spec(const Dataset& data, const PlayerSpecs& players);

/// Builds the adversarial batch for a dataset (targets and discriminator encoding of Y).
AdversarialBatch make_batch(const Dataset& data, const ResponseScaling& scaling);

/// Runs the alternating procedure: optional pretraining of each player, then
/// `outer_iterations` rounds of {fresh dummies; per batch: N_g discriminator
/// steps then N_g predictor steps}. `train.X` should already be standardized.
FairModel fit_fair(const Dataset& train, const DummySampler& sampler, const PlayerSpecs& players,
                   const TrainConfig& config);

/// Prediction loss for a task: MSE for regression, cross-entropy for classification.
Loss predictor_loss_kind(Task task);

/// Trace as CSV: iteration,J_f,J_d,penalty,train_loss
void write_trace_csv(std::ostream& out, const std::vector<TraceRecord>& trace);

}  // namespace fairdummies
