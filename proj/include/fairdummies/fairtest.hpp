#pragma once

// Holdout randomization test of H0: Yhat independent of A given Y.
//
// A model r(A, Y) is fit on I1 to predict Yhat. On I2 the mean statistic
// T(Yhat, Y, r(A, Y)) with the real attribute is compared with K copies that
// use freshly drawn fair dummies. T is a loss, so a small value with the real
// attribute is evidence against H0. The reported t values are negated mean
// losses so that
//   p = (1 + #{k : t* <= t_k}) / (K + 1)
// applies as written: large t* is evidence.

#include "fairdummies/common.hpp"
#include "fairdummies/diffmodels.hpp"
#include "fairdummies/dummies.hpp"

#include <functional>
#include <string>
#include <vector>

namespace fairdummies {

enum class StatisticKind { SquaredError, CrossEntropy };

const char* to_string(StatisticKind kind);
StatisticKind statistic_for(Task task);

struct TestConfig {
  int resamples = 100;           ///< K
  double split_fraction = 0.5;   ///< share of rows fitting r when no holdout is given
  std::vector<Eigen::Index> hidden{64};
  double dropout = 0.5;
  OptimizerConfig optimizer{OptimizerKind::Sgd, 0.01, 0.9};
  int epochs = 200;
  Eigen::Index batch_size = 128;
  double clip = 1e-7;
  std::uint64_t seed = 0;
  int jobs = 1;  ///< worker threads for the K resamplings; the result does not depend on it

  void validate() const;
};

/// Predictions for a fixed rule: n x 1 values (regression) or n x L class
/// probabilities (classification). Y holds 0-based class indices for classification.
struct TestData {
  Task task = Task::Regression;
  Matrix yhat;
  std::vector<int> A;
  Vector Y;

  Eigen::Index size() const { return Y.size(); }
  void validate() const;
  TestData subset(const std::vector<Eigen::Index>& rows) const;
};

/// P(A = 1 | Y = y).
using Posterior = std::function<double(double)>;

Posterior posterior_of(const DummySampler& sampler);

/// Per-row statistic. Regression: (yhat - r)^2. Classification, with yhat the
/// probability of the realized class: -yhat log r - (1 - yhat) log(1 - r), r clipped.
double statistic(StatisticKind kind, double yhat, double r, double clip = 1e-7);

/// (1 + #{k : t_star <= t_k}) / (K + 1).
double p_value(double t_star, const std::vector<double>& t_resampled);

/// Fitted r together with the encodings it was trained on.
struct StatisticModel {
  StatisticKind kind = StatisticKind::SquaredError;
  int num_classes = 0;
  DiffModel net;
  double y_mean = 0.0, y_scale = 1.0;        ///< regression input Y scaling
  double yhat_mean = 0.0, yhat_scale = 1.0;  ///< regression target scaling

  /// r(A, Y) on the original scale of the target.
  Vector predict(const Vector& a, const Vector& y) const;
};

/// Target of r per row: yhat itself (regression) or the probability of the realized class.
Vector statistic_target(const TestData& data);

StatisticModel fit_statistic_model(const TestData& fit_rows, const TestConfig& config);

struct TestReport {
  double p_value = 1.0;
  double t_star = 0.0;
  std::vector<double> t_resampled;
  int resamples = 0;
  Eigen::Index fit_size = 0;   ///< |I1|
  Eigen::Index eval_size = 0;  ///< |I2|
  std::uint64_t seed = 0;
  StatisticKind kind = StatisticKind::SquaredError;
  std::vector<std::string> warnings;

  std::string to_json() const;
};

/// I1 = `fit_rows`, I2 = `eval_rows`.
TestReport run_test(const TestData& fit_rows, const TestData& eval_rows, const Posterior& posterior,
                    const TestConfig& config);

/// Splits `data` into I1/I2 with `config.split_fraction` and the seed.
TestReport run_test(const TestData& data, const Posterior& posterior, const TestConfig& config);

}  // namespace fairdummies
