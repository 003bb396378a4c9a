#include <doctest.h>

#include "fairdummies/fairtrain.hpp"
#include "oracles.hpp"

#include <sstream>

using namespace fairdummies;

namespace {

// cov with denominator n, computed as E[xy] - E[x]E[y]
double population_cov(const Matrix& x, Eigen::Index col, const Vector& a) {
  const double n = static_cast<double>(a.size());
  double sxy = 0, sx = 0, sa = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    sxy += x(i, col) * a(i);
    sx += x(i, col);
    sa += a(i);
  }
  return sxy / n - (sx / n) * (sa / n);
}

Vector bernoulli(Eigen::Index n, double p, Rng& rng) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = uniform01(rng) < p ? 1.0 : 0.0;
  return v;
}

DiffModel net(Eigen::Index in, std::vector<Eigen::Index> hidden, Eigen::Index out, Activation head,
              Rng& rng) {
  ModelSpec spec;
  spec.input_dim = in;
  spec.hidden = std::move(hidden);
  spec.output_dim = out;
  spec.head = head;
  auto m = make_model(spec, rng);
  for (auto& layer : m.layers) layer.bias = oracles::random_matrix(layer.bias.size(), 1, rng, 0.3);
  return m;
}

AdversarialBatch regression_batch(Eigen::Index n, Eigen::Index p, Rng& rng) {
  AdversarialBatch b;
  b.X = oracles::random_matrix(n, p, rng);
  b.target = oracles::random_matrix(n, 1, rng);
  b.response = b.target;
  b.attribute = bernoulli(n, 0.4, rng);
  b.dummy = bernoulli(n, 0.4, rng);
  return b;
}

AdversarialBatch classification_batch(Eigen::Index n, Eigen::Index p, Eigen::Index L, Rng& rng) {
  AdversarialBatch b;
  b.X = oracles::random_matrix(n, p, rng);
  b.target = Matrix::Zero(n, L);
  for (Eigen::Index i = 0; i < n; ++i) b.target(i, static_cast<Eigen::Index>(rng() % L)) = 1.0;
  b.response = b.target;
  b.attribute = bernoulli(n, 0.5, rng);
  b.dummy = bernoulli(n, 0.5, rng);
  return b;
}

Dataset regression_data(Eigen::Index n, std::uint64_t seed) {
  SyntheticConfig cfg;
  cfg.n = n;
  cfg.seed = seed;
  Dataset d = generate_synthetic(cfg);
  d.X = Standardizer::fit(d.X).apply(d.X);
  return d;
}

}  // namespace

TEST_SUITE("fairtrain") {

TEST_CASE("covariance penalty matches explicit covariances") {
  Rng rng(1);
  Matrix yhat = oracles::random_matrix(50, 3, rng);
  Vector a = bernoulli(50, 0.3, rng), dummy = bernoulli(50, 0.6, rng);
  double expect = 0;
  for (Eigen::Index j = 0; j < 3; ++j) {
    const double d = population_cov(yhat, j, a) - population_cov(yhat, j, dummy);
    expect += d * d;
  }
  CHECK(covariance_penalty(yhat, a, dummy) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(covariance_penalty(yhat, a, a) == 0.0);

  // two points: cov(yhat, a) = 1/4, cov(yhat, constant) = 0
  Matrix two(2, 1);
  two << 0, 1;
  Vector a2(2), d2(2);
  a2 << 0, 1;
  d2 << 0, 0;
  CHECK(covariance_penalty(two, a2, d2) == doctest::Approx(0.0625));

  Matrix constant = Matrix::Constant(50, 1, 2.5);
  CHECK(covariance_penalty(constant, a, dummy) == doctest::Approx(0.0).scale(1.0));
  CHECK_THROWS_AS(covariance_penalty(two.topRows(1), a2.head(1), d2.head(1)), ShapeError);
}

TEST_CASE("covariance penalty gradient matches finite differences") {
  Rng rng(2);
  Matrix yhat = oracles::random_matrix(20, 2, rng);
  Vector a = bernoulli(20, 0.5, rng), dummy = bernoulli(20, 0.5, rng);
  Matrix g = covariance_penalty_grad(yhat, a, dummy);
  const double h = 1e-6;
  for (Eigen::Index k = 0; k < yhat.size(); ++k) {
    Matrix up = yhat, down = yhat;
    up.data()[k] += h;
    down.data()[k] -= h;
    const double fd = (covariance_penalty(up, a, dummy) - covariance_penalty(down, a, dummy)) / (2 * h);
    CHECK(g.data()[k] == doctest::Approx(fd).epsilon(1e-5).scale(1e-6));
  }
}

TEST_CASE("predictor gradient matches finite differences of J_f") {
  for (int draw = 0; draw < 10; ++draw) {
    Rng rng(100 + draw);
    {
      auto batch = regression_batch(25, 3, rng);
      auto f = net(3, {4}, 1, Activation::Identity, rng);
      auto d = net(3, {5}, 1, Activation::Sigmoid, rng);
      Loss loss{LossKind::MeanSquaredError};
      auto g = predictor_gradient(f, d, batch, loss, 0.6, 2.0);
      auto fd = oracles::finite_difference(
          f, [&](const DiffModel& m) { return predictor_loss(m, d, batch, loss, 0.6, 2.0).total; });
      CHECK(oracles::max_relative_error(g, fd) <= 1e-4);
    }
    {
      auto batch = classification_batch(25, 3, 3, rng);
      auto f = net(3, {4}, 3, Activation::Softmax, rng);
      auto d = net(7, {5}, 1, Activation::Sigmoid, rng);
      Loss loss{LossKind::CrossEntropy};
      auto g = predictor_gradient(f, d, batch, loss, 0.9, 0.5);
      auto fd = oracles::finite_difference(
          f, [&](const DiffModel& m) { return predictor_loss(m, d, batch, loss, 0.9, 0.5).total; });
      CHECK(oracles::max_relative_error(g, fd) <= 1e-4);
    }
  }
}

TEST_CASE("discriminator gradient matches finite differences of J_d") {
  for (int draw = 0; draw < 10; ++draw) {
    Rng rng(200 + draw);
    auto batch = classification_batch(30, 2, 4, rng);
    auto f = net(2, {}, 4, Activation::Softmax, rng);
    auto d = net(9, {6}, 1, Activation::Sigmoid, rng);
    auto g = discriminator_gradient(d, f, batch);
    auto fd = oracles::finite_difference(
        d, [&](const DiffModel& m) { return discriminator_loss(m, f, batch); });
    CHECK(oracles::max_relative_error(g, fd) <= 1e-4);
  }
}

TEST_CASE("a constant one-half discriminator gives 2 log 2") {
  Rng rng(3);
  auto batch = regression_batch(40, 2, rng);
  auto f = net(2, {}, 1, Activation::Identity, rng);
  auto d = net(3, {4}, 1, Activation::Sigmoid, rng);
  d.layers.back().weight.setZero();
  d.layers.back().bias.setZero();
  CHECK(discriminator_loss(d, f, batch) == doctest::Approx(2 * std::log(2.0)));
  Loss loss{LossKind::MeanSquaredError};
  auto obj = predictor_loss(f, d, batch, loss, 0.5, 0.0);
  CHECK(obj.adversarial == doctest::Approx(2 * std::log(2.0)));
  CHECK(obj.total == doctest::Approx(0.5 * obj.loss + 0.5 * 2 * std::log(2.0)));
}

TEST_CASE("lambda zero reduces J_f and its gradient to the plain loss") {
  Rng rng(4);
  auto batch = regression_batch(30, 3, rng);
  auto f = net(3, {5}, 1, Activation::Identity, rng);
  auto d = net(3, {5}, 1, Activation::Sigmoid, rng);
  Loss loss{LossKind::MeanSquaredError};
  auto obj = predictor_loss(f, d, batch, loss, 0.0, 10.0);
  CHECK(obj.total == loss.value(forward(f, batch.X), batch.target));
  auto g = predictor_gradient(f, d, batch, loss, 0.0, 10.0);
  auto plain = gradient(f, loss, batch.X, batch.target);
  CHECK(oracles::max_relative_error(g, plain, 0.0) == 0.0);
}

TEST_CASE("discriminator separates flipped attributes and not independent ones") {
  Rng rng(5);
  const Eigen::Index n = 400;
  auto f = net(2, {}, 1, Activation::Identity, rng);
  auto train_d = [&](AdversarialBatch& b) {
    auto d = net(3, {16}, 1, Activation::Sigmoid, rng);
    Optimizer opt({OptimizerKind::Adam, 0.05});
    for (int s = 0; s < 600; ++s) {
      auto g = discriminator_gradient(d, f, b);
      opt.step(d, g);
    }
    return d;
  };

  // real attribute = 1{Y > 0}, dummy = its complement: separable
  AdversarialBatch sep = regression_batch(n, 2, rng);
  for (Eigen::Index i = 0; i < n; ++i) {
    sep.attribute(i) = sep.response(i, 0) > 0;
    sep.dummy(i) = 1.0 - sep.attribute(i);
  }
  auto d1 = train_d(sep);
  CHECK(discriminator_accuracy(d1, f, sep) >= 0.95);

  // attribute and dummy both independent coins: judged on fresh rows
  AdversarialBatch same = regression_batch(n, 2, rng);
  same.attribute = bernoulli(n, 0.5, rng);
  same.dummy = bernoulli(n, 0.5, rng);
  auto d2 = train_d(same);
  AdversarialBatch fresh = regression_batch(4000, 2, rng);
  fresh.attribute = bernoulli(4000, 0.5, rng);
  fresh.dummy = bernoulli(4000, 0.5, rng);
  CHECK(discriminator_accuracy(d2, f, fresh) <= 0.55);
}

TEST_CASE("lambda zero training equals a direct empirical-risk loop") {
  Dataset train = regression_data(120, 7);
  auto sampler = DummySampler::fit(train.A, train.Y, Task::Regression);
  PlayerSpecs players;
  players.predictor_hidden = {8};
  players.predictor_dropout = 0.2;
  TrainConfig cfg;
  cfg.lambda = 0.0;
  cfg.outer_iterations = 4;
  cfg.steps_per_round = 5;
  cfg.pretrain_epochs = 3;
  cfg.seed = 11;
  FairModel model = fit_fair(train, sampler, players, cfg);

  Rng rng_f = make_rng(cfg.seed, 1);
  DiffModel f = make_model(predictor_spec(train, players), rng_f);
  f.mode = Mode::Train;
  const double mean = train.Y.mean();
  const double sd = std::sqrt((train.Y.array() - mean).square().mean());
  Matrix target = ((train.Y.array() - mean) / sd).matrix();
  Optimizer opt(cfg.predictor);
  Loss mse{LossKind::MeanSquaredError};
  for (int s = 0; s < cfg.pretrain_epochs + cfg.outer_iterations * cfg.steps_per_round; ++s) {
    auto g = gradient(f, mse, train.X, target, &rng_f);
    opt.step(f, g);
  }
  for (std::size_t l = 0; l < f.layers.size(); ++l) {
    CHECK((f.layers[l].weight - model.predictor.layers[l].weight).cwiseAbs().maxCoeff() == 0.0);
    CHECK((f.layers[l].bias - model.predictor.layers[l].bias).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("unpenalized linear training converges to least squares") {
  Dataset train = regression_data(300, 8);
  auto sampler = DummySampler::fit(train.A, train.Y, Task::Regression);
  TrainConfig cfg;
  cfg.lambda = 0.0;
  cfg.outer_iterations = 40;
  FairModel model = fit_fair(train, sampler, PlayerSpecs{}, cfg);

  // normal equations with an intercept column
  Matrix design(train.size(), train.X.cols() + 1);
  design << train.X, Matrix::Ones(train.size(), 1);
  Vector beta = (design.transpose() * design).ldlt().solve(design.transpose() * train.Y);
  Vector ols = design * beta;
  Matrix pred = model.predict(train.X);
  const double sd = std::sqrt((train.Y.array() - train.Y.mean()).square().mean());
  CHECK((pred.col(0) - ols).cwiseAbs().maxCoeff() / sd <= 1e-3);
  REQUIRE(model.trace.size() == 40);
  for (std::size_t k = 0; k < model.trace.size(); ++k) {
    CHECK(model.trace[k].iteration == static_cast<int>(k) + 1);
    CHECK(std::isfinite(model.trace[k].predictor_objective));
    CHECK(std::isfinite(model.trace[k].discriminator_objective));
  }
}

TEST_CASE("uninformative features give the marginal mean") {
  Dataset train = regression_data(200, 9);
  train.X = Matrix::Zero(train.size(), 1);
  train.feature_names = {"zero"};
  auto sampler = DummySampler::fit(train.A, train.Y, Task::Regression);
  TrainConfig cfg;
  cfg.lambda = 0.0;
  cfg.outer_iterations = 10;
  FairModel model = fit_fair(train, sampler, PlayerSpecs{}, cfg);
  const double sd = std::sqrt((train.Y.array() - train.Y.mean()).square().mean());
  CHECK(std::abs(model.predict(train.X)(0, 0) - train.Y.mean()) / sd <= 1e-3);
}

TEST_CASE("fairness weight narrows the gap between group errors") {
  Dataset train = regression_data(400, 10);
  auto sampler = DummySampler::fit(train.A, train.Y, Task::Regression);
  auto group_rmse_ratio = [&](const FairModel& m) {
    Matrix pred = m.predict(train.X);
    double se[2] = {0, 0}, n[2] = {0, 0};
    for (Eigen::Index i = 0; i < train.size(); ++i) {
      const int a = train.A[static_cast<std::size_t>(i)];
      se[a] += (pred(i, 0) - train.Y(i)) * (pred(i, 0) - train.Y(i));
      n[a] += 1;
    }
    return std::sqrt(se[0] / n[0]) / std::sqrt(se[1] / n[1]);
  };
  TrainConfig cfg;
  cfg.outer_iterations = 20;
  cfg.lambda = 0.0;
  const double plain = group_rmse_ratio(fit_fair(train, sampler, PlayerSpecs{}, cfg));
  cfg.lambda = 0.7;
  const double fair = group_rmse_ratio(fit_fair(train, sampler, PlayerSpecs{}, cfg));
  MESSAGE("group RMSE ratio plain " << plain << " fair " << fair);
  CHECK(plain > 1.5);
  CHECK(fair < plain - 0.5);
}

TEST_CASE("minibatch training handles a trailing single row") {
  Dataset train = regression_data(65, 12);
  auto sampler = DummySampler::fit(train.A, train.Y, Task::Regression);
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.outer_iterations = 2;
  cfg.steps_per_round = 2;
  FairModel model = fit_fair(train, sampler, PlayerSpecs{{6}, 0.5, {4}}, cfg);
  CHECK(model.trace.size() == 2);
}

TEST_CASE("classification training produces probabilities") {
  SyntheticConfig sc;
  sc.task = Task::Classification;
  sc.n = 300;
  sc.seed = 13;
  Dataset train = generate_synthetic(sc);
  train.X = Standardizer::fit(train.X).apply(train.X);
  auto sampler = DummySampler::fit(train.A, train.Y, Task::Classification, train.num_classes);
  TrainConfig cfg = TrainConfig::classification_defaults();
  cfg.outer_iterations = 3;
  FairModel model = fit_fair(train, sampler, PlayerSpecs{{16}, 0.5, {8}}, cfg);
  Matrix p = model.predict(train.X);
  REQUIRE(p.cols() == train.num_classes);
  for (Eigen::Index i = 0; i < p.rows(); ++i) CHECK(p.row(i).sum() == doctest::Approx(1.0));
}

TEST_CASE("divergence is reported with the trace so far") {
  Dataset train = regression_data(100, 14);
  auto sampler = DummySampler::fit(train.A, train.Y, Task::Regression);
  TrainConfig cfg;
  cfg.predictor.learning_rate = 1e6;
  cfg.pretrain_epochs = 0;
  bool thrown = false;
  try {
    fit_fair(train, sampler, PlayerSpecs{}, cfg);
  } catch (const TrainingDiverged& e) {
    thrown = true;
    CHECK(e.trace().size() < static_cast<std::size_t>(cfg.outer_iterations));
  }
  CHECK(thrown);
}

TEST_CASE("configuration checks") {
  TrainConfig cfg;
  cfg.lambda = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.gamma = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  Dataset train = regression_data(50, 15);
  auto cls = DummySampler::from_class_posteriors({0.5, 0.5}, 0.5);
  CHECK_THROWS_AS(fit_fair(train, cls, PlayerSpecs{}, TrainConfig{}), ConfigError);
}

TEST_CASE("trace csv layout") {
  std::ostringstream out;
  write_trace_csv(out, {{1, 0.5, -1.25, 0.0, 2.0}});
  CHECK(out.str() == "iteration,J_f,J_d,penalty,train_loss\n1,0.5,-1.25,0,2\n");
}

}  // TEST_SUITE
