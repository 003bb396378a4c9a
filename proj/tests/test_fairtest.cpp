#include <doctest.h>

#include "fairdummies/fairtest.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

using namespace fairdummies;

namespace {

// Regression triples where A shifts Y and Yhat = Y + shift * A + noise.
TestData regression_rows(Eigen::Index n, double shift, Rng& rng) {
  std::normal_distribution<double> normal;
  TestData d;
  d.yhat.resize(n, 1);
  d.Y.resize(n);
  d.A.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int a = uniform01(rng) < 0.5;
    d.A[static_cast<std::size_t>(i)] = a;
    d.Y(i) = normal(rng) + a;
    d.yhat(i, 0) = d.Y(i) + shift * a + 0.3 * normal(rng);
  }
  return d;
}

TestConfig quick_config(std::uint64_t seed) {
  TestConfig c;
  c.epochs = 40;
  c.resamples = 99;
  c.seed = seed;
  return c;
}

// Exact P(A = 1 | Y = y) when A ~ Bernoulli(1/2) and Y | A ~ N(A, 1).
double shifted_normal_posterior(double y) {
  const double l1 = std::exp(-0.5 * (y - 1) * (y - 1)), l0 = std::exp(-0.5 * y * y);
  return l1 / (l1 + l0);
}

}  // namespace

TEST_SUITE("fairtest") {

TEST_CASE("statistic formulas") {
  CHECK(statistic(StatisticKind::SquaredError, 1.25, 1.25) == 0.0);
  CHECK(statistic(StatisticKind::SquaredError, 2.0, 0.0) == 4.0);
  CHECK(statistic(StatisticKind::CrossEntropy, 0.5, 0.5) == doctest::Approx(0.6931471805599453));
  // r = 0 is clipped before the log
  CHECK(std::isfinite(statistic(StatisticKind::CrossEntropy, 0.7, 0.0)));
}

TEST_CASE("p-value formula edge cases") {
  std::vector<double> below(99, -1.0);
  CHECK(p_value(0.0, below) == 1.0 / 100.0);
  std::vector<double> above(99, 1.0);
  CHECK(p_value(0.0, above) == 1.0);
  // ties count toward the numerator
  std::vector<double> ties{0.0, 0.0, -1.0, 1.0};
  CHECK(p_value(0.0, ties) == doctest::Approx(4.0 / 5.0));
}

TEST_CASE("statistic model fits simple targets") {
  Rng rng(1);
  TestConfig cfg = quick_config(2);
  cfg.epochs = 200;

  TestData constant = regression_rows(200, 0.0, rng);
  constant.yhat.setConstant(3.5);
  auto r = fit_statistic_model(constant, cfg);
  Vector a(3), y(3);
  a << 0, 1, 1;
  y << -2, 0.5, 3;
  CHECK((r.predict(a, y).array() - 3.5).abs().maxCoeff() <= 1e-2);

  TestData equal_a = regression_rows(200, 0.0, rng);
  for (Eigen::Index i = 0; i < equal_a.size(); ++i) equal_a.yhat(i, 0) = equal_a.A[static_cast<std::size_t>(i)];
  auto ra = fit_statistic_model(equal_a, cfg);
  Vector av(equal_a.size());
  for (Eigen::Index i = 0; i < av.size(); ++i) av(i) = equal_a.A[static_cast<std::size_t>(i)];
  CHECK((ra.predict(av, equal_a.Y) - equal_a.yhat.col(0)).squaredNorm() / av.size() <= 0.01);

  TestData cls;
  cls.task = Task::Classification;
  cls.yhat = Matrix::Constant(200, 2, 0.5);
  cls.Y.resize(200);
  cls.A.resize(200);
  for (Eigen::Index i = 0; i < 200; ++i) {
    cls.Y(i) = static_cast<double>(i % 2);
    cls.A[static_cast<std::size_t>(i)] = (i / 2) % 2;
  }
  auto rc = fit_statistic_model(cls, cfg);
  CHECK((rc.predict(Vector::Constant(2, 1.0), Vector::LinSpaced(2, 0.0, 1.0)).array() - 0.5).abs().maxCoeff() <= 1e-2);
}

TEST_CASE("violations are detected and the report is reproducible") {
  Rng rng(3);
  TestData data = regression_rows(600, 1.5, rng);
  auto cfg = quick_config(4);
  auto report = run_test(data, shifted_normal_posterior, cfg);
  CHECK(report.p_value == doctest::Approx(0.01));
  CHECK(report.fit_size == 300);
  CHECK(report.eval_size == 300);
  CHECK(report.t_resampled.size() == 99);
  CHECK(report.warnings.empty());
  CHECK(report.to_json() == run_test(data, shifted_normal_posterior, cfg).to_json());
  cfg.jobs = 3;
  CHECK(report.to_json() == run_test(data, shifted_normal_posterior, cfg).to_json());
}

TEST_CASE("p-values under the null are not concentrated near zero") {
  int rejections = 0;
  const int trials = 20;
  for (int t = 0; t < trials; ++t) {
    Rng rng(100 + t);
    TestData data = regression_rows(200, 0.0, rng);
    auto report = run_test(data, shifted_normal_posterior, quick_config(t));
    rejections += report.p_value <= 0.05;
  }
  // P(Binomial(20, 0.05) >= 5) < 0.003
  CHECK(rejections < 5);
}

TEST_CASE("evaluation rows may be permuted without changing the report") {
  Rng rng(5);
  TestData fit = regression_rows(100, 0.5, rng);
  TestData eval = regression_rows(80, 0.5, rng);
  std::vector<Eigen::Index> perm(80);
  for (Eigen::Index i = 0; i < 80; ++i) perm[static_cast<std::size_t>(i)] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  auto cfg = quick_config(6);
  CHECK(run_test(fit, eval, shifted_normal_posterior, cfg).to_json() ==
        run_test(fit, eval.subset(perm), shifted_normal_posterior, cfg).to_json());
}

TEST_CASE("small evaluation splits carry a warning and bad splits are rejected") {
  Rng rng(7);
  TestData fit = regression_rows(40, 0.0, rng);
  TestData eval = regression_rows(6, 0.0, rng);
  auto report = run_test(fit, eval, shifted_normal_posterior, quick_config(1));
  REQUIRE(report.warnings.size() == 1);
  CHECK(report.p_value >= 1.0 / 100.0);
  CHECK(report.p_value <= 1.0);

  TestData one = regression_rows(1, 0.0, rng);
  CHECK_THROWS_AS(run_test(one, shifted_normal_posterior, quick_config(1)), SplitError);
  TestConfig bad;
  bad.resamples = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("report json layout") {
  TestReport r;
  r.p_value = 0.5;
  r.t_star = -1.0;
  r.t_resampled = {-2.0, 0.0};
  r.resamples = 2;
  r.fit_size = 3;
  r.eval_size = 4;
  r.seed = 9;
  auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["p_value"] == 0.5);
  CHECK(j["K"] == 2);
  CHECK(j["split_sizes"]["eval"] == 4);
  CHECK(j["statistic_kind"] == "squared_error");
  CHECK(j["t_resampled"].size() == 2);
}

}  // TEST_SUITE
