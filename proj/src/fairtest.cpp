#include "fairdummies/fairtest.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

namespace fairdummies {

const char* to_string(StatisticKind kind) {
  return kind == StatisticKind::SquaredError ? "squared_error" : "cross_entropy";
}

StatisticKind statistic_for(Task task) {
  return task == Task::Regression ? StatisticKind::SquaredError : StatisticKind::CrossEntropy;
}

void TestConfig::validate() const {
  if (resamples < 1) throw ConfigError("test resamples must be at least 1");
  if (!(split_fraction > 0.0 && split_fraction < 1.0))
    throw ConfigError("test split fraction must lie in (0, 1)");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("test dropout must lie in [0, 1)");
  if (epochs < 1) throw ConfigError("test epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("test batch size must be at least 1");
  if (!(clip > 0.0 && clip < 0.5)) throw ConfigError("probability clip must lie in (0, 0.5)");
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  optimizer.validate();
}

void TestData::validate() const {
  const auto n = Y.size();
  if (yhat.rows() != n || static_cast<Eigen::Index>(A.size()) != n)
    throw ShapeError("test data: predictions, attribute and response lengths differ");
  for (int a : A)
    if (a != 0 && a != 1) throw DataError("sensitive attribute must be binary");
  if (task == Task::Regression) {
    if (yhat.cols() != 1) throw ShapeError("regression predictions must have one column");
    return;
  }
  if (yhat.cols() < 2) throw ShapeError("classification predictions need one column per class");
  for (Eigen::Index i = 0; i < n; ++i)
    if (Y(i) < 0 || Y(i) >= static_cast<double>(yhat.cols()) || Y(i) != std::floor(Y(i)))
      throw DataError("class index out of range at row " + std::to_string(i));
}

TestData TestData::subset(const std::vector<Eigen::Index>& rows) const {
  TestData out;
  out.task = task;
  const auto m = static_cast<Eigen::Index>(rows.size());
  out.yhat.resize(m, yhat.cols());
  out.Y.resize(m);
  out.A.resize(rows.size());
  for (Eigen::Index r = 0; r < m; ++r) {
    const Eigen::Index i = rows[static_cast<std::size_t>(r)];
    out.yhat.row(r) = yhat.row(i);
    out.Y(r) = Y(i);
    out.A[static_cast<std::size_t>(r)] = A[static_cast<std::size_t>(i)];
  }
  return out;
}

Posterior posterior_of(const DummySampler& sampler) {
  return [&sampler](double y) { return sampler.posterior(y); };
}

double statistic(StatisticKind kind, double yhat, double r, double clip) {
  if (kind == StatisticKind::SquaredError) return (yhat - r) * (yhat - r);
  const double p = std::clamp(r, clip, 1.0 - clip);
  return -yhat * std::log(p) - (1.0 - yhat) * std::log(1.0 - p);
}

double p_value(double t_star, const std::vector<double>& t_resampled) {
  std::size_t count = 0;
  for (double t : t_resampled) count += t_star <= t;
  return static_cast<double>(1 + count) / static_cast<double>(t_resampled.size() + 1);
}

Vector statistic_target(const TestData& data) {
  if (data.task == Task::Regression) return data.yhat.col(0);
  Vector t(data.size());
  for (Eigen::Index i = 0; i < data.size(); ++i)
    t(i) = data.yhat(i, static_cast<Eigen::Index>(data.Y(i)));
  return t;
}

namespace {

double mean_of(const Vector& v) { return v.size() ? v.mean() : 0.0; }

double scale_of(const Vector& v, double mean) {
  if (v.size() == 0) return 1.0;
  const double sd = std::sqrt((v.array() - mean).square().mean());
  return sd > 0.0 ? sd : 1.0;
}

Matrix encode(const StatisticModel& m, const Vector& a, const Vector& y) {
  if (m.kind == StatisticKind::SquaredError) {
    Matrix z(a.size(), 2);
    z.col(0) = a;
    z.col(1) = ((y.array() - m.y_mean) / m.y_scale).matrix();
    return z;
  }
  Matrix z = Matrix::Zero(a.size(), 1 + m.num_classes);
  z.col(0) = a;
  for (Eigen::Index i = 0; i < a.size(); ++i) z(i, 1 + static_cast<Eigen::Index>(y(i))) = 1.0;
  return z;
}

// Rows sorted by (Y, A, yhat) so results do not depend on the input order.
std::vector<Eigen::Index> canonical_order(const TestData& d) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(d.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index i, Eigen::Index j) {
    if (d.Y(i) != d.Y(j)) return d.Y(i) < d.Y(j);
    const int ai = d.A[static_cast<std::size_t>(i)], aj = d.A[static_cast<std::size_t>(j)];
    if (ai != aj) return ai < aj;
    for (Eigen::Index c = 0; c < d.yhat.cols(); ++c)
      if (d.yhat(i, c) != d.yhat(j, c)) return d.yhat(i, c) < d.yhat(j, c);
    return false;
  });
  return idx;
}

Vector as_vector(const std::vector<int>& a) {
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i];
  return v;
}

}  // namespace

Vector StatisticModel::predict(const Vector& a, const Vector& y) const {
  DiffModel eval = net;
  eval.mode = Mode::Eval;
  Vector out = forward(eval, encode(*this, a, y)).col(0);
  if (kind == StatisticKind::SquaredError) out = (out.array() * yhat_scale + yhat_mean).matrix();
  return out;
}

StatisticModel fit_statistic_model(const TestData& fit_rows, const TestConfig& config) {
  config.validate();
  fit_rows.validate();
  if (fit_rows.size() == 0) throw SplitError("the statistic-fitting split is empty");
  const TestData d = fit_rows.subset(canonical_order(fit_rows));

  StatisticModel m;
  m.kind = statistic_for(d.task);
  m.num_classes = d.task == Task::Classification ? static_cast<int>(d.yhat.cols()) : 0;
  Vector target = statistic_target(d);
  if (m.kind == StatisticKind::SquaredError) {
    m.y_mean = mean_of(d.Y);
    m.y_scale = scale_of(d.Y, m.y_mean);
    m.yhat_mean = mean_of(target);
    m.yhat_scale = scale_of(target, m.yhat_mean);
    target = ((target.array() - m.yhat_mean) / m.yhat_scale).matrix();
  }
  const Matrix inputs = encode(m, as_vector(d.A), d.Y);

  ModelSpec spec;
  spec.input_dim = inputs.cols();
  spec.hidden = config.hidden;
  spec.output_dim = 1;
  spec.dropout = config.hidden.empty() ? 0.0 : config.dropout;
  spec.head = m.kind == StatisticKind::SquaredError ? Activation::Identity : Activation::Sigmoid;
  Rng rng = make_rng(config.seed, 0x7e58);
  m.net = make_model(spec, rng);
  m.net.mode = Mode::Train;
  Loss loss{m.kind == StatisticKind::SquaredError ? LossKind::MeanSquaredError
                                                  : LossKind::BinaryCrossEntropy,
            config.clip};
  Optimizer opt(config.optimizer);

  const Eigen::Index n = inputs.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const Eigen::Index b = std::min(config.batch_size, n);
  Matrix xb, tb;
  for (int e = 0; e < config.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += b) {
      const Eigen::Index stop = std::min(n, start + b);
      xb.resize(stop - start, inputs.cols());
      tb.resize(stop - start, 1);
      for (Eigen::Index r = start; r < stop; ++r) {
        xb.row(r - start) = inputs.row(order[static_cast<std::size_t>(r)]);
        tb(r - start, 0) = target(order[static_cast<std::size_t>(r)]);
      }
      auto g = gradient(m.net, loss, xb, tb, &rng);
      opt.step(m.net, g);
    }
  }
  m.net.mode = Mode::Eval;
  return m;
}

TestReport run_test(const TestData& fit_rows, const TestData& eval_rows, const Posterior& posterior,
                    const TestConfig& config) {
  config.validate();
  eval_rows.validate();
  if (fit_rows.task != eval_rows.task || fit_rows.yhat.cols() != eval_rows.yhat.cols())
    throw ShapeError("statistic-fitting and evaluation splits disagree in shape");
  if (eval_rows.size() == 0) throw SplitError("the evaluation split is empty");

  TestReport report;
  report.resamples = config.resamples;
  report.fit_size = fit_rows.size();
  report.eval_size = eval_rows.size();
  report.seed = config.seed;
  report.kind = statistic_for(eval_rows.task);
  if (eval_rows.size() < 10)
    report.warnings.push_back("evaluation split has only " + std::to_string(eval_rows.size()) +
                              " rows; the test has little power");

  const StatisticModel r = fit_statistic_model(fit_rows, config);
  const TestData d = eval_rows.subset(canonical_order(eval_rows));
  const Eigen::Index n = d.size();
  const Vector target = statistic_target(d);

  // r takes two values per row, one for each attribute value
  Vector stat[2];
  for (int a = 0; a < 2; ++a) {
    const Vector r_a = r.predict(Vector::Constant(n, a), d.Y);
    stat[a].resize(n);
    for (Eigen::Index i = 0; i < n; ++i) stat[a](i) = statistic(report.kind, target(i), r_a(i), config.clip);
  }
  std::vector<double> post(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = posterior(d.Y(i));
    if (!(p >= 0.0 && p <= 1.0)) throw DataError("posterior outside [0, 1] at row " + std::to_string(i));
    post[static_cast<std::size_t>(i)] = p;
  }

  double real = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) real += stat[d.A[static_cast<std::size_t>(i)]](i);
  report.t_star = -real / static_cast<double>(n);

  report.t_resampled.assign(static_cast<std::size_t>(config.resamples), 0.0);
  auto resample = [&](int k) {
    Rng rng = make_rng(config.seed, 0x100000 + static_cast<std::uint64_t>(k));
    const auto dummy = sample_dummies(post, rng);
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) s += stat[dummy[static_cast<std::size_t>(i)]](i);
    report.t_resampled[static_cast<std::size_t>(k)] = -s / static_cast<double>(n);
  };
  const int jobs = std::min(config.jobs, config.resamples);
  if (jobs <= 1) {
    for (int k = 0; k < config.resamples; ++k) resample(k);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < jobs; ++w)
      pool.emplace_back([&, w] {
        for (int k = w; k < config.resamples; k += jobs) resample(k);
      });
    for (auto& t : pool) t.join();
  }
  report.p_value = p_value(report.t_star, report.t_resampled);
  return report;
}

TestReport run_test(const TestData& data, const Posterior& posterior, const TestConfig& config) {
  config.validate();
  data.validate();
  const Eigen::Index n = data.size();
  const auto n1 = static_cast<Eigen::Index>(std::llround(config.split_fraction * static_cast<double>(n)));
  if (n1 < 1 || n1 >= n)
    throw SplitError("cannot split " + std::to_string(n) + " rows into two nonempty test parts");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  Rng rng = make_rng(config.seed, 0x7e57);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<Eigen::Index> first(idx.begin(), idx.begin() + n1), second(idx.begin() + n1, idx.end());
  return run_test(data.subset(first), data.subset(second), posterior, config);
}

std::string TestReport::to_json() const {
  nlohmann::ordered_json j;
  j["p_value"] = p_value;
  j["t_star"] = t_star;
  j["t_resampled"] = t_resampled;
  j["K"] = resamples;
  j["split_sizes"] = {{"fit", fit_size}, {"eval", eval_size}};
  j["seed"] = seed;
  j["statistic_kind"] = to_string(kind);
  j["warnings"] = warnings;
  return j.dump(2);
}

}  // namespace fairdummies
