#include "fairdummies/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

namespace fairdummies {

namespace {

enum class KeyType { Integer, Number, String };

struct KeyInfo {
  KeyType type;
  const char* help;
};

const std::map<std::string, KeyInfo>& key_table() {
  static const std::map<std::string, KeyInfo> table{
      {"seed", {KeyType::Integer, "base seed for splits, training and tests"}},
      {"output_dir", {KeyType::String, "directory for every output file"}},
      {"jobs", {KeyType::Integer, "worker threads for benchmark repetitions and test resamples"}},
      {"data.source", {KeyType::String, "synthetic | csv"}},
      {"data.csv", {KeyType::String, "CSV file (data.source = csv)"}},
      {"data.schema", {KeyType::String, "JSON schema describing the CSV columns"}},
      {"synthetic.task", {KeyType::String, "regression (two-group linear law) | classification (4-class fixture)"}},
      {"synthetic.n", {KeyType::Integer, "rows to generate"}},
      {"synthetic.group1_proportion", {KeyType::Number, "P(A = 1)"}},
      {"synthetic.noise_std", {KeyType::Number, "standard deviation of the response noise"}},
      {"synthetic.seed", {KeyType::Integer, "generator seed (defaults to seed)"}},
      {"split.train", {KeyType::Number, "training fraction"}},
      {"split.holdout", {KeyType::Number, "hold-out fraction (test statistic and conformal calibration)"}},
      {"split.test", {KeyType::Number, "test fraction"}},
      {"model.family", {KeyType::String, "linear | two_layer"}},
      {"model.hidden", {KeyType::Integer, "hidden width of the two_layer predictor"}},
      {"model.dropout", {KeyType::Number, "dropout rate of the two_layer predictor"}},
      {"model.discriminator_hidden", {KeyType::Integer, "hidden width of the discriminator"}},
      {"train.lambda", {KeyType::Number, "fairness weight in [0, 1)"}},
      {"train.gamma", {KeyType::Number, "covariance penalty weight"}},
      {"train.outer_iterations", {KeyType::Integer, "adversarial rounds"}},
      {"train.steps_per_round", {KeyType::Integer, "gradient steps per player per batch"}},
      {"train.batch_size", {KeyType::Integer, "minibatch size, 0 for full batch"}},
      {"train.pretrain_epochs", {KeyType::Integer, "plain epochs per player before the rounds"}},
      {"train.predictor_optimizer", {KeyType::String, "sgd | adam"}},
      {"train.predictor_lr", {KeyType::Number, "predictor learning rate"}},
      {"train.predictor_momentum", {KeyType::Number, "predictor SGD momentum"}},
      {"train.discriminator_optimizer", {KeyType::String, "sgd | adam"}},
      {"train.discriminator_lr", {KeyType::Number, "discriminator learning rate"}},
      {"train.discriminator_momentum", {KeyType::Number, "discriminator SGD momentum"}},
      {"test.resamples", {KeyType::Integer, "dummy resamples K"}},
      {"test.epochs", {KeyType::Integer, "epochs for the statistic model"}},
      {"test.batch_size", {KeyType::Integer, "minibatch size for the statistic model"}},
      {"test.hidden", {KeyType::Integer, "hidden width of the statistic model"}},
      {"test.dropout", {KeyType::Number, "dropout of the statistic model"}},
      {"test.lr", {KeyType::Number, "statistic model learning rate"}},
      {"test.momentum", {KeyType::Number, "statistic model SGD momentum"}},
      {"conformal.alpha", {KeyType::Number, "miscoverage level"}},
      {"benchmark.repetitions", {KeyType::Integer, "number of repeated splits"}},
  };
  return table;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

const std::vector<std::pair<std::string, std::string>>& ExperimentConfig::keys() {
  static const auto list = [] {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [k, info] : key_table()) out.emplace_back(k, info.help);
    return out;
  }();
  return list;
}

void ExperimentConfig::set(const std::string& key, const nlohmann::json& value) {
  const auto it = key_table().find(key);
  if (it == key_table().end()) throw ConfigError("unknown configuration key '" + key + "'");
  bool ok = false;
  switch (it->second.type) {
    case KeyType::Integer: ok = value.is_number_integer(); break;
    case KeyType::Number: ok = value.is_number(); break;
    case KeyType::String: ok = value.is_string(); break;
  }
  if (!ok) throw ConfigError("configuration key '" + key + "' has the wrong type");
  if (it->second.type == KeyType::Integer && value.get<long long>() < 0)
    throw ConfigError("configuration key '" + key + "' must be nonnegative");
  values_[key] = value;
}

ExperimentConfig ExperimentConfig::parse(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("configuration is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  ExperimentConfig c;
  for (const auto& [k, v] : j.items()) c.set(k, v);
  return c;
}

ExperimentConfig ExperimentConfig::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open configuration file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  ExperimentConfig c = parse(buf.str());
  // data paths are relative to the configuration file
  for (const char* key : {"data.csv", "data.schema"})
    if (c.has(key)) {
      std::filesystem::path p = c.values_[key].get<std::string>();
      if (p.is_relative()) c.values_[key] = (path.parent_path() / p).lexically_normal().string();
    }
  return c;
}

template <class T>
T ExperimentConfig::get(const std::string& key, T fallback) const {
  return values_.contains(key) ? values_[key].get<T>() : fallback;
}

std::uint64_t ExperimentConfig::seed() const { return get<std::uint64_t>("seed", 0); }
std::string ExperimentConfig::output_dir() const { return get<std::string>("output_dir", "out"); }

int ExperimentConfig::repetitions() const {
  const int r = get<int>("benchmark.repetitions", 20);
  if (r < 1) throw ConfigError("benchmark.repetitions must be at least 1");
  return r;
}

int ExperimentConfig::jobs() const { return std::max(1, get<int>("jobs", 1)); }
double ExperimentConfig::alpha() const { return get<double>("conformal.alpha", 0.1); }

std::string ExperimentConfig::model_family() const {
  const auto f = get<std::string>("model.family", "linear");
  if (f != "linear" && f != "two_layer")
    throw ConfigError("model.family must be linear or two_layer, got '" + f + "'");
  return f;
}

Dataset ExperimentConfig::load_data() const {
  const auto source = get<std::string>("data.source", "synthetic");
  if (source == "csv") {
    if (!has("data.csv") || !has("data.schema"))
      throw ConfigError("data.source = csv needs data.csv and data.schema");
    return load_csv(get<std::string>("data.csv", ""), read_schema(get<std::string>("data.schema", "")));
  }
  if (source != "synthetic") throw ConfigError("data.source must be synthetic or csv, got '" + source + "'");
  SyntheticConfig s;
  s.task = parse_task(get<std::string>("synthetic.task", "regression"));
  s.n = get<Eigen::Index>("synthetic.n", 2000);
  if (has("synthetic.group1_proportion")) s.group1_proportion = get<double>("synthetic.group1_proportion", 0.5);
  s.noise_std = get<double>("synthetic.noise_std", s.noise_std);
  s.seed = get<std::uint64_t>("synthetic.seed", seed());
  return generate_synthetic(s);
}

SplitSpec ExperimentConfig::split_spec(std::uint64_t split_seed) const {
  SplitSpec s;
  s.fractions = {get<double>("split.train", 0.6), get<double>("split.holdout", 0.2),
                 get<double>("split.test", 0.2)};
  s.seed = split_seed;
  s.validate();
  return s;
}

PlayerSpecs ExperimentConfig::players(Task task) const {
  PlayerSpecs p;
  if (model_family() == "two_layer") {
    p.predictor_hidden = {get<Eigen::Index>("model.hidden", 64)};
    p.predictor_dropout = get<double>("model.dropout", 0.5);
  }
  p.discriminator_hidden = {get<Eigen::Index>("model.discriminator_hidden",
                                              task == Task::Regression ? 30 : 32)};
  return p;
}

TrainConfig ExperimentConfig::train_config(Task task, std::uint64_t train_seed) const {
  TrainConfig c = task == Task::Regression ? TrainConfig::regression_defaults()
                                           : TrainConfig::classification_defaults();
  c.lambda = get<double>("train.lambda", c.lambda);
  c.gamma = get<double>("train.gamma", c.gamma);
  c.outer_iterations = get<int>("train.outer_iterations", c.outer_iterations);
  c.steps_per_round = get<int>("train.steps_per_round", c.steps_per_round);
  c.batch_size = get<Eigen::Index>("train.batch_size", c.batch_size);
  c.pretrain_epochs = get<int>("train.pretrain_epochs", c.pretrain_epochs);
  if (has("train.predictor_optimizer"))
    c.predictor.kind = parse_optimizer(get<std::string>("train.predictor_optimizer", ""));
  c.predictor.learning_rate = get<double>("train.predictor_lr", c.predictor.learning_rate);
  c.predictor.momentum = get<double>("train.predictor_momentum", c.predictor.momentum);
  if (has("train.discriminator_optimizer"))
    c.discriminator.kind = parse_optimizer(get<std::string>("train.discriminator_optimizer", ""));
  c.discriminator.learning_rate = get<double>("train.discriminator_lr", c.discriminator.learning_rate);
  c.discriminator.momentum = get<double>("train.discriminator_momentum", c.discriminator.momentum);
  c.seed = train_seed;
  c.validate();
  return c;
}

TestConfig ExperimentConfig::test_config(std::uint64_t test_seed) const {
  TestConfig c;
  c.resamples = get<int>("test.resamples", c.resamples);
  c.epochs = get<int>("test.epochs", c.epochs);
  c.batch_size = get<Eigen::Index>("test.batch_size", c.batch_size);
  c.hidden = {get<Eigen::Index>("test.hidden", 64)};
  c.dropout = get<double>("test.dropout", c.dropout);
  c.optimizer.learning_rate = get<double>("test.lr", c.optimizer.learning_rate);
  c.optimizer.momentum = get<double>("test.momentum", c.optimizer.momentum);
  c.seed = test_seed;
  c.validate();
  return c;
}

// Format:
//   fairdummies-checkpoint 1
//   seed <n>
//   config <json>
//   standardizer <p> <means...> <scales...>
//   scaling <mean> <scale>
//   task <name> <classes>
//   predictor / discriminator / sampler blocks
void Checkpoint::save(std::ostream& out) const {
  out << "fairdummies-checkpoint 1\nseed " << seed << "\nconfig " << config.dump() << '\n';
  const Vector& mean = standardizer.mean();
  const Vector& scale = standardizer.scale();
  out << "standardizer " << mean.size();
  for (const Vector* v : {&mean, &scale})
    for (Eigen::Index i = 0; i < v->size(); ++i) {
      out << ' ';
      write_hex(out, (*v)(i));
    }
  out << "\nscaling ";
  write_hex(out, model.scaling.mean);
  out << ' ';
  write_hex(out, model.scaling.scale);
  out << "\ntask " << to_string(model.task) << ' ' << model.num_classes << "\npredictor\n";
  save_model(out, model.predictor);
  out << "discriminator\n";
  save_model(out, model.discriminator);
  out << "sampler\n";
  model.sampler.save(out);
}

Checkpoint Checkpoint::load(std::istream& in) {
  auto expect = [&](const std::string& want) {
    std::string got;
    if (!(in >> got) || got != want)
      throw DataError("malformed checkpoint: expected '" + want + "', got '" + got + "'");
  };
  expect("fairdummies-checkpoint");
  expect("1");
  Checkpoint c;
  expect("seed");
  if (!(in >> c.seed)) throw DataError("malformed checkpoint: seed");
  expect("config");
  std::string line;
  std::getline(in, line);
  c.config = ExperimentConfig::parse(line);
  expect("standardizer");
  Eigen::Index p = 0;
  if (!(in >> p) || p < 0) throw DataError("malformed checkpoint: standardizer size");
  Vector mean(p), scale(p);
  for (Eigen::Index i = 0; i < p; ++i) mean(i) = read_hex(in);
  for (Eigen::Index i = 0; i < p; ++i) scale(i) = read_hex(in);
  c.standardizer = Standardizer(mean, scale);
  expect("scaling");
  c.model.scaling.mean = read_hex(in);
  c.model.scaling.scale = read_hex(in);
  expect("task");
  std::string task;
  in >> task >> c.model.num_classes;
  c.model.task = parse_task(task);
  expect("predictor");
  c.model.predictor = load_model(in);
  expect("discriminator");
  c.model.discriminator = load_model(in);
  expect("sampler");
  c.model.sampler = DummySampler::load(in);
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  save(out);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  return load(in);
}

PreparedData prepare(const Dataset& data, const ExperimentConfig& config, std::uint64_t seed) {
  PreparedData p;
  p.parts = split(data, config.split_spec(seed));
  p.standardizer = Standardizer::fit(p.parts.train.X);
  for (Dataset* d : {&p.parts.train, &p.parts.holdout, &p.parts.test}) d->X = p.standardizer.apply(d->X);
  return p;
}

Checkpoint train_model(const PreparedData& data, const ExperimentConfig& config, std::uint64_t seed) {
  const Dataset& train = data.parts.train;
  Checkpoint c;
  c.config = config;
  c.seed = seed;
  c.standardizer = data.standardizer;
  const auto sampler = DummySampler::fit(train.A, train.Y, train.task, train.num_classes);
  c.model = fit_fair(train, sampler, config.players(train.task), config.train_config(train.task, seed));
  return c;
}

TestData test_data(const FairModel& model, const Dataset& rows) {
  TestData t;
  t.task = rows.task;
  t.yhat = model.predict(rows.X);
  t.A = rows.A;
  t.Y = rows.Y;
  return t;
}

ErrorSummary prediction_error(const FairModel& model, const Dataset& rows) {
  const Matrix pred = model.predict(rows.X);
  double total[2] = {0, 0}, count[2] = {0, 0};
  for (Eigen::Index i = 0; i < rows.size(); ++i) {
    double e;
    if (rows.task == Task::Regression) {
      e = (pred(i, 0) - rows.Y(i)) * (pred(i, 0) - rows.Y(i));
    } else {
      Eigen::Index best = 0;
      pred.row(i).maxCoeff(&best);
      e = static_cast<double>(best) != rows.Y(i);
    }
    const auto a = static_cast<std::size_t>(rows.A[static_cast<std::size_t>(i)]);
    total[a] += e;
    count[a] += 1;
  }
  auto finish = [&](double t, double n) {
    const double m = n > 0 ? t / n : 0.0;
    return rows.task == Task::Regression ? std::sqrt(m) : m;
  };
  ErrorSummary s;
  s.overall = finish(total[0] + total[1], count[0] + count[1]);
  s.group[0] = finish(total[0], count[0]);
  s.group[1] = finish(total[1], count[1]);
  return s;
}

std::uint64_t repetition_seed(std::uint64_t base_seed, int repetition) {
  return base_seed ^ static_cast<std::uint64_t>(repetition);
}

MetricsRecord run_repetition(const Dataset& data, const ExperimentConfig& config, int repetition,
                             std::uint64_t seed) {
  MetricsRecord r;
  r.repetition = repetition;
  r.seed = seed;
  r.task = data.task;
  const PreparedData prepared = prepare(data, config, seed);
  auto t0 = std::chrono::steady_clock::now();
  const Checkpoint ckpt = train_model(prepared, config, seed);
  r.train_seconds = seconds_since(t0);
  r.error = prediction_error(ckpt.model, prepared.parts.test);

  t0 = std::chrono::steady_clock::now();
  const TestReport report = run_test(test_data(ckpt.model, prepared.parts.holdout),
                                     test_data(ckpt.model, prepared.parts.test),
                                     posterior_of(ckpt.model.sampler), config.test_config(seed));
  r.p_value = report.p_value;
  r.test_seconds = seconds_since(t0);

  if (data.task == Task::Classification) {
    const Dataset& cal = prepared.parts.holdout;
    const Dataset& test = prepared.parts.test;
    const auto calibrator = calibrate(ckpt.model.predict(cal.X), cal.A, cal.Y, config.alpha());
    r.conformal = summarize_sets(predict_sets(calibrator, ckpt.model.predict(test.X), test.A), test.A, test.Y);
  }
  return r;
}

std::vector<MetricsRecord> run_benchmark(const Dataset& data, const ExperimentConfig& config, int jobs) {
  const int reps = config.repetitions();
  std::vector<MetricsRecord> rows(static_cast<std::size_t>(reps));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(reps));
  auto work = [&](int r) {
    try {
      rows[static_cast<std::size_t>(r)] = run_repetition(data, config, r, repetition_seed(config.seed(), r));
    } catch (...) {
      errors[static_cast<std::size_t>(r)] = std::current_exception();
    }
  };
  jobs = std::clamp(jobs, 1, reps);
  if (jobs == 1) {
    for (int r = 0; r < reps; ++r) work(r);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < jobs; ++w)
      pool.emplace_back([&, w] {
        for (int r = w; r < reps; r += jobs) work(r);
      });
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return rows;
}

namespace {

std::vector<std::string> metric_names(Task task) {
  const std::string err = task == Task::Regression ? "rmse" : "misclassification";
  std::vector<std::string> names{err, err + "_group0", err + "_group1", "p_value"};
  if (task == Task::Classification)
    for (const char* m : {"coverage", "set_size", "empty_fraction"})
      for (const char* g : {"_group0", "_group1"}) names.push_back(std::string(m) + g);
  return names;
}

std::vector<double> metric_values(const MetricsRecord& r) {
  std::vector<double> v{r.error.overall, r.error.group[0], r.error.group[1], r.p_value};
  if (r.task == Task::Classification) {
    for (int g = 0; g < 2; ++g) v.push_back(r.conformal[static_cast<std::size_t>(g)].coverage);
    for (int g = 0; g < 2; ++g) v.push_back(r.conformal[static_cast<std::size_t>(g)].mean_size);
    for (int g = 0; g < 2; ++g) v.push_back(r.conformal[static_cast<std::size_t>(g)].empty_fraction);
  }
  return v;
}

void write_number(std::ostream& out, double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  out << buf;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRecord>& rows) {
  const Task task = rows.empty() ? Task::Regression : rows.front().task;
  out << "repetition,seed";
  for (const auto& n : metric_names(task)) out << ',' << n;
  out << '\n';
  for (const auto& r : rows) {
    out << r.repetition << ',' << r.seed;
    for (double v : metric_values(r)) {
      out << ',';
      write_number(out, v);
    }
    out << '\n';
  }
}

void write_metrics_summary_csv(std::ostream& out, const std::vector<MetricsRecord>& rows) {
  out << "metric,min,q25,median,q75,max\n";
  if (rows.empty()) return;
  const auto names = metric_names(rows.front().task);
  for (std::size_t m = 0; m < names.size(); ++m) {
    std::vector<double> col;
    for (const auto& r : rows) col.push_back(metric_values(r)[m]);
    out << names[m];
    for (double q : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      out << ',';
      write_number(out, quantile(col, q));
    }
    out << '\n';
  }
}

}  // namespace fairdummies
