#pragma once

// End-to-end experiment pipeline behind the command-line tool: data loading,
// seeded splits, training, the fairness test, conformal sets and repeated
// benchmarks.

#include "fairdummies/conformal.hpp"
#include "fairdummies/data.hpp"
#include "fairdummies/fairtest.hpp"
#include "fairdummies/fairtrain.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace fairdummies {

/// Experiment settings read from a JSON object with flat dotted keys, for
/// example {"data.source": "synthetic", "train.lambda": 0.9}. Unknown keys
/// and wrongly typed values are ConfigErrors. Training keys left out take the
/// task's defaults (TrainConfig::regression_defaults / classification_defaults).
class ExperimentConfig {
 public:
  ExperimentConfig() = default;
  static ExperimentConfig parse(const std::string& json_text);
  static ExperimentConfig read(const std::filesystem::path& path);

  /// Every accepted key with a one-line description.
  static const std::vector<std::pair<std::string, std::string>>& keys();

  void set(const std::string& key, const nlohmann::json& value);
  bool has(const std::string& key) const { return values_.contains(key); }
  std::string dump() const { return values_.dump(); }

  std::uint64_t seed() const;
  std::string output_dir() const;
  int repetitions() const;
  int jobs() const;
  double alpha() const;
  std::string model_family() const;

  Dataset load_data() const;
  SplitSpec split_spec(std::uint64_t seed) const;
  PlayerSpecs players(Task task) const;
  TrainConfig train_config(Task task, std::uint64_t seed) const;
  TestConfig test_config(std::uint64_t seed) const;

 private:
  template <class T>
  T get(const std::string& key, T fallback) const;
  nlohmann::json values_ = nlohmann::json::object();
};

/// A trained model with everything needed to reproduce its splits and inputs.
struct Checkpoint {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  Standardizer standardizer;
  FairModel model;

  void save(std::ostream& out) const;
  static Checkpoint load(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

/// Standardized train/holdout/test parts for one seed.
struct PreparedData {
  SplitData parts;
  Standardizer standardizer;
};

PreparedData prepare(const Dataset& data, const ExperimentConfig& config, std::uint64_t seed);

/// Fits the sampler on the training part and trains the model.
Checkpoint train_model(const PreparedData& data, const ExperimentConfig& config, std::uint64_t seed);

/// Predictions of a fixed rule packaged for the test.
TestData test_data(const FairModel& model, const Dataset& rows);

/// Overall and per-group error: RMSE (regression) or misclassification rate.
struct ErrorSummary {
  double overall = 0.0;
  double group[2] = {0.0, 0.0};
};
ErrorSummary prediction_error(const FairModel& model, const Dataset& rows);

struct MetricsRecord {
  int repetition = 0;
  std::uint64_t seed = 0;
  Task task = Task::Regression;
  ErrorSummary error;
  double p_value = 1.0;
  std::array<GroupCoverage, 2> conformal{};  ///< classification only
  double train_seconds = 0.0;
  double test_seconds = 0.0;
};

/// Runs the whole pipeline once: split with `seed`, train, test on holdout/test,
/// and for classification calibrate conformal sets on the holdout part.
MetricsRecord run_repetition(const Dataset& data, const ExperimentConfig& config, int repetition,
                             std::uint64_t seed);

/// Seed of repetition r: base_seed XOR r.
std::uint64_t repetition_seed(std::uint64_t base_seed, int repetition);

/// Repetitions 0..R-1, possibly on several worker threads; rows ordered by repetition.
std::vector<MetricsRecord> run_benchmark(const Dataset& data, const ExperimentConfig& config, int jobs);

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRecord>& rows);
/// Per metric column: min, 25%, median, 75%, max over repetitions.
void write_metrics_summary_csv(std::ostream& out, const std::vector<MetricsRecord>& rows);

}  // namespace fairdummies
