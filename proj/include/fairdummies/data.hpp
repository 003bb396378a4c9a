#pragma once

#include "fairdummies/common.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fairdummies {

/// Features, binary sensitive attribute and response for one task.
/// Classification responses are stored as 0-based class indices; files use 1..L.
struct Dataset {
  Matrix X;
  std::vector<int> A;
  Vector Y;
  Task task = Task::Regression;
  int num_classes = 0;  ///< L for classification, 0 for regression
  std::vector<std::string> feature_names;

  Eigen::Index size() const { return Y.size(); }
  void validate() const;

  Dataset subset(std::span<const Eigen::Index> rows) const;
  Vector attribute_vector() const;
  /// n x L indicator matrix of the classes (classification only).
  Matrix one_hot_response() const;
  /// Response as an n x 1 matrix.
  Matrix response_column() const;
  /// Class index of row i (classification only).
  int label(Eigen::Index i) const { return static_cast<int>(Y(i)); }
};

struct SyntheticConfig {
  Task task = Task::Regression;
  Eigen::Index n = 2000;
  /// P(A = 1); unset means 0.9 for regression and 0.5 for classification.
  std::optional<double> group1_proportion;
  std::array<double, 2> beta0{0.0, 3.0};
  std::array<double, 2> beta1{3.0, 0.0};
  double noise_std = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Regression: (X1,X2)|A=0 ~ (Z1, 3 Z2), (X1,X2)|A=1 ~ (3 Z1, Z2), Y = X'beta_A + eps.
/// Classification: four classes whose prevalence depends on A; two features are
/// the label plus noise and one is a noisy proxy of A (see data.cpp for the exact law).
Dataset generate_synthetic(const SyntheticConfig& config);

/// Column roles for CSV ingestion.
///
/// JSON keys (unknown keys are rejected):
///   task                 "regression" | "classification"
///   response             response column name
///   classes              classification: ordered label strings mapped to classes 1..L
///   num_classes          classification without `classes`: labels are integers 1..L
///   attribute            sensitive attribute column name
///   attribute_map        optional {"value": 0|1}; default accepts the strings 0 and 1
///   features             feature column names, in order
///   categories           {"column": ["level", ...]} one-hot encodes that feature column
///   include_attribute    append A as the last feature (default false)
struct Schema {
  Task task = Task::Regression;
  std::string response;
  std::vector<std::string> classes;
  int num_classes = 0;
  std::string attribute;
  std::map<std::string, int> attribute_map;
  std::vector<std::string> features;
  std::map<std::string, std::vector<std::string>> categories;
  bool include_attribute = false;

  void validate() const;
};

Schema read_schema(const std::filesystem::path& path);
Schema parse_schema(const std::string& json_text);
void write_schema(const std::filesystem::path& path, const Schema& schema);

/// Parses a comma-separated file with a header row. Errors carry row/column coordinates.
Dataset load_csv(const std::filesystem::path& path, const Schema& schema);
Dataset parse_csv(const std::string& text, const Schema& schema);

/// Writes numeric features, an `A` column and a `Y` column (classes as 1..L), plus the
/// matching schema. Reading both back reproduces the dataset exactly.
Schema write_csv(const std::filesystem::path& path, const Dataset& data);
std::string format_csv(const Dataset& data);
Schema schema_for(const Dataset& data);

/// Per-column (x - mean) / std with statistics from the fitting rows only.
/// Zero-variance columns are centered and divided by 1.
class Standardizer {
 public:
  Standardizer() = default;
  static Standardizer fit(const Matrix& X);
  Standardizer(Vector mean, Vector scale);

  Matrix apply(const Matrix& X) const;
  const Vector& mean() const { return mean_; }
  const Vector& scale() const { return scale_; }

 private:
  Vector mean_;
  Vector scale_;
};

struct SplitSpec {
  std::array<double, 3> fractions{0.6, 0.2, 0.2};  ///< train, holdout, test
  std::uint64_t seed = 0;

  void validate() const;
};

struct SplitIndices {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> holdout;
  std::vector<Eigen::Index> test;
};

/// Seeded random partition; part sizes are rounded from the fractions and the
/// test part takes the remainder. Requires n >= 10.
SplitIndices split_indices(Eigen::Index n, const SplitSpec& spec);

struct SplitData {
  Dataset train;
  Dataset holdout;
  Dataset test;
};

SplitData split(const Dataset& data, const SplitSpec& spec);

}  // namespace fairdummies
