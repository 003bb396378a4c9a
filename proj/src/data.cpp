#include "fairdummies/data.hpp"

#include "csv.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace fairdummies {

using json = nlohmann::json;

void Dataset::validate() const {
  const Eigen::Index n = Y.size();
  if (X.rows() != n || static_cast<Eigen::Index>(A.size()) != n)
    throw DataError("dataset row counts disagree (X " + std::to_string(X.rows()) + ", A " +
                    std::to_string(A.size()) + ", Y " + std::to_string(n) + ")");
  for (std::size_t i = 0; i < A.size(); ++i)
    if (A[i] != 0 && A[i] != 1)
      throw DataError("sensitive attribute must be binary (row " + std::to_string(i) + ")");
  if (task == Task::Classification) {
    if (num_classes < 2) throw DataError("classification needs at least two classes");
    for (Eigen::Index i = 0; i < n; ++i)
      if (Y(i) != std::floor(Y(i)) || Y(i) < 0 || Y(i) >= num_classes)
        throw DataError("class label out of range at row " + std::to_string(i));
  }
  if (!feature_names.empty() && static_cast<Eigen::Index>(feature_names.size()) != X.cols())
    throw DataError("feature name count does not match the feature matrix");
}

Dataset Dataset::subset(std::span<const Eigen::Index> rows) const {
  Dataset out;
  out.task = task;
  out.num_classes = num_classes;
  out.feature_names = feature_names;
  out.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
  out.Y.resize(static_cast<Eigen::Index>(rows.size()));
  out.A.resize(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Eigen::Index i = rows[r];
    const auto rr = static_cast<Eigen::Index>(r);
    out.X.row(rr) = X.row(i);
    out.Y(rr) = Y(i);
    out.A[r] = A[static_cast<std::size_t>(i)];
  }
  return out;
}

Vector Dataset::attribute_vector() const {
  Vector a(static_cast<Eigen::Index>(A.size()));
  for (std::size_t i = 0; i < A.size(); ++i) a(static_cast<Eigen::Index>(i)) = A[i];
  return a;
}

Matrix Dataset::one_hot_response() const {
  if (task != Task::Classification) throw ConfigError("one-hot response needs a classification task");
  Matrix t = Matrix::Zero(size(), num_classes);
  for (Eigen::Index i = 0; i < size(); ++i) t(i, label(i)) = 1.0;
  return t;
}

Matrix Dataset::response_column() const { return Y; }

void SyntheticConfig::validate() const {
  if (n < 1) throw ConfigError("synthetic sample size must be positive");
  if (group1_proportion && !(*group1_proportion > 0.0 && *group1_proportion < 1.0))
    throw ConfigError("group-1 proportion must lie in (0, 1)");
  if (!(noise_std >= 0.0)) throw ConfigError("noise std must be nonnegative");
}

namespace {

Dataset synthetic_regression(const SyntheticConfig& c) {
  Rng rng = make_rng(c.seed, 0x5e6e);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset d;
  d.task = Task::Regression;
  d.X.resize(c.n, 2);
  d.Y.resize(c.n);
  d.A.resize(static_cast<std::size_t>(c.n));
  d.feature_names = {"x1", "x2"};
  for (Eigen::Index i = 0; i < c.n; ++i) {
    const int a = uniform01(rng) < c.group1_proportion.value_or(0.9) ? 1 : 0;
    const double z1 = normal(rng);
    const double z2 = normal(rng);
    const double x1 = a == 1 ? 3.0 * z1 : z1;
    const double x2 = a == 1 ? z2 : 3.0 * z2;
    const auto& beta = a == 1 ? c.beta1 : c.beta0;
    d.A[static_cast<std::size_t>(i)] = a;
    d.X(i, 0) = x1;
    d.X(i, 1) = x2;
    d.Y(i) = beta[0] * x1 + beta[1] * x2 + c.noise_std * normal(rng);
  }
  return d;
}

// Class prevalence differs between groups: (0.4, 0.3, 0.2, 0.1) for A = 0 and
// the reverse for A = 1. Two score features are the 0-based label plus
// N(0, 1.5 noise_std) noise, so they satisfy equalized odds by themselves; a
// third feature is A + N(0, 0.3) and the fourth is pure noise. An
// unconstrained classifier uses the proxy to sharpen its class prior, which
// makes its output depend on A given Y.
Dataset synthetic_classification(const SyntheticConfig& c) {
  Rng rng = make_rng(c.seed, 0xc1a5);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr double kPrevalence[2][4] = {{0.4, 0.3, 0.2, 0.1}, {0.1, 0.2, 0.3, 0.4}};
  Dataset d;
  d.task = Task::Classification;
  d.num_classes = 4;
  d.X.resize(c.n, 4);
  d.Y.resize(c.n);
  d.A.resize(static_cast<std::size_t>(c.n));
  d.feature_names = {"score1", "score2", "proxy", "noise"};
  for (Eigen::Index i = 0; i < c.n; ++i) {
    const int a = uniform01(rng) < c.group1_proportion.value_or(0.5) ? 1 : 0;
    const double u = uniform01(rng);
    int label = 0;
    double cum = kPrevalence[a][0];
    while (label < 3 && u >= cum) cum += kPrevalence[a][++label];
    d.A[static_cast<std::size_t>(i)] = a;
    d.X(i, 0) = label + 1.5 * c.noise_std * normal(rng);
    d.X(i, 1) = label + 1.5 * c.noise_std * normal(rng);
    d.X(i, 2) = a + 0.3 * normal(rng);
    d.X(i, 3) = normal(rng);
    d.Y(i) = label;
  }
  return d;
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  return config.task == Task::Regression ? synthetic_regression(config)
                                         : synthetic_classification(config);
}

// ---------------------------------------------------------------------------
// schema

void Schema::validate() const {
  if (response.empty()) throw ConfigError("schema: response column is required");
  if (attribute.empty()) throw ConfigError("schema: attribute column is required");
  if (task == Task::Classification && classes.empty() && num_classes < 2)
    throw ConfigError("schema: classification needs `classes` or `num_classes` >= 2");
  if (task == Task::Classification && !classes.empty() && num_classes != 0 &&
      num_classes != static_cast<int>(classes.size()))
    throw ConfigError("schema: num_classes disagrees with the classes list");
  for (const auto& [col, levels] : categories) {
    if (std::find(features.begin(), features.end(), col) == features.end())
      throw ConfigError("schema: categorical column '" + col + "' is not a feature");
    if (levels.empty()) throw ConfigError("schema: categorical column '" + col + "' has no levels");
  }
  for (const auto& [value, code] : attribute_map)
    if (code != 0 && code != 1)
      throw ConfigError("schema: attribute_map value for '" + value + "' must be 0 or 1");
}

Schema parse_schema(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("schema: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("schema: top level must be an object");
  static const std::set<std::string> known = {"task",     "response",   "classes",
                                              "num_classes", "attribute", "attribute_map",
                                              "features", "categories", "include_attribute"};
  for (const auto& item : doc.items())
    if (!known.count(item.key())) throw ConfigError("schema: unknown key '" + item.key() + "'");
  Schema s;
  try {
    s.task = parse_task(doc.at("task").get<std::string>());
    s.response = doc.at("response").get<std::string>();
    s.attribute = doc.at("attribute").get<std::string>();
    s.features = doc.value("features", std::vector<std::string>{});
    s.classes = doc.value("classes", std::vector<std::string>{});
    s.num_classes = doc.value("num_classes", 0);
    s.include_attribute = doc.value("include_attribute", false);
    if (doc.contains("attribute_map"))
      s.attribute_map = doc["attribute_map"].get<std::map<std::string, int>>();
    if (doc.contains("categories"))
      s.categories = doc["categories"].get<std::map<std::string, std::vector<std::string>>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("schema: ") + e.what());
  }
  s.validate();
  return s;
}

Schema read_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_schema(buf.str());
}

void write_schema(const std::filesystem::path& path, const Schema& s) {
  json doc;
  doc["task"] = to_string(s.task);
  doc["response"] = s.response;
  doc["attribute"] = s.attribute;
  doc["features"] = s.features;
  if (!s.classes.empty()) doc["classes"] = s.classes;
  if (s.num_classes) doc["num_classes"] = s.num_classes;
  if (!s.attribute_map.empty()) doc["attribute_map"] = s.attribute_map;
  if (!s.categories.empty()) doc["categories"] = s.categories;
  if (s.include_attribute) doc["include_attribute"] = true;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write schema file " + path.string());
  out << doc.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string coord(std::size_t row, const std::string& column) {
  return " (line " + std::to_string(row) + ", column '" + column + "')";
}

double parse_number(const std::string& cell, std::size_t line, const std::string& column) {
  if (cell.empty()) throw DataError("missing value" + coord(line, column));
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end == cell.c_str() || *end != '\0' || !std::isfinite(v))
    throw DataError("unparseable number '" + cell + "'" + coord(line, column));
  return v;
}

}  // namespace

Dataset parse_csv(const std::string& text, const Schema& schema) {
  schema.validate();
  const auto rows = csv::parse(text);
  if (rows.empty()) throw DataError("empty input: no header row");
  const auto& header = rows.front();
  std::map<std::string, std::size_t> column;
  for (std::size_t c = 0; c < header.size(); ++c) column[header[c]] = c;
  auto find = [&](const std::string& name) {
    auto it = column.find(name);
    if (it == column.end()) throw DataError("missing column '" + name + "' in header");
    return it->second;
  };
  const std::size_t resp_col = find(schema.response);
  const std::size_t attr_col = find(schema.attribute);
  std::vector<std::size_t> feat_cols;
  for (const auto& f : schema.features) feat_cols.push_back(find(f));
  if (rows.size() < 2) throw DataError("empty input: header without data rows");

  // encoded feature layout
  std::vector<std::string> names;
  for (const auto& f : schema.features) {
    auto cat = schema.categories.find(f);
    if (cat == schema.categories.end()) {
      names.push_back(f);
    } else {
      for (const auto& level : cat->second) names.push_back(f + "=" + level);
    }
  }
  if (schema.include_attribute) names.push_back(schema.attribute);

  const auto n = static_cast<Eigen::Index>(rows.size() - 1);
  Dataset d;
  d.task = schema.task;
  d.num_classes = schema.task == Task::Classification
                      ? (schema.classes.empty() ? schema.num_classes
                                                : static_cast<int>(schema.classes.size()))
                      : 0;
  d.feature_names = names;
  d.X = Matrix::Zero(n, static_cast<Eigen::Index>(names.size()));
  d.Y.resize(n);
  d.A.resize(static_cast<std::size_t>(n));

  std::set<std::string> attribute_values;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i) + 1];
    const std::size_t line = static_cast<std::size_t>(i) + 2;
    if (row.size() != header.size())
      throw DataError("row has " + std::to_string(row.size()) + " cells, header has " +
                      std::to_string(header.size()) + " (line " + std::to_string(line) + ")");

    const std::string& a_cell = row[attr_col];
    attribute_values.insert(a_cell);
    if (attribute_values.size() > 2)
      throw DataError("sensitive attribute has more than two distinct values" +
                      coord(line, schema.attribute));
    int a;
    if (!schema.attribute_map.empty()) {
      auto it = schema.attribute_map.find(a_cell);
      if (it == schema.attribute_map.end())
        throw DataError("attribute value '" + a_cell + "' not in attribute_map" +
                        coord(line, schema.attribute));
      a = it->second;
    } else if (a_cell == "0" || a_cell == "1") {
      a = a_cell == "1";
    } else {
      throw DataError("attribute value '" + a_cell + "' is not 0/1" + coord(line, schema.attribute));
    }
    d.A[static_cast<std::size_t>(i)] = a;

    const std::string& y_cell = row[resp_col];
    if (schema.task == Task::Regression) {
      d.Y(i) = parse_number(y_cell, line, schema.response);
    } else if (!schema.classes.empty()) {
      auto it = std::find(schema.classes.begin(), schema.classes.end(), y_cell);
      if (it == schema.classes.end())
        throw DataError("unknown class '" + y_cell + "'" + coord(line, schema.response));
      d.Y(i) = static_cast<double>(it - schema.classes.begin());
    } else {
      const double v = parse_number(y_cell, line, schema.response);
      if (v != std::floor(v) || v < 1 || v > schema.num_classes)
        throw DataError("class label '" + y_cell + "' outside 1.." +
                        std::to_string(schema.num_classes) + coord(line, schema.response));
      d.Y(i) = v - 1;
    }

    Eigen::Index out_col = 0;
    for (std::size_t f = 0; f < schema.features.size(); ++f) {
      const std::string& name = schema.features[f];
      const std::string& cell = row[feat_cols[f]];
      auto cat = schema.categories.find(name);
      if (cat == schema.categories.end()) {
        d.X(i, out_col++) = parse_number(cell, line, name);
      } else {
        const auto& levels = cat->second;
        auto it = std::find(levels.begin(), levels.end(), cell);
        if (it == levels.end())
          throw DataError("category '" + cell + "' not declared" + coord(line, name));
        d.X(i, out_col + (it - levels.begin())) = 1.0;
        out_col += static_cast<Eigen::Index>(levels.size());
      }
    }
    if (schema.include_attribute) d.X(i, out_col) = a;
  }
  d.validate();
  return d;
}

Dataset load_csv(const std::filesystem::path& path, const Schema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open data file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), schema);
}

Schema schema_for(const Dataset& data) {
  Schema s;
  s.task = data.task;
  s.response = "Y";
  s.attribute = "A";
  s.num_classes = data.task == Task::Classification ? data.num_classes : 0;
  for (Eigen::Index j = 0; j < data.X.cols(); ++j)
    s.features.push_back(data.feature_names.empty() ? "x" + std::to_string(j + 1)
                                                    : data.feature_names[static_cast<std::size_t>(j)]);
  return s;
}

std::string format_csv(const Dataset& data) {
  data.validate();
  const Schema s = schema_for(data);
  std::vector<std::string> header = s.features;
  header.push_back("A");
  header.push_back("Y");
  std::ostringstream out;
  csv::write_row(out, header);
  char buf[32];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::vector<std::string> cells;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    cells.clear();
    for (Eigen::Index j = 0; j < data.X.cols(); ++j) cells.push_back(num(data.X(i, j)));
    cells.push_back(std::to_string(data.A[static_cast<std::size_t>(i)]));
    cells.push_back(data.task == Task::Classification ? std::to_string(data.label(i) + 1)
                                                      : num(data.Y(i)));
    csv::write_row(out, cells);
  }
  return out.str();
}

Schema write_csv(const std::filesystem::path& path, const Dataset& data) {
  const std::string text = format_csv(data);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write data file " + path.string());
  out << text;
  return schema_for(data);
}

// ---------------------------------------------------------------------------
// standardization

Standardizer::Standardizer(Vector mean, Vector scale) : mean_(std::move(mean)), scale_(std::move(scale)) {
  if (mean_.size() != scale_.size()) throw ShapeError("standardizer mean/scale size mismatch");
}

Standardizer Standardizer::fit(const Matrix& X) {
  if (X.rows() == 0) return Standardizer(Vector::Zero(X.cols()), Vector::Ones(X.cols()));
  Vector mean = X.colwise().mean().transpose();
  Vector scale(X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    if (X.col(j).maxCoeff() == X.col(j).minCoeff()) {
      mean(j) = X(0, j);  // exact, so the column maps to zeros
      scale(j) = 1.0;
      continue;
    }
    const double var = (X.col(j).array() - mean(j)).square().mean();
    const double sd = std::sqrt(var);
    scale(j) = sd > 1e-12 * std::max(1.0, std::abs(mean(j))) ? sd : 1.0;
  }
  return Standardizer(std::move(mean), std::move(scale));
}

Matrix Standardizer::apply(const Matrix& X) const {
  if (X.cols() != mean_.size())
    throw ShapeError("standardizer fitted on " + std::to_string(mean_.size()) +
                     " columns, got " + std::to_string(X.cols()));
  Matrix out = X;
  out.rowwise() -= mean_.transpose();
  out.array().rowwise() /= scale_.transpose().array();
  return out;
}

// ---------------------------------------------------------------------------
// splitting

void SplitSpec::validate() const {
  double total = 0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ConfigError("split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
}

SplitIndices split_indices(Eigen::Index n, const SplitSpec& spec) {
  spec.validate();
  if (n < 10) throw SplitError("cannot split " + std::to_string(n) + " rows (need at least 10)");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng rng = make_rng(spec.seed, 0x5917);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(spec.fractions[0] * static_cast<double>(n)));
  const auto n_hold = static_cast<std::size_t>(std::llround(spec.fractions[1] * static_cast<double>(n)));
  if (n_train == 0 || n_hold == 0 || n_train + n_hold >= order.size())
    throw SplitError("split fractions leave an empty part for n = " + std::to_string(n));
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.holdout.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                     order.begin() + static_cast<std::ptrdiff_t>(n_train + n_hold));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_hold), order.end());
  return out;
}

SplitData split(const Dataset& data, const SplitSpec& spec) {
  const auto idx = split_indices(data.size(), spec);
  return {data.subset(idx.train), data.subset(idx.holdout), data.subset(idx.test)};
}

}  // namespace fairdummies
