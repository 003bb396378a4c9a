#include <doctest.h>

#include "fairdummies/data.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

using namespace fairdummies;

namespace {

Schema nursery_like_schema() {
  return parse_schema(R"({
    "task": "classification",
    "response": "rank",
    "classes": ["not_recom", "very_recom", "priority"],
    "attribute": "finance",
    "attribute_map": {"inconv": 0, "convenient": 1},
    "features": ["age", "parents"],
    "categories": {"parents": ["usual", "pretentious"]}
  })");
}

double sample_var(const Vector& v) {
  const double m = v.mean();
  return (v.array() - m).square().sum() / static_cast<double>(v.size() - 1);
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("hand-written csv parses into the expected matrices") {
  const std::string text =
      "age,parents,finance,rank,unused\n"
      "3.5,usual,convenient,priority,x\n"
      "1,pretentious,inconv,not_recom,y\n"
      "\"2.25\",usual,inconv,very_recom,z\n";
  Dataset d = parse_csv(text, nursery_like_schema());
  REQUIRE(d.size() == 3);
  Matrix X(3, 3);
  X << 3.5, 1, 0,  //
      1, 0, 1,     //
      2.25, 1, 0;
  CHECK(d.X == X);
  CHECK(d.A == std::vector<int>{1, 0, 0});
  CHECK(d.Y(0) == 2);
  CHECK(d.Y(1) == 0);
  CHECK(d.Y(2) == 1);
  CHECK(d.num_classes == 3);
  CHECK(d.feature_names == std::vector<std::string>{"age", "parents=usual", "parents=pretentious"});
}

TEST_CASE("attribute can be appended as a covariate") {
  Schema s = nursery_like_schema();
  s.include_attribute = true;
  Dataset d = parse_csv("age,parents,finance,rank\n1,usual,convenient,priority\n", s);
  CHECK(d.X.cols() == 4);
  CHECK(d.X(0, 3) == 1.0);
}

TEST_CASE("ingestion errors carry coordinates") {
  const Schema s = nursery_like_schema();
  CHECK_THROWS_AS(parse_csv("", s), DataError);
  CHECK_THROWS_AS(parse_csv("age,parents,finance,rank\n", s), DataError);
  CHECK_THROWS_WITH_AS(parse_csv("age,parents,rank\n1,usual,priority\n", s),
                       doctest::Contains("missing column 'finance'"), DataError);
  CHECK_THROWS_WITH_AS(parse_csv("age,parents,finance,rank\nabc,usual,inconv,priority\n", s),
                       doctest::Contains("line 2, column 'age'"), DataError);
  CHECK_THROWS_WITH_AS(parse_csv("age,parents,finance,rank\n,usual,inconv,priority\n", s),
                       doctest::Contains("missing value"), DataError);
  CHECK_THROWS_AS(parse_csv("age,parents,finance,rank\n1,great,inconv,priority\n", s), DataError);
  CHECK_THROWS_AS(parse_csv("age,parents,finance,rank\n1,usual,inconv\n", s), DataError);
}

TEST_CASE("attribute with three distinct values is rejected") {
  Schema s;
  s.task = Task::Regression;
  s.response = "y";
  s.attribute = "a";
  s.features = {"x"};
  CHECK_THROWS_AS(parse_csv("x,a,y\n1,0,1\n2,1,2\n3,2,3\n", s), DataError);
  s.attribute_map = {{"r", 0}, {"g", 1}, {"b", 1}};
  CHECK_THROWS_WITH_AS(parse_csv("x,a,y\n1,r,1\n2,g,2\n3,b,3\n", s),
                       doctest::Contains("more than two"), DataError);
}

TEST_CASE("schema rejects unknown keys") {
  CHECK_THROWS_AS(parse_schema(R"({"task":"regression","response":"y","attribute":"a","lamda":1})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_schema(R"({"task":"classification","response":"y","attribute":"a"})"),
                  ConfigError);
}

TEST_CASE("write_csv then load_csv is the identity") {
  const auto dir = std::filesystem::temp_directory_path() / "fairdummies_data_test";
  std::filesystem::create_directories(dir);
  for (Task task : {Task::Regression, Task::Classification}) {
    SyntheticConfig cfg;
    cfg.task = task;
    cfg.n = 57;
    cfg.seed = 9;
    Dataset d = generate_synthetic(cfg);
    const auto csv_path = dir / "d.csv";
    const auto schema_path = dir / "d.json";
    write_schema(schema_path, write_csv(csv_path, d));
    Dataset back = load_csv(csv_path, read_schema(schema_path));
    CHECK(back.X == d.X);
    CHECK(back.Y == d.Y);
    CHECK(back.A == d.A);
    CHECK(back.task == d.task);
    CHECK(back.num_classes == d.num_classes);
    CHECK(back.feature_names == d.feature_names);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic regression matches the generating law") {
  SyntheticConfig cfg;
  cfg.n = 10000;
  cfg.seed = 21;
  Dataset d = generate_synthetic(cfg);
  std::vector<Eigen::Index> g0, g1;
  for (Eigen::Index i = 0; i < d.size(); ++i) (d.A[static_cast<std::size_t>(i)] ? g1 : g0).push_back(i);
  const double p1 = static_cast<double>(g1.size()) / static_cast<double>(d.size());
  CHECK(std::abs(p1 - 0.9) <= 0.01);

  Dataset d0 = d.subset(g0), d1 = d.subset(g1);
  CHECK(std::abs(sample_var(d0.X.col(0)) - 1.0) <= 0.5);
  CHECK(std::abs(sample_var(d0.X.col(1)) - 9.0) <= 0.5);
  CHECK(std::abs(sample_var(d1.X.col(0)) - 9.0) <= 0.5);
  CHECK(std::abs(sample_var(d1.X.col(1)) - 1.0) <= 0.5);

  // oracle predictor X'beta_A leaves only the unit noise
  double sse = 0;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const bool a = d.A[static_cast<std::size_t>(i)];
    const double pred = a ? 3.0 * d.X(i, 0) : 3.0 * d.X(i, 1);
    sse += (d.Y(i) - pred) * (d.Y(i) - pred);
  }
  CHECK(std::abs(std::sqrt(sse / static_cast<double>(d.size())) - 1.0) <= 0.05);

  // per-group least squares recovers beta_A
  for (auto* part : {&d0, &d1}) {
    Vector beta = part->X.colPivHouseholderQr().solve(part->Y);
    const bool group1 = part == &d1;
    CHECK(std::abs(beta(0) - (group1 ? 3.0 : 0.0)) <= 0.05);
    CHECK(std::abs(beta(1) - (group1 ? 0.0 : 3.0)) <= 0.05);
  }
}

TEST_CASE("synthetic generation is seeded") {
  SyntheticConfig cfg;
  cfg.n = 100;
  cfg.seed = 3;
  Dataset a = generate_synthetic(cfg), b = generate_synthetic(cfg);
  CHECK(a.X == b.X);
  CHECK(a.Y == b.Y);
  cfg.n = 0;
  CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
}

TEST_CASE("classification fixture follows its documented law") {
  SyntheticConfig cfg;
  cfg.task = Task::Classification;
  cfg.n = 40000;
  Dataset d = generate_synthetic(cfg);
  d.validate();
  const double prevalence[2][4] = {{0.4, 0.3, 0.2, 0.1}, {0.1, 0.2, 0.3, 0.4}};
  double groups[2] = {0, 0}, counts[2][4] = {}, score_sum[4] = {}, label_rows[4] = {}, proxy[2] = {0, 0};
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const auto a = static_cast<std::size_t>(d.A[static_cast<std::size_t>(i)]);
    const auto y = static_cast<std::size_t>(d.label(i));
    groups[a] += 1;
    counts[a][y] += 1;
    score_sum[y] += d.X(i, 0) + d.X(i, 1);
    label_rows[y] += 2;
    proxy[a] += d.X(i, 2);
  }
  // balanced groups by default, within 4 binomial standard errors
  CHECK(std::abs(groups[1] / d.size() - 0.5) <= 4 * std::sqrt(0.25 / d.size()));
  for (int a = 0; a < 2; ++a) {
    for (int y = 0; y < 4; ++y) {
      const double p = prevalence[a][y];
      CHECK(std::abs(counts[a][y] / groups[a] - p) <= 4 * std::sqrt(p * (1 - p) / groups[a]));
    }
    CHECK(std::abs(proxy[a] / groups[a] - a) <= 4 * 0.3 / std::sqrt(groups[a]));
  }
  for (int y = 0; y < 4; ++y)
    CHECK(std::abs(score_sum[y] / label_rows[y] - y) <= 4 * 1.5 / std::sqrt(label_rows[y]));
}

TEST_CASE("standardize centers and scales training columns") {
  Rng rng(5);
  std::normal_distribution<double> normal(2.0, 3.0);
  Matrix X(200, 3);
  for (Eigen::Index k = 0; k < X.size(); ++k) X.data()[k] = normal(rng);
  X.col(2).setConstant(4.2);
  const Standardizer st = Standardizer::fit(X);
  const Standardizer copy = st;
  Matrix Z = st.apply(X);
  for (int j = 0; j < 2; ++j) {
    CHECK(std::abs(Z.col(j).mean()) <= 1e-10);
    CHECK(std::abs(std::sqrt(Z.col(j).array().square().mean()) - 1.0) <= 1e-10);
  }
  CHECK(Z.col(2).cwiseAbs().maxCoeff() == 0.0);

  // held-out rows reuse the training statistics (recomputed here by hand)
  Matrix Xnew(4, 3);
  for (Eigen::Index k = 0; k < Xnew.size(); ++k) Xnew.data()[k] = normal(rng);
  Matrix Znew = st.apply(Xnew);
  for (int j = 0; j < 2; ++j) {
    double mean = 0, sq = 0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) mean += X(i, j);
    mean /= 200.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) sq += (X(i, j) - mean) * (X(i, j) - mean);
    const double sd = std::sqrt(sq / 200.0);
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(Znew(i, j) == doctest::Approx((Xnew(i, j) - mean) / sd));
  }
  CHECK(st.mean() == copy.mean());
  CHECK(st.scale() == copy.scale());
  CHECK_THROWS_AS(st.apply(Matrix::Zero(2, 2)), ShapeError);
}

TEST_CASE("split sizes, determinism and partition") {
  auto s10 = split_indices(10, {});
  CHECK(s10.train.size() == 6);
  CHECK(s10.holdout.size() == 2);
  CHECK(s10.test.size() == 2);

  SplitSpec spec;
  spec.seed = 44;
  auto a = split_indices(123, spec), b = split_indices(123, spec);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);

  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto n = static_cast<Eigen::Index>(10 + rng() % 500);
    spec.seed = rng();
    auto parts = split_indices(n, spec);
    std::set<Eigen::Index> seen;
    std::size_t total = 0;
    for (auto* part : {&parts.train, &parts.holdout, &parts.test}) {
      total += part->size();
      seen.insert(part->begin(), part->end());
    }
    CHECK(total == static_cast<std::size_t>(n));
    CHECK(seen.size() == static_cast<std::size_t>(n));  // disjoint
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == n - 1);
  }
  CHECK_THROWS_AS(split_indices(9, {}), SplitError);
  SplitSpec bad;
  bad.fractions = {0.5, 0.5, 0.5};
  CHECK_THROWS_AS(split_indices(100, bad), ConfigError);
}

}  // TEST_SUITE
