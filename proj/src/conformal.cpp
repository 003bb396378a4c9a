#include "fairdummies/conformal.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace fairdummies {

double conformity_score(const Eigen::Ref<const Eigen::RowVectorXd>& probs, int y) {
  return 1.0 - probs(y);
}

ConformalCalibrator calibrate(const Matrix& probs, std::span<const int> A, const Vector& Y,
                              double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("miscoverage level must lie in (0, 1)");
  if (probs.rows() != Y.size() || static_cast<Eigen::Index>(A.size()) != Y.size())
    throw ShapeError("calibration probabilities, attribute and labels differ in length");
  std::array<std::vector<double>, 2> scores;
  for (Eigen::Index i = 0; i < Y.size(); ++i) {
    const int a = A[static_cast<std::size_t>(i)];
    if (a != 0 && a != 1) throw DataError("sensitive attribute must be binary");
    const double y = Y(i);
    if (y < 0 || y >= static_cast<double>(probs.cols()) || y != std::floor(y))
      throw DataError("class index out of range at calibration row " + std::to_string(i));
    scores[static_cast<std::size_t>(a)].push_back(conformity_score(probs.row(i), static_cast<int>(y)));
  }

  ConformalCalibrator cal;
  cal.alpha = alpha;
  for (std::size_t a = 0; a < 2; ++a) {
    auto& s = scores[a];
    if (s.empty())
      throw DataError("calibration data has no rows with attribute " + std::to_string(a));
    std::sort(s.begin(), s.end());
    const double n = static_cast<double>(s.size());
    // the small offset keeps products such as 10 * 0.9 from rounding up past an integer
    const auto k = static_cast<std::size_t>(std::ceil((n + 1.0) * (1.0 - alpha) - 1e-9));
    cal.count[a] = static_cast<Eigen::Index>(s.size());
    cal.threshold[a] = k > s.size() ? std::numeric_limits<double>::infinity()
                                    : s[std::max<std::size_t>(k, 1) - 1];
  }
  return cal;
}

std::vector<int> predict_set(const ConformalCalibrator& cal,
                             const Eigen::Ref<const Eigen::RowVectorXd>& probs, int a) {
  if (a != 0 && a != 1) throw DataError("sensitive attribute must be binary");
  const double q = cal.threshold[static_cast<std::size_t>(a)];
  std::vector<int> out;
  for (Eigen::Index y = 0; y < probs.size(); ++y)
    if (conformity_score(probs, static_cast<int>(y)) <= q) out.push_back(static_cast<int>(y));
  return out;
}

std::vector<std::vector<int>> predict_sets(const ConformalCalibrator& cal, const Matrix& probs,
                                           std::span<const int> A) {
  if (static_cast<Eigen::Index>(A.size()) != probs.rows())
    throw ShapeError("probabilities and attribute differ in length");
  std::vector<std::vector<int>> sets(A.size());
  for (std::size_t i = 0; i < A.size(); ++i)
    sets[i] = predict_set(cal, probs.row(static_cast<Eigen::Index>(i)), A[i]);
  return sets;
}

std::array<GroupCoverage, 2> summarize_sets(const std::vector<std::vector<int>>& sets,
                                            std::span<const int> A, const Vector& Y) {
  if (sets.size() != A.size() || static_cast<Eigen::Index>(A.size()) != Y.size())
    throw ShapeError("sets, attribute and labels differ in length");
  std::array<GroupCoverage, 2> out;
  for (int a = 0; a < 2; ++a) out[static_cast<std::size_t>(a)].group = a;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    auto& g = out[static_cast<std::size_t>(A[i])];
    const int y = static_cast<int>(Y(static_cast<Eigen::Index>(i)));
    g.rows += 1;
    g.coverage += std::binary_search(sets[i].begin(), sets[i].end(), y);
    g.mean_size += static_cast<double>(sets[i].size());
    g.empty_fraction += sets[i].empty();
  }
  for (auto& g : out)
    if (g.rows > 0) {
      const double n = static_cast<double>(g.rows);
      g.coverage /= n;
      g.mean_size /= n;
      g.empty_fraction /= n;
    }
  return out;
}

void write_sets_csv(std::ostream& out, const std::vector<std::vector<int>>& sets,
                    std::span<const int> A) {
  out << "row,group,labels\n";
  for (std::size_t i = 0; i < sets.size(); ++i) {
    out << i << ',' << A[i] << ',';
    for (std::size_t k = 0; k < sets[i].size(); ++k) out << (k ? " " : "") << sets[i][k] + 1;
    out << '\n';
  }
}

std::string summary_json(const ConformalCalibrator& cal, const std::array<GroupCoverage, 2>& summary) {
  nlohmann::ordered_json j;
  j["alpha"] = cal.alpha;
  j["groups"] = nlohmann::ordered_json::array();
  for (const auto& g : summary) {
    const auto a = static_cast<std::size_t>(g.group);
    nlohmann::ordered_json row;
    row["group"] = g.group;
    row["rows"] = g.rows;
    row["coverage"] = g.coverage;
    row["mean_size"] = g.mean_size;
    row["empty_fraction"] = g.empty_fraction;
    row["calibration_rows"] = cal.count[a];
    if (std::isinf(cal.threshold[a]))
      row["threshold"] = "inf";
    else
      row["threshold"] = cal.threshold[a];
    j["groups"].push_back(row);
  }
  return j.dump(2);
}

}  // namespace fairdummies
