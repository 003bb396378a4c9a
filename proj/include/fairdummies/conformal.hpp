#pragma once

// Group-conditional split-conformal prediction sets for multi-class
// classifiers. Each attribute value gets its own score threshold, so the
// coverage guarantee holds separately within each group.

#include "fairdummies/common.hpp"

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace fairdummies {

/// 1 - probs[y]. `y` is a 0-based class index.
double conformity_score(const Eigen::Ref<const Eigen::RowVectorXd>& probs, int y);

struct ConformalCalibrator {
  double alpha = 0.1;
  std::array<double, 2> threshold{0.0, 0.0};  ///< Q_a, possibly +infinity
  std::array<Eigen::Index, 2> count{0, 0};    ///< calibration rows per group
};

/// Q_a is the ceil((n_a + 1)(1 - alpha))-th smallest score in group a, or
/// +infinity when that index exceeds n_a. Throws DataError if a group is absent.
ConformalCalibrator calibrate(const Matrix& probs, std::span<const int> A, const Vector& Y,
                              double alpha);

/// Labels y (0-based, ascending) with 1 - probs[y] <= Q_a. May be empty.
std::vector<int> predict_set(const ConformalCalibrator& cal,
                             const Eigen::Ref<const Eigen::RowVectorXd>& probs, int a);

std::vector<std::vector<int>> predict_sets(const ConformalCalibrator& cal, const Matrix& probs,
                                           std::span<const int> A);

struct GroupCoverage {
  int group = 0;
  Eigen::Index rows = 0;
  double coverage = 0.0;
  double mean_size = 0.0;
  double empty_fraction = 0.0;
};

std::array<GroupCoverage, 2> summarize_sets(const std::vector<std::vector<int>>& sets,
                                            std::span<const int> A, const Vector& Y);

/// One line per row: `row,group,labels` with labels 1-based and space separated.
void write_sets_csv(std::ostream& out, const std::vector<std::vector<int>>& sets,
                    std::span<const int> A);

std::string summary_json(const ConformalCalibrator& cal, const std::array<GroupCoverage, 2>& summary);

}  // namespace fairdummies
