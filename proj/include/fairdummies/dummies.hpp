#pragma once

// Fair-dummy sampling: estimate P(A = 1 | Y = y) by Bayes' rule from the
// training pairs and draw synthetic attributes from it. The draws look at Y
// only, so any prediction is conditionally independent of them given Y.

#include "fairdummies/common.hpp"

#include <iosfwd>
#include <span>
#include <vector>

namespace fairdummies {

struct SamplerConfig {
  double smoothing = 0.5;                ///< additive count smoothing for discrete Y
  double density_floor = 1e-12;          ///< floor on both class-conditional densities
  double bandwidth_floor_ratio = 1e-3;   ///< bandwidth >= ratio * std(Y)
};

/// Triangular-kernel density estimate K(u) = max(0, 1 - |u|) with support
/// radius `bandwidth`.
class TriangularKde {
 public:
  TriangularKde() = default;
  TriangularKde(std::vector<double> points, double bandwidth);

  double density(double y) const;
  double bandwidth() const { return bandwidth_; }
  const std::vector<double>& points() const { return points_; }

 private:
  std::vector<double> points_;  // sorted
  double bandwidth_ = 1.0;
};

/// Silverman's rule of thumb 0.9 * min(sd, IQR / 1.34) * n^(-1/5), expressed as
/// the support radius of a triangular kernel with that standard deviation
/// (radius = sqrt(6) * sd_kernel). Returns 0 for a constant sample.
double silverman_triangular_radius(std::span<const double> sample);

class DummySampler {
 public:
  /// Fits P(A=1|Y) from training pairs. Regression uses one triangular KDE per
  /// attribute value; classification uses smoothed per-class frequencies.
  /// Throws DegenerateAttributeError when A takes a single value.
  static DummySampler fit(std::span<const int> A, const Vector& Y, Task task, int num_classes = 0,
                          const SamplerConfig& config = {});

  /// Sampler with a known per-class posterior (classes 0..L-1).
  static DummySampler from_class_posteriors(std::vector<double> posterior, double prior);

  Task task() const { return task_; }
  double prior() const { return prior_; }

  /// P(A = 1 | Y = y). For classification `y` is a 0-based class index.
  double posterior(double y) const;
  std::vector<double> posteriors(const Vector& Y) const;

  const TriangularKde& density(int a) const { return a ? kde1_ : kde0_; }
  const std::vector<double>& class_posteriors() const { return class_posterior_; }

  void save(std::ostream& out) const;
  static DummySampler load(std::istream& in);

 private:
  Task task_ = Task::Regression;
  double prior_ = 0.5;
  double density_floor_ = 1e-12;
  TriangularKde kde0_;
  TriangularKde kde1_;
  std::vector<double> class_posterior_;
};

/// One independent Bernoulli(posterior_i) draw per row.
std::vector<int> sample_dummies(std::span<const double> posterior, Rng& rng);

/// Draws fair dummies for responses Y. Uses only Y and the generator.
std::vector<int> sample_dummies(const DummySampler& sampler, const Vector& Y, Rng& rng);

}  // namespace fairdummies
