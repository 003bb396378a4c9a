#include "fairdummies/dummies.hpp"

#include "fairdummies/diffmodels.hpp"  // hex-float helpers

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>

namespace fairdummies {

TriangularKde::TriangularKde(std::vector<double> points, double bandwidth)
    : points_(std::move(points)), bandwidth_(bandwidth) {
  if (points_.empty()) throw DataError("density estimate needs at least one point");
  if (!(bandwidth_ > 0.0) || !std::isfinite(bandwidth_))
    throw ConfigError("kernel bandwidth must be positive and finite");
  std::sort(points_.begin(), points_.end());
}

double TriangularKde::density(double y) const {
  const auto lo = std::upper_bound(points_.begin(), points_.end(), y - bandwidth_);
  const auto hi = std::lower_bound(lo, points_.end(), y + bandwidth_);
  double sum = 0.0;
  for (auto it = lo; it != hi; ++it) sum += 1.0 - std::abs(y - *it) / bandwidth_;
  return sum / (static_cast<double>(points_.size()) * bandwidth_);
}

namespace {

double quantile_sorted(const std::vector<double>& s, double q) {
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

double silverman_triangular_radius(std::span<const double> sample) {
  if (sample.size() < 2) return 0.0;
  std::vector<double> sorted(sample.begin(), sample.end());
  std::sort(sorted.begin(), sorted.end());
  const double sd = stddev(sample);
  const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  double spread = sd;
  if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
  const double h = 0.9 * spread * std::pow(static_cast<double>(sample.size()), -0.2);
  return std::sqrt(6.0) * h;
}

DummySampler DummySampler::fit(std::span<const int> A, const Vector& Y, Task task, int num_classes,
                               const SamplerConfig& config) {
  if (static_cast<Eigen::Index>(A.size()) != Y.size())
    throw ShapeError("attribute and response lengths differ");
  if (A.size() < 2) throw DataError("sampler needs at least two training pairs");
  std::size_t ones = 0;
  for (int a : A) {
    if (a != 0 && a != 1) throw DataError("sensitive attribute must be binary");
    ones += static_cast<std::size_t>(a);
  }
  if (ones == 0 || ones == A.size())
    throw DegenerateAttributeError("sensitive attribute takes a single value in the training data");

  DummySampler s;
  s.task_ = task;
  s.prior_ = static_cast<double>(ones) / static_cast<double>(A.size());
  s.density_floor_ = config.density_floor;

  if (task == Task::Classification) {
    if (num_classes < 2) throw ConfigError("classification sampler needs num_classes >= 2");
    std::vector<double> count(static_cast<std::size_t>(num_classes), 0.0);
    std::vector<double> count1(static_cast<std::size_t>(num_classes), 0.0);
    for (std::size_t i = 0; i < A.size(); ++i) {
      const double y = Y(static_cast<Eigen::Index>(i));
      if (y != std::floor(y) || y < 0 || y >= num_classes)
        throw DataError("class label out of range at row " + std::to_string(i));
      const auto c = static_cast<std::size_t>(y);
      count[c] += 1.0;
      count1[c] += A[i];
    }
    const double alpha = config.smoothing;
    s.class_posterior_.resize(count.size());
    for (std::size_t c = 0; c < count.size(); ++c) {
      const double denom = count[c] + 2.0 * alpha;
      s.class_posterior_[c] = denom > 0.0 ? (count1[c] + alpha) / denom : s.prior_;
    }
    return s;
  }

  std::vector<double> y0, y1, all(static_cast<std::size_t>(Y.size()));
  for (std::size_t i = 0; i < A.size(); ++i) {
    const double y = Y(static_cast<Eigen::Index>(i));
    if (!std::isfinite(y)) throw DataError("non-finite response at row " + std::to_string(i));
    (A[i] ? y1 : y0).push_back(y);
    all[i] = y;
  }
  const double floor = config.bandwidth_floor_ratio * stddev(all);
  auto radius = [&](const std::vector<double>& ys) {
    double h = std::max(silverman_triangular_radius(ys), floor);
    if (!(h > 0.0)) h = 1.0;  // every response identical
    return h;
  };
  s.kde0_ = TriangularKde(y0, radius(y0));
  s.kde1_ = TriangularKde(y1, radius(y1));
  return s;
}

DummySampler DummySampler::from_class_posteriors(std::vector<double> posterior, double prior) {
  for (double p : posterior)
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("class posteriors must lie in [0, 1]");
  if (!(prior >= 0.0 && prior <= 1.0)) throw ConfigError("prior must lie in [0, 1]");
  DummySampler s;
  s.task_ = Task::Classification;
  s.prior_ = prior;
  s.class_posterior_ = std::move(posterior);
  return s;
}

double DummySampler::posterior(double y) const {
  if (task_ == Task::Classification) {
    const auto c = static_cast<std::ptrdiff_t>(y);
    if (c < 0 || c >= static_cast<std::ptrdiff_t>(class_posterior_.size()) || y != std::floor(y))
      throw DataError("class index " + std::to_string(y) + " unknown to the sampler");
    return class_posterior_[static_cast<std::size_t>(c)];
  }
  const double f1 = std::max(kde1_.density(y), density_floor_) * prior_;
  const double f0 = std::max(kde0_.density(y), density_floor_) * (1.0 - prior_);
  return f1 / (f1 + f0);
}

std::vector<double> DummySampler::posteriors(const Vector& Y) const {
  std::vector<double> out(static_cast<std::size_t>(Y.size()));
  for (Eigen::Index i = 0; i < Y.size(); ++i) out[static_cast<std::size_t>(i)] = posterior(Y(i));
  return out;
}

std::vector<int> sample_dummies(std::span<const double> posterior, Rng& rng) {
  std::vector<int> out(posterior.size());
  for (std::size_t i = 0; i < posterior.size(); ++i) out[i] = uniform01(rng) < posterior[i] ? 1 : 0;
  return out;
}

std::vector<int> sample_dummies(const DummySampler& sampler, const Vector& Y, Rng& rng) {
  const auto post = sampler.posteriors(Y);
  return sample_dummies(post, rng);
}

// Format:
//   sampler 1 <task> prior <hex> floor <hex>
//   classification: classes <L> <hex>...
//   regression:     kde <n> <bandwidth> <points...>   (A = 0, then A = 1)
void DummySampler::save(std::ostream& out) const {
  out << "sampler 1 " << to_string(task_) << " prior ";
  write_hex(out, prior_);
  out << " floor ";
  write_hex(out, density_floor_);
  out << '\n';
  if (task_ == Task::Classification) {
    out << "classes " << class_posterior_.size();
    for (double p : class_posterior_) {
      out << ' ';
      write_hex(out, p);
    }
    out << '\n';
    return;
  }
  for (const TriangularKde* kde : {&kde0_, &kde1_}) {
    out << "kde " << kde->points().size() << ' ';
    write_hex(out, kde->bandwidth());
    for (double p : kde->points()) {
      out << ' ';
      write_hex(out, p);
    }
    out << '\n';
  }
}

DummySampler DummySampler::load(std::istream& in) {
  auto expect = [&](const std::string& want) {
    std::string got;
    if (!(in >> got) || got != want)
      throw DataError("malformed sampler: expected '" + want + "', got '" + got + "'");
  };
  expect("sampler");
  expect("1");
  std::string task;
  in >> task;
  DummySampler s;
  s.task_ = parse_task(task);
  expect("prior");
  s.prior_ = read_hex(in);
  expect("floor");
  s.density_floor_ = read_hex(in);
  if (s.task_ == Task::Classification) {
    expect("classes");
    std::size_t L = 0;
    if (!(in >> L)) throw DataError("malformed sampler: class count");
    s.class_posterior_.resize(L);
    for (auto& p : s.class_posterior_) p = read_hex(in);
    return s;
  }
  for (TriangularKde* kde : {&s.kde0_, &s.kde1_}) {
    expect("kde");
    std::size_t n = 0;
    if (!(in >> n) || n == 0) throw DataError("malformed sampler: kde size");
    const double bw = read_hex(in);
    std::vector<double> pts(n);
    for (auto& p : pts) p = read_hex(in);
    *kde = TriangularKde(std::move(pts), bw);
  }
  return s;
}

}  // namespace fairdummies
