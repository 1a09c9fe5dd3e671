#pragma once

/**
 * @file numerics.hpp
 * @brief Flat parameter vectors, similarity metrics, summary statistics and
 * the central finite-difference gradient used to validate analytic gradients.
 */

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "treemaml/errors.hpp"

namespace treemaml {

/**
 * @brief Fixed-dimension real vector holding model parameters or gradients.
 *
 * The dimension is set at construction and every stored entry is finite.
 * Arithmetic producing a non-finite entry throws NumericalError.
 */
class ParamVector {
 public:
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw ConfigError("ParamVector requires a positive dimension");
    check_finite();
  }

  ParamVector(std::initializer_list<double> values) : ParamVector(std::vector<double>(values)) {}

  static ParamVector zeros(std::size_t dim) {
    if (dim == 0) throw ConfigError("ParamVector requires a positive dimension");
    return ParamVector(std::vector<double>(dim, 0.0));
  }

  std::size_t dim() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }
  const std::vector<double>& to_vector() const noexcept { return values_; }

  /// Copy with coordinate i shifted by delta.
  ParamVector perturbed(std::size_t i, double delta) const {
    auto out = values_;
    out.at(i) += delta;
    return ParamVector(std::move(out));
  }

  ParamVector& operator+=(const ParamVector& other) { return axpy(1.0, other); }
  ParamVector& operator-=(const ParamVector& other) { return axpy(-1.0, other); }

  ParamVector& operator*=(double s) {
    for (auto& v : values_) v *= s;
    check_finite();
    return *this;
  }

  /// this += a * x
  ParamVector& axpy(double a, const ParamVector& x) {
    require_same_dim(x);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += a * x.values_[i];
    check_finite();
    return *this;
  }

  friend ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
  friend ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
  friend ParamVector operator*(double s, ParamVector a) { return a *= s; }
  friend ParamVector operator*(ParamVector a, double s) { return a *= s; }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

  void require_same_dim(const ParamVector& other) const {
    if (other.dim() != dim()) {
      throw DimensionMismatchError("dimension mismatch: " + std::to_string(dim()) + " vs " +
                                   std::to_string(other.dim()));
    }
  }

 private:
  void check_finite() const {
    for (double v : values_) {
      if (!std::isfinite(v)) throw NumericalError("non-finite entry in ParamVector");
    }
  }

  std::vector<double> values_;
};

inline double dot(const ParamVector& a, const ParamVector& b) {
  a.require_same_dim(b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm(const ParamVector& a) { return std::sqrt(dot(a, a)); }

/// <a,b> / (|a| |b|), clamped to [-1, 1].
inline double cosine_similarity(const ParamVector& a, const ParamVector& b) {
  a.require_same_dim(b);
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw ZeroVectorError("cosine similarity of a zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

struct SimilarityStats {
  double mean_pairwise = 1.0;
  double std_pairwise = 0.0;
  std::size_t count_pairs = 0;
};

/**
 * @brief Mean and population standard deviation of the cosine similarity
 * over all unordered pairs of the set.
 *
 * Sets with fewer than two elements are treated as perfectly coherent:
 * mean 1, std 0, no pairs.
 */
inline SimilarityStats set_similarity(std::span<const ParamVector> vectors) {
  const std::size_t n = vectors.size();
  if (n < 2) return {};
  std::vector<double> sims;
  sims.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) sims.push_back(cosine_similarity(vectors[i], vectors[j]));
  }
  const double count = static_cast<double>(sims.size());
  const double mean = std::accumulate(sims.begin(), sims.end(), 0.0) / count;
  double var = 0.0;
  for (double s : sims) var += (s - mean) * (s - mean);
  var /= count;
  SimilarityStats out;
  out.mean_pairwise = mean;
  out.std_pairwise = sims.size() > 1 ? std::sqrt(var) : 0.0;
  out.count_pairs = sims.size();
  return out;
}

inline double mean(std::span<const double> samples) {
  if (samples.empty()) throw InsufficientSamplesError("mean of an empty sequence");
  return std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
}

/// Sample (n - 1) standard deviation.
inline double sample_stddev(std::span<const double> samples) {
  if (samples.size() < 2) throw InsufficientSamplesError("need at least 2 samples");
  const double m = mean(samples);
  double acc = 0.0;
  for (double s : samples) acc += (s - m) * (s - m);
  return std::sqrt(acc / static_cast<double>(samples.size() - 1));
}

/// Normal-approximation 95% confidence half-width: 1.96 * s / sqrt(n).
inline double confidence_halfwidth_95(std::span<const double> samples) {
  if (samples.size() < 2) {
    throw InsufficientSamplesError("confidence interval needs at least 2 samples, got " +
                                   std::to_string(samples.size()));
  }
  return 1.96 * sample_stddev(samples) / std::sqrt(static_cast<double>(samples.size()));
}

inline constexpr double kDefaultFiniteDifferenceStep = 1e-5;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
template <typename F>
  requires std::invocable<const F&, const ParamVector&>
ParamVector finite_difference_gradient(const F& f, const ParamVector& x,
                                       double h = kDefaultFiniteDifferenceStep) {
  if (!(h > 0.0)) throw ConfigError("finite difference step must be positive");
  auto eval = [&](const ParamVector& p) {
    const double v = static_cast<double>(f(p));
    if (!std::isfinite(v)) throw NumericalError("non-finite function value in finite differences");
    return v;
  };
  std::vector<double> grad(x.dim());
  for (std::size_t i = 0; i < x.dim(); ++i) {
    grad[i] = (eval(x.perturbed(i, h)) - eval(x.perturbed(i, -h))) / (2.0 * h);
  }
  return ParamVector(std::move(grad));
}

/// |a - b| / max(|b|, floor), the comparison used by the gradient checks.
inline double relative_error(const ParamVector& a, const ParamVector& b, double floor = 1e-12) {
  return norm(a - b) / std::max(norm(b), floor);
}

}  // namespace treemaml
