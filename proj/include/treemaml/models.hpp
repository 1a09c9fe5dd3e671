#pragma once

/**
 * @file models.hpp
 * @brief Differentiable model contract and the linear-regression model.
 *
 * A model exposes loss(params, batch) and gradient(params, batch). Models
 * that can also compute Hessian-vector products satisfy
 * SecondOrderModel and enable exact second-order meta-gradients.
 */

#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "treemaml/errors.hpp"
#include "treemaml/numerics.hpp"
#include "treemaml/tasks.hpp"

namespace treemaml {

using Batch = std::span<const Sample>;

template <typename M>
concept DifferentiableModel = requires(const M& model, const ParamVector& params, Batch batch) {
  { model.dim() } -> std::convertible_to<std::size_t>;
  { model.loss(params, batch) } -> std::convertible_to<double>;
  { model.gradient(params, batch) } -> std::same_as<ParamVector>;
};

template <typename M>
concept SecondOrderModel =
    DifferentiableModel<M> &&
    requires(const M& model, const ParamVector& params, Batch batch, const ParamVector& v) {
      { model.hessian_vector_product(params, batch, v) } -> std::same_as<ParamVector>;
    };

namespace detail {

inline void check_batch(const ParamVector& params, Batch batch) {
  if (batch.empty()) throw EmptyBatchError("empty batch");
  for (const auto& s : batch) params.require_same_dim(s.x);
}

inline double residual(std::span<const double> p, const Sample& s) {
  const auto x = s.x.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += p[i] * x[i];
  return acc - s.y;
}

}  // namespace detail

/// (1/n) sum (<params, x> - y)^2
inline double mse_loss(const ParamVector& params, Batch batch) {
  detail::check_batch(params, batch);
  double acc = 0.0;
  for (const auto& s : batch) {
    const double r = detail::residual(params.values(), s);
    acc += r * r;
  }
  return acc / static_cast<double>(batch.size());
}

/// (2/n) sum (<params, x> - y) x
inline ParamVector mse_gradient(const ParamVector& params, Batch batch) {
  detail::check_batch(params, batch);
  const double scale = 2.0 / static_cast<double>(batch.size());
  std::vector<double> g(params.dim(), 0.0);
  for (const auto& s : batch) {
    const double r = scale * detail::residual(params.values(), s);
    const auto x = s.x.values();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += r * x[i];
  }
  return ParamVector(std::move(g));
}

/// H v with H = (2/n) sum x x^T; H does not depend on params for this loss.
inline ParamVector mse_hvp(const ParamVector& params, Batch batch, const ParamVector& v) {
  detail::check_batch(params, batch);
  params.require_same_dim(v);
  const double scale = 2.0 / static_cast<double>(batch.size());
  std::vector<double> out(v.dim(), 0.0);
  for (const auto& s : batch) {
    const double xv = scale * dot(s.x, v);
    const auto x = s.x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += xv * x[i];
  }
  return ParamVector(std::move(out));
}

class LinearRegressionModel {
 public:
  explicit LinearRegressionModel(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw ConfigError("model dim must be positive");
  }

  std::size_t dim() const noexcept { return dim_; }

  double loss(const ParamVector& params, Batch batch) const {
    check(params);
    return mse_loss(params, batch);
  }

  ParamVector gradient(const ParamVector& params, Batch batch) const {
    check(params);
    return mse_gradient(params, batch);
  }

  ParamVector hessian_vector_product(const ParamVector& params, Batch batch,
                                     const ParamVector& v) const {
    check(params);
    return mse_hvp(params, batch, v);
  }

 private:
  void check(const ParamVector& params) const {
    if (params.dim() != dim_) {
      throw DimensionMismatchError("model expects dim " + std::to_string(dim_) + ", got " +
                                   std::to_string(params.dim()));
    }
  }

  std::size_t dim_;
};

/// Same loss as LinearRegressionModel without the Hessian capability.
class FirstOrderLinearModel {
 public:
  explicit FirstOrderLinearModel(std::size_t dim) : inner_(dim) {}
  std::size_t dim() const noexcept { return inner_.dim(); }
  double loss(const ParamVector& p, Batch b) const { return inner_.loss(p, b); }
  ParamVector gradient(const ParamVector& p, Batch b) const { return inner_.gradient(p, b); }

 private:
  LinearRegressionModel inner_;
};

static_assert(SecondOrderModel<LinearRegressionModel>);
static_assert(DifferentiableModel<FirstOrderLinearModel> && !SecondOrderModel<FirstOrderLinearModel>);

}  // namespace treemaml
