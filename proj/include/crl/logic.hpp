#pragma once

// Boolean logical layers: the discrete AND/OR form, its continuous relaxation
// and the hand-derived gradients of the relaxation.

#include <cmath>
#include <limits>
#include <string>
#include <type_traits>

#include "crl/types.hpp"

namespace crl {

template <typename Scalar>
constexpr Scalar factor_floor() {
  if constexpr (std::is_same_v<Scalar, float>) {
    return std::numeric_limits<float>::min();
  } else {
    return Scalar(1e-300);
  }
}

/// Conjunction literal factor: 1 - w (1 - n).
template <typename Scalar>
constexpr Scalar f_c(Scalar n, Scalar w) {
  return Scalar(1) - w * (Scalar(1) - n);
}

/// Disjunction literal factor: 1 - n w.
template <typename Scalar>
constexpr Scalar f_d(Scalar n, Scalar w) {
  return Scalar(1) - n * w;
}

/// Projection P(x) = 1 / (1 - log x), evaluated from S = log x.
/// S = -inf maps to 0 (the limit at x -> 0+). Positive S is outside the domain.
template <typename Scalar>
Scalar project_logsum(Scalar log_sum) {
  if (log_sum > Scalar(0)) {
    throw std::domain_error("project_logsum: log-sum must be <= 0, got " +
                            std::to_string(static_cast<double>(log_sum)));
  }
  if (std::isinf(log_sum)) return Scalar(0);
  return Scalar(1) / (Scalar(1) - log_sum);
}

namespace detail {

template <typename Scalar, typename Factor, typename DerivedN, typename DerivedW>
Scalar projected_product(const Eigen::MatrixBase<DerivedN>& n,
                         const Eigen::MatrixBase<DerivedW>& w, Factor factor) {
  if (n.size() != w.size()) {
    throw dimension_error("logic node: input length " + std::to_string(n.size()) +
                          " does not match weight length " + std::to_string(w.size()));
  }
  Scalar log_sum(0);
  for (Eigen::Index j = 0; j < n.size(); ++j) {
    const Scalar f = factor(Scalar(n(j)), Scalar(w(j)));
    if (f <= factor_floor<Scalar>()) return Scalar(0);
    log_sum += std::log(f);
  }
  return project_logsum(log_sum);
}

}  // namespace detail

/// Relaxed AND of one node: P(prod_j F_c(n_j, w_j)).
template <typename DerivedN, typename DerivedW>
typename DerivedN::Scalar conj_continuous(const Eigen::MatrixBase<DerivedN>& n,
                                          const Eigen::MatrixBase<DerivedW>& w) {
  using Scalar = typename DerivedN::Scalar;
  return detail::projected_product<Scalar>(n, w, f_c<Scalar>);
}

/// Relaxed OR of one node: 1 - P(prod_j F_d(n_j, w_j)).
template <typename DerivedN, typename DerivedW>
typename DerivedN::Scalar disj_continuous(const Eigen::MatrixBase<DerivedN>& n,
                                          const Eigen::MatrixBase<DerivedW>& w) {
  using Scalar = typename DerivedN::Scalar;
  return Scalar(1) - detail::projected_product<Scalar>(n, w, f_d<Scalar>);
}

/// Continuous adjacency weights of one logical layer. Rows of `conj` are the
/// conjunction nodes, rows of `disj` the disjunction nodes; both have one
/// column per node of the previous layer. Output order is [conj; disj].
template <typename Scalar>
struct LogicLayerParams {
  RowMatrix<Scalar> conj;
  RowMatrix<Scalar> disj;

  static LogicLayerParams zeros(Eigen::Index conj_nodes, Eigen::Index disj_nodes,
                                Eigen::Index inputs) {
    return {RowMatrix<Scalar>::Zero(conj_nodes, inputs),
            RowMatrix<Scalar>::Zero(disj_nodes, inputs)};
  }

  Eigen::Index input_size() const { return conj.cols(); }
  Eigen::Index conj_size() const { return conj.rows(); }
  Eigen::Index disj_size() const { return disj.rows(); }
  Eigen::Index size() const { return conj.rows() + disj.rows(); }

  void validate() const {
    if (conj.cols() != disj.cols()) {
      throw dimension_error("logic layer: conj/disj input widths differ (" +
                            std::to_string(conj.cols()) + " vs " +
                            std::to_string(disj.cols()) + ")");
    }
  }

  bool in_unit_box() const {
    return (conj.array() >= Scalar(0)).all() && (conj.array() <= Scalar(1)).all() &&
           (disj.array() >= Scalar(0)).all() && (disj.array() <= Scalar(1)).all();
  }

  Scalar checksum() const { return conj.sum() + Scalar(2) * disj.sum(); }
};

struct BinaryLayerParams {
  BitMatrix conj;
  BitMatrix disj;

  Eigen::Index input_size() const { return conj.cols(); }
  Eigen::Index size() const { return conj.rows() + disj.rows(); }
};

template <typename Scalar>
struct LayerGradients {
  RowMatrix<Scalar> d_conj;
  RowMatrix<Scalar> d_disj;
  Vector<Scalar> d_input;

  static LayerGradients zeros_like(const LogicLayerParams<Scalar>& params) {
    return {RowMatrix<Scalar>::Zero(params.conj_size(), params.input_size()),
            RowMatrix<Scalar>::Zero(params.disj_size(), params.input_size()),
            Vector<Scalar>::Zero(params.input_size())};
  }
};

/// State kept by the continuous forward pass for the backward pass.
template <typename Scalar>
struct LayerCache {
  Vector<Scalar> input;
  Vector<Scalar> output;
  Vector<Scalar> conj_log_sum;
  Vector<Scalar> disj_log_sum;
  Eigen::Array<bool, Eigen::Dynamic, 1> conj_dead;
  Eigen::Array<bool, Eigen::Dynamic, 1> disj_dead;
  Eigen::Index conj_nodes = 0;
  Eigen::Index disj_nodes = 0;
  Scalar params_checksum = Scalar(0);
};

/// Entrywise threshold: 1 if w >= threshold else 0.
template <typename Scalar>
BinaryLayerParams binarize_weights(const LogicLayerParams<Scalar>& params,
                                   Scalar threshold = Scalar(0.5)) {
  if (!(threshold > Scalar(0) && threshold < Scalar(1))) {
    throw std::invalid_argument("binarize_weights: threshold must lie in (0,1)");
  }
  return {(params.conj.array() >= threshold).template cast<std::uint8_t>().matrix(),
          (params.disj.array() >= threshold).template cast<std::uint8_t>().matrix()};
}

/// Direct AND/OR evaluation over connected inputs (empty AND = 1, empty OR = 0).
inline BitVector layer_forward_discrete(const BitVector& input, const BinaryLayerParams& params) {
  if (input.size() != params.input_size() || params.conj.cols() != params.disj.cols()) {
    throw dimension_error("layer_forward_discrete: input length " +
                          std::to_string(input.size()) + " vs layer width " +
                          std::to_string(params.input_size()));
  }
  for (Eigen::Index j = 0; j < input.size(); ++j) {
    if (input(j) > 1) {
      throw std::invalid_argument("layer_forward_discrete: input entry " + std::to_string(j) +
                                  " is not binary");
    }
  }
  const Eigen::Index conj_nodes = params.conj.rows();
  BitVector out(params.size());
  for (Eigen::Index i = 0; i < conj_nodes; ++i) {
    std::uint8_t value = 1;
    for (Eigen::Index j = 0; j < input.size() && value; ++j) {
      if (params.conj(i, j) && !input(j)) value = 0;
    }
    out(i) = value;
  }
  for (Eigen::Index i = 0; i < params.disj.rows(); ++i) {
    std::uint8_t value = 0;
    for (Eigen::Index j = 0; j < input.size() && !value; ++j) {
      if (params.disj(i, j) && input(j)) value = 1;
    }
    out(conj_nodes + i) = value;
  }
  return out;
}

/// Continuous layer forward. Products are accumulated as log-sums; a node with
/// a factor at or below the floor is dead (conj -> 0, disj -> 1).
template <typename Scalar>
LayerCache<Scalar> layer_forward_continuous(const Vector<Scalar>& input,
                                            const LogicLayerParams<Scalar>& params) {
  params.validate();
  if (input.size() != params.input_size()) {
    throw dimension_error("layer_forward_continuous: input length " +
                          std::to_string(input.size()) + " vs layer width " +
                          std::to_string(params.input_size()));
  }
  using RowArray = Eigen::Array<Scalar, 1, Eigen::Dynamic>;
  constexpr Scalar floor = factor_floor<Scalar>();
  constexpr Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();

  LayerCache<Scalar> cache;
  cache.input = input;
  cache.conj_nodes = params.conj_size();
  cache.disj_nodes = params.disj_size();
  cache.params_checksum = params.checksum();
  cache.output.resize(params.size());

  const RowArray miss = (Scalar(1) - input.array()).transpose();
  const RowArray hit = input.array().transpose();

  // Row by row, so wide layers never materialise a full factor matrix.
  cache.conj_dead.resize(cache.conj_nodes);
  cache.conj_log_sum.resize(cache.conj_nodes);
  for (Eigen::Index i = 0; i < cache.conj_nodes; ++i) {
    const auto factors = Scalar(1) - params.conj.row(i).array() * miss;
    cache.conj_dead(i) = (factors <= floor).any();
    cache.conj_log_sum(i) = cache.conj_dead(i) ? neg_inf : factors.log().sum();
    cache.output(i) = project_logsum(cache.conj_log_sum(i));
  }
  cache.disj_dead.resize(cache.disj_nodes);
  cache.disj_log_sum.resize(cache.disj_nodes);
  for (Eigen::Index i = 0; i < cache.disj_nodes; ++i) {
    const auto factors = Scalar(1) - params.disj.row(i).array() * hit;
    cache.disj_dead(i) = (factors <= floor).any();
    cache.disj_log_sum(i) = cache.disj_dead(i) ? neg_inf : factors.log().sum();
    cache.output(cache.conj_nodes + i) = Scalar(1) - project_logsum(cache.disj_log_sum(i));
  }
  return cache;
}

/// Adds the analytic weight gradients of `upstream . output` into `d_conj` and
/// `d_disj` and returns the gradient with respect to the layer input.
///
/// For a conjunction node y = 1/(1 - S), S = sum_j log F_j:
///   dy/dF_j = y^2 / F_j,  dF_c/dw = -(1 - n),  dF_c/dn = w.
/// Disjunction nodes carry an outer sign of -1 with dF_d/dw = -n, dF_d/dn = -w.
/// Dead nodes contribute nothing.
template <typename Scalar>
Vector<Scalar> layer_backward_continuous_accumulate(const LogicLayerParams<Scalar>& params,
                                                    const LayerCache<Scalar>& cache,
                                                    const Vector<Scalar>& upstream,
                                                    RowMatrix<Scalar>& d_conj,
                                                    RowMatrix<Scalar>& d_disj) {
  if (cache.conj_nodes != params.conj_size() || cache.disj_nodes != params.disj_size() ||
      cache.input.size() != params.input_size()) {
    throw dimension_error("layer_backward_continuous: cache does not match layer shape");
  }
  if (cache.params_checksum != params.checksum()) {
    throw std::logic_error("layer_backward_continuous: stale cache (weights changed since forward)");
  }
  if (upstream.size() != params.size()) {
    throw dimension_error("layer_backward_continuous: upstream length " +
                          std::to_string(upstream.size()) + " vs layer size " +
                          std::to_string(params.size()));
  }
  if (d_conj.rows() != params.conj_size() || d_conj.cols() != params.input_size() ||
      d_disj.rows() != params.disj_size() || d_disj.cols() != params.input_size()) {
    throw dimension_error("layer_backward_continuous: gradient buffers have the wrong shape");
  }
  using RowArray = Eigen::Array<Scalar, 1, Eigen::Dynamic>;

  const RowArray miss = (Scalar(1) - cache.input.array()).transpose();
  const RowArray hit = cache.input.array().transpose();
  Vector<Scalar> d_input = Vector<Scalar>::Zero(params.input_size());
  RowArray scaled(params.input_size());

  for (Eigen::Index i = 0; i < cache.conj_nodes; ++i) {
    const Scalar y = cache.output(i);
    const Scalar coef = cache.conj_dead(i) ? Scalar(0) : upstream(i) * y * y;
    if (coef == Scalar(0)) continue;
    scaled = coef / (Scalar(1) - params.conj.row(i).array() * miss);
    d_conj.row(i).array() -= scaled * miss;
    d_input.array() += (scaled * params.conj.row(i).array()).transpose();
  }
  for (Eigen::Index i = 0; i < cache.disj_nodes; ++i) {
    const Scalar p = Scalar(1) - cache.output(cache.conj_nodes + i);
    const Scalar coef = cache.disj_dead(i) ? Scalar(0) : upstream(cache.conj_nodes + i) * p * p;
    if (coef == Scalar(0)) continue;
    scaled = coef / (Scalar(1) - params.disj.row(i).array() * hit);
    d_disj.row(i).array() += scaled * hit;
    d_input.array() += (scaled * params.disj.row(i).array()).transpose();
  }
  return d_input;
}

template <typename Scalar>
LayerGradients<Scalar> layer_backward_continuous(const LogicLayerParams<Scalar>& params,
                                                 const LayerCache<Scalar>& cache,
                                                 const Vector<Scalar>& upstream) {
  auto grads = LayerGradients<Scalar>::zeros_like(params);
  grads.d_input =
      layer_backward_continuous_accumulate(params, cache, upstream, grads.d_conj, grads.d_disj);
  return grads;
}

}  // namespace crl
