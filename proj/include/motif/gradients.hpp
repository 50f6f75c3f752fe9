#pragma once

// Class-weighted objective and its exact reverse-mode gradient.

#include <cmath>
#include <optional>
#include <sstream>
#include <vector>

#include "motif/model.hpp"

namespace motif {

struct Regularization {
  double lambda_l1 = 1e-3;
  double lambda_sparse = 1e-3;
};

template <typename Scalar>
struct LossTerms {
  Scalar cross_entropy{0};
  Scalar l1{0};
  Scalar sparsity{0};

  Scalar total() const { return cross_entropy + l1 + sparsity; }
};

template <typename Scalar>
struct LossAndGradient {
  LossTerms<Scalar> terms;
  ModelParams<Scalar> gradient;
};

namespace detail {

template <typename Scalar>
Scalar log_sum_exp(const Vector<Scalar>& v) {
  const Scalar top = v.maxCoeff();
  return top + std::log((v.array() - top).exp().sum());
}

template <typename Scalar>
Scalar sign(Scalar x) {
  return x > Scalar(0) ? Scalar(1) : (x < Scalar(0) ? Scalar(-1) : Scalar(0));
}

template <typename Scalar>
Scalar masked_abs_mean(const Matrix<Scalar>& z, const Mask& mask) {
  Scalar acc(0);
  for (Eigen::Index t = 0; t < z.rows(); ++t)
    if (mask(t)) acc += z.row(t).cwiseAbs().sum();
  return acc / (static_cast<Scalar>(mask.count()) * static_cast<Scalar>(z.cols()));
}

template <typename Scalar>
void check_weights(std::size_t batch, const std::vector<double>& weights, Eigen::Index classes) {
  if (batch == 0) throw InputError("loss: empty batch");
  if (static_cast<Eigen::Index>(weights.size()) != classes)
    throw InputError("loss: expected " + std::to_string(classes) + " class weights, got " + std::to_string(weights.size()));
  for (double w : weights)
    if (!(w >= 0.0)) throw InputError("loss: class weights must be >= 0");
}

/// Backward through per-channel normalization; returns dL/dx on valid rows.
template <typename Scalar>
Matrix<Scalar> channel_norm_backward(const Matrix<Scalar>& dy, const Mask& mask, const NormCache<Scalar>& cache,
                                     const Vector<Scalar>& scale, Vector<Scalar>& d_scale, Vector<Scalar>& d_shift) {
  const Scalar count = static_cast<Scalar>(mask.count());
  Matrix<Scalar> dx = Matrix<Scalar>::Zero(dy.rows(), dy.cols());
  for (Eigen::Index c = 0; c < dy.cols(); ++c) {
    Scalar mean_dxhat(0), mean_dxhat_xhat(0);
    for (Eigen::Index t = 0; t < dy.rows(); ++t) {
      if (!mask(t)) continue;
      const Scalar xhat = cache.centered_scaled(t, c);
      d_scale(c) += dy(t, c) * xhat;
      d_shift(c) += dy(t, c);
      const Scalar dxhat = dy(t, c) * scale(c);
      mean_dxhat += dxhat;
      mean_dxhat_xhat += dxhat * xhat;
    }
    mean_dxhat /= count;
    mean_dxhat_xhat /= count;
    for (Eigen::Index t = 0; t < dy.rows(); ++t) {
      if (!mask(t)) continue;
      const Scalar xhat = cache.centered_scaled(t, c);
      dx(t, c) = cache.inv_std(c) * (dy(t, c) * scale(c) - mean_dxhat - xhat * mean_dxhat_xhat);
    }
  }
  return dx;
}

template <typename Scalar>
Matrix<Scalar> token_norm_backward(const Matrix<Scalar>& dy, const Mask& mask, const NormCache<Scalar>& cache,
                                   const Vector<Scalar>& scale, Vector<Scalar>& d_scale, Vector<Scalar>& d_shift) {
  const Scalar width = static_cast<Scalar>(dy.cols());
  Matrix<Scalar> dx = Matrix<Scalar>::Zero(dy.rows(), dy.cols());
  for (Eigen::Index t = 0; t < dy.rows(); ++t) {
    if (!mask(t)) continue;
    const auto xhat = cache.centered_scaled.row(t);
    d_scale += dy.row(t).cwiseProduct(xhat).transpose();
    d_shift += dy.row(t).transpose();
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> dxhat = dy.row(t).cwiseProduct(scale.transpose());
    const Scalar m1 = dxhat.sum() / width;
    const Scalar m2 = dxhat.cwiseProduct(xhat).sum() / width;
    dx.row(t) = cache.inv_std(t) * (dxhat.array() - m1 - xhat.array() * m2).matrix();
  }
  return dx;
}

template <typename Scalar>
Matrix<Scalar> block_norm_backward(NormMode mode, const Matrix<Scalar>& dy, const Mask& mask,
                                   const NormCache<Scalar>& cache, const Vector<Scalar>& scale,
                                   Vector<Scalar>& d_scale, Vector<Scalar>& d_shift) {
  return mode == NormMode::temporal ? channel_norm_backward(dy, mask, cache, scale, d_scale, d_shift)
                                    : token_norm_backward(dy, mask, cache, scale, d_scale, d_shift);
}

/// dS = P .* (dP - rowsum(P .* dP)) for a row-stochastic P.
template <typename Scalar>
Matrix<Scalar> softmax_rows_backward(const Matrix<Scalar>& probs, const Matrix<Scalar>& d_probs) {
  const Vector<Scalar> inner = probs.cwiseProduct(d_probs).rowwise().sum();
  return probs.cwiseProduct(d_probs.colwise() - inner);
}

template <typename Scalar>
Matrix<Scalar> diagonal_attention_backward(const Matrix<Scalar>& d_out, const Matrix<Scalar>& input,
                                           const AttentionResult<Scalar>& fwd, const ModelParams<Scalar>& p,
                                           ModelParams<Scalar>& g) {
  Matrix<Scalar> d_in = Matrix<Scalar>::Zero(input.rows(), input.cols());
  for (Eigen::Index c = 0; c < input.cols(); ++c) {
    const Matrix<Scalar>& probs = fwd.maps[static_cast<std::size_t>(c)];
    const Vector<Scalar> d_v = probs.transpose() * d_out.col(c);
    const Matrix<Scalar> d_probs = d_out.col(c) * fwd.v.col(c).transpose();
    const Matrix<Scalar> d_scores = softmax_rows_backward(probs, d_probs);
    const Vector<Scalar> d_q = d_scores * fwd.k.col(c);
    const Vector<Scalar> d_k = d_scores.transpose() * fwd.q.col(c);
    g.theta_q(c) += d_q.dot(input.col(c));
    g.theta_k(c) += d_k.dot(input.col(c));
    g.theta_v(c) += d_v.dot(input.col(c));
    d_in.col(c) = p.theta_q(c) * d_q + p.theta_k(c) * d_k + p.theta_v(c) * d_v;
  }
  return d_in;
}

template <typename Scalar>
Matrix<Scalar> full_attention_backward(const Matrix<Scalar>& d_out, const Matrix<Scalar>& input,
                                       const AttentionResult<Scalar>& fwd, const ModelParams<Scalar>& p,
                                       ModelParams<Scalar>& g) {
  const Eigen::Index concepts = input.cols();
  const int heads = p.config.heads;
  const Eigen::Index dim = concepts / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dim));
  g.wo += d_out.transpose() * fwd.mixed;
  const Matrix<Scalar> d_mixed = d_out * p.wo;
  Matrix<Scalar> d_q = Matrix<Scalar>::Zero(input.rows(), concepts);
  Matrix<Scalar> d_k = d_q, d_v = d_q;
  for (int h = 0; h < heads; ++h) {
    const Matrix<Scalar>& probs = fwd.maps[static_cast<std::size_t>(h)];
    const auto dm = d_mixed.middleCols(h * dim, dim);
    const Matrix<Scalar> d_probs = dm * fwd.v.middleCols(h * dim, dim).transpose();
    d_v.middleCols(h * dim, dim) = probs.transpose() * dm;
    const Matrix<Scalar> d_scores = softmax_rows_backward(probs, d_probs) * scale;
    d_q.middleCols(h * dim, dim) = d_scores * fwd.k.middleCols(h * dim, dim);
    d_k.middleCols(h * dim, dim) = d_scores.transpose() * fwd.q.middleCols(h * dim, dim);
  }
  g.wq += d_q.transpose() * input;
  g.wk += d_k.transpose() * input;
  g.wv += d_v.transpose() * input;
  return d_q * p.wq + d_k * p.wk + d_v * p.wv;
}

/// Accumulates into g the gradient of a per-sample objective whose
/// derivative w.r.t. the pooled logits is d_pooled, plus sparse_coef * sum|Z|.
template <typename Scalar>
void backward_sample(const ForwardTrace<Scalar>& tr, const ModelParams<Scalar>& p, const Vector<Scalar>& d_pooled,
                     Scalar sparse_coef, ModelParams<Scalar>& g) {
  const Mask& mask = tr.mask;
  const Scalar tau = static_cast<Scalar>(p.config.tau);
  // Normalized and unnormalized LSE share the same derivative: softmax of tau * l over valid t.
  const Matrix<Scalar> weights = masked_softmax_columns(tr.logits, mask, tau);
  const Matrix<Scalar> d_logits = weights * d_pooled.asDiagonal();
  g.b += d_logits.colwise().sum().transpose();
  g.W += d_logits.transpose() * tr.z;

  Matrix<Scalar> d_z = d_logits * p.W;
  Matrix<Scalar> d_pre(d_z.rows(), d_z.cols());
  for (Eigen::Index c = 0; c < d_z.cols(); ++c)
    for (Eigen::Index t = 0; t < d_z.rows(); ++t) {
      if (!mask(t)) {
        d_pre(t, c) = Scalar(0);
        continue;
      }
      const Scalar dz = d_z(t, c) + sparse_coef * sign(tr.z(t, c));
      d_pre(t, c) = dz * sigmoid(tr.pre_activation(t, c));
    }

  Matrix<Scalar> d_xl = d_pre;
  if (p.config.affine) {
    g.gamma += d_pre.cwiseProduct(tr.x_l).colwise().sum().transpose();
    g.delta += d_pre.colwise().sum().transpose();
    d_xl = d_pre * p.gamma.asDiagonal();
  }

  // FFN branch
  const BlockCache<Scalar>& bc = tr.block;
  g.ffn_b2 += d_xl.colwise().sum().transpose();
  g.ffn_w2 += d_xl.cwiseProduct(bc.activated).colwise().sum().transpose();
  Matrix<Scalar> d_hidden = d_xl * p.ffn_w2.asDiagonal();
  if (bc.keep.size() > 0) d_hidden = d_hidden.cwiseProduct(bc.keep);
  d_hidden = d_hidden.cwiseProduct(bc.hidden.unaryExpr([](Scalar h) { return gelu_derivative(h); }));
  for (Eigen::Index t = 0; t < d_hidden.rows(); ++t)
    if (!mask(t)) d_hidden.row(t).setZero();
  g.ffn_w1 += d_hidden.cwiseProduct(bc.normed2).colwise().sum().transpose();
  g.ffn_b1 += d_hidden.colwise().sum().transpose();
  const Matrix<Scalar> d_normed2 = d_hidden * p.ffn_w1.asDiagonal();
  Matrix<Scalar> d_x1 =
      block_norm_backward(p.config.norm, d_normed2, mask, bc.norm2, p.norm2_scale, g.norm2_scale, g.norm2_shift);
  if (p.config.residual) d_x1 += d_xl;
  for (Eigen::Index t = 0; t < d_x1.rows(); ++t)
    if (!mask(t)) d_x1.row(t).setZero();

  // attention branch
  const Matrix<Scalar> d_normed1 = p.config.variant == AttentionVariant::diagonal
                                       ? diagonal_attention_backward(d_x1, bc.normed1, bc.attention, p, g)
                                       : full_attention_backward(d_x1, bc.normed1, bc.attention, p, g);
  block_norm_backward(p.config.norm, d_normed1, mask, bc.norm1, p.norm1_scale, g.norm1_scale, g.norm1_shift);
}

template <typename Scalar>
std::string parameter_norms(const ModelParams<Scalar>& p) {
  std::ostringstream os;
  ModelParams<Scalar> copy = p;
  for_each_tensor([&](const TensorSlot& slot, auto& t) {
    if (t.size() > 0) os << ' ' << slot.name << '=' << t.norm();
  }, copy);
  return os.str();
}

}  // namespace detail

/// Weighted cross-entropy of pooled logits averaged over the batch, plus
/// lambda_l1 * sum|W| and lambda_sparse * batch-mean of the masked mean of Z.
template <typename Scalar>
LossTerms<Scalar> loss_from_traces(const std::vector<ForwardTrace<Scalar>>& traces, const std::vector<int>& labels,
                                   const ModelParams<Scalar>& p, const std::vector<double>& weights,
                                   const Regularization& reg) {
  detail::check_weights<Scalar>(traces.size(), weights, p.classes());
  const Scalar batch = static_cast<Scalar>(traces.size());
  LossTerms<Scalar> terms;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto& tr = traces[i];
    const int y = labels[i];
    if (y < 0 || y >= p.classes()) throw InputError("loss: label " + std::to_string(y) + " out of range");
    const Scalar ce = detail::log_sum_exp(tr.pooled_logits) - tr.pooled_logits(y);
    terms.cross_entropy += static_cast<Scalar>(weights[static_cast<std::size_t>(y)]) * ce / batch;
    terms.sparsity += static_cast<Scalar>(reg.lambda_sparse) * detail::masked_abs_mean(tr.z, tr.mask) / batch;
  }
  terms.l1 = static_cast<Scalar>(reg.lambda_l1) * p.W.cwiseAbs().sum();
  return terms;
}

template <typename Scalar>
LossTerms<Scalar> loss(const PaddedBatch& batch, const ModelParams<Scalar>& p, const std::vector<double>& weights,
                       const Regularization& reg, std::optional<std::uint64_t> dropout_seed = std::nullopt) {
  if (batch.size() == 0) throw InputError("loss: empty batch");
  return loss_from_traces(forward(batch, p, dropout_seed), batch.labels, p, weights, reg);
}

/// Loss and exact gradient for every tensor in ModelParams. Per-sample
/// gradients are reduced in batch order.
template <typename Scalar>
LossAndGradient<Scalar> gradients(const PaddedBatch& batch, const ModelParams<Scalar>& p,
                                  const std::vector<double>& weights, const Regularization& reg,
                                  std::optional<std::uint64_t> dropout_seed = std::nullopt) {
  if (batch.size() == 0) throw InputError("gradients: empty batch");
  const auto traces = forward(batch, p, dropout_seed);
  LossAndGradient<Scalar> out;
  out.terms = loss_from_traces(traces, batch.labels, p, weights, reg);
  if (!std::isfinite(static_cast<double>(out.terms.total())))
    throw NumericalError("non-finite loss; parameter norms:" + detail::parameter_norms(p));

  const Scalar count = static_cast<Scalar>(traces.size());
  std::vector<ModelParams<Scalar>> per_sample(traces.size());
  parallel_for(traces.size(), [&](std::size_t i) {
    const auto& tr = traces[i];
    const int y = batch.labels[i];
    Vector<Scalar> probs = (tr.pooled_logits.array() - detail::log_sum_exp(tr.pooled_logits)).exp();
    probs(y) -= Scalar(1);
    const Vector<Scalar> d_pooled = probs * (static_cast<Scalar>(weights[static_cast<std::size_t>(y)]) / count);
    const Scalar sparse_coef = static_cast<Scalar>(reg.lambda_sparse) /
                               (count * static_cast<Scalar>(tr.mask.count()) * static_cast<Scalar>(p.concepts()));
    per_sample[i] = p.zeros_like();
    detail::backward_sample(tr, p, d_pooled, sparse_coef, per_sample[i]);
  });
  out.gradient = p.zeros_like();
  for (auto& g : per_sample)
    for_each_tensor([](const TensorSlot&, auto& acc, auto& part) { acc += part; }, out.gradient, g);
  out.gradient.W += static_cast<Scalar>(reg.lambda_l1) * p.W.unaryExpr([](Scalar w) { return detail::sign(w); });
  return out;
}

}  // namespace motif
