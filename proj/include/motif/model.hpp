#pragma once

// Forward pass over one T x C concept-activation sequence.
//
// Layout: time along rows, concepts along columns. Every per-channel
// operation works on one column, so with the diagonal variant nothing ever
// reads more than one column before the linear head.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "motif/data.hpp"
#include "motif/errors.hpp"
#include "motif/parallel.hpp"
#include "motif/types.hpp"

namespace motif {

enum class AttentionVariant { diagonal, full };

inline const char* to_string(AttentionVariant v) { return v == AttentionVariant::diagonal ? "diagonal" : "full"; }

inline AttentionVariant parse_variant(const std::string& s) {
  if (s == "diagonal") return AttentionVariant::diagonal;
  if (s == "full") return AttentionVariant::full;
  throw ConfigError("unknown attention variant '" + s + "' (expected diagonal|full)");
}

/// Axis of the block's normalization. `temporal` normalizes each channel over
/// its valid time steps and is the only mode compatible with concept
/// isolation; `token` is the usual transformer LayerNorm over channels at each
/// step and is meant for the full-attention baseline.
enum class NormMode { temporal, token };

inline const char* to_string(NormMode m) { return m == NormMode::temporal ? "temporal" : "token"; }

inline NormMode parse_norm_mode(const std::string& s) {
  if (s == "temporal") return NormMode::temporal;
  if (s == "token") return NormMode::token;
  throw ConfigError("unknown norm mode '" + s + "' (expected temporal|token)");
}

struct ModelConfig {
  AttentionVariant variant = AttentionVariant::diagonal;
  NormMode norm = NormMode::temporal;
  int heads = 1;              // full variant only
  double tau = 1.0;           // LSE temperature
  bool affine = true;         // per-concept gamma/delta before Softplus
  bool residual = true;       // pre-norm residual connections in the block
  double dropout = 0.1;       // FFN dropout, training only
  bool normalized_lse = true; // divide by the number of valid steps inside the log

  void validate(Eigen::Index concepts) const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be a positive finite number");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (variant == AttentionVariant::diagonal && norm == NormMode::token)
      throw ConfigError("token normalization mixes channels and cannot be combined with diagonal attention");
    if (variant == AttentionVariant::full) {
      if (heads < 1) throw ConfigError("heads must be >= 1");
      if (concepts % heads != 0)
        throw ConfigError("concepts (" + std::to_string(concepts) + ") not divisible by heads (" + std::to_string(heads) + ")");
    }
  }
};

/// All learnable tensors. Gradients and optimizer moments reuse this type.
template <typename Scalar>
struct ModelParams {
  ModelConfig config;
  // depthwise QKV projections, one scalar per channel
  Vector<Scalar> theta_q, theta_k, theta_v;
  // per-channel temporal normalization before attention and before the FFN
  Vector<Scalar> norm1_scale, norm1_shift, norm2_scale, norm2_shift;
  // depthwise FFN: w2 * GELU(w1 * x + b1) + b2
  Vector<Scalar> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Vector<Scalar> gamma, delta;
  Matrix<Scalar> W;  // K x C
  Vector<Scalar> b;  // K
  // full-attention baseline only; empty for the diagonal variant
  Matrix<Scalar> wq, wk, wv, wo;

  Eigen::Index concepts() const { return theta_q.size(); }
  Eigen::Index classes() const { return W.rows(); }

  static ModelParams zeros(Eigen::Index concepts, Eigen::Index classes, const ModelConfig& config) {
    ModelParams p;
    p.config = config;
    for (Vector<Scalar>* v : {&p.theta_q, &p.theta_k, &p.theta_v, &p.norm1_scale, &p.norm1_shift, &p.norm2_scale,
                              &p.norm2_shift, &p.ffn_w1, &p.ffn_b1, &p.ffn_w2, &p.ffn_b2, &p.gamma, &p.delta})
      v->setZero(concepts);
    p.W.setZero(classes, concepts);
    p.b.setZero(classes);
    if (config.variant == AttentionVariant::full) {
      for (Matrix<Scalar>* m : {&p.wq, &p.wk, &p.wv, &p.wo}) m->setZero(concepts, concepts);
    }
    return p;
  }

  ModelParams zeros_like() const { return zeros(concepts(), classes(), config); }

  template <typename Other>
  ModelParams<Other> cast() const;
};

/// Role of one tensor for the optimizer and regularizers.
struct TensorSlot {
  const char* name;
  bool weight_decay;
  bool l1;
};

/// Calls f(slot, p.field...) for every tensor of every given parameter set.
template <typename F, typename... P>
void for_each_tensor(F&& f, P&... p) {
  f(TensorSlot{"theta_q", true, false}, p.theta_q...);
  f(TensorSlot{"theta_k", true, false}, p.theta_k...);
  f(TensorSlot{"theta_v", true, false}, p.theta_v...);
  f(TensorSlot{"norm1_scale", false, false}, p.norm1_scale...);
  f(TensorSlot{"norm1_shift", false, false}, p.norm1_shift...);
  f(TensorSlot{"norm2_scale", false, false}, p.norm2_scale...);
  f(TensorSlot{"norm2_shift", false, false}, p.norm2_shift...);
  f(TensorSlot{"ffn_w1", true, false}, p.ffn_w1...);
  f(TensorSlot{"ffn_b1", false, false}, p.ffn_b1...);
  f(TensorSlot{"ffn_w2", true, false}, p.ffn_w2...);
  f(TensorSlot{"ffn_b2", false, false}, p.ffn_b2...);
  f(TensorSlot{"gamma", false, false}, p.gamma...);
  f(TensorSlot{"delta", false, false}, p.delta...);
  f(TensorSlot{"W", true, true}, p.W...);
  f(TensorSlot{"b", false, false}, p.b...);
  f(TensorSlot{"wq", true, false}, p.wq...);
  f(TensorSlot{"wk", true, false}, p.wk...);
  f(TensorSlot{"wv", true, false}, p.wv...);
  f(TensorSlot{"wo", true, false}, p.wo...);
}

template <typename Scalar>
template <typename Other>
ModelParams<Other> ModelParams<Scalar>::cast() const {
  ModelParams<Other> out;
  out.config = config;
  ModelParams<Scalar> self = *this;
  for_each_tensor([](const TensorSlot&, auto& dst, auto& src) { dst = src.template cast<Other>(); }, out, self);
  return out;
}

/// Starts the block near identity: uniform-ish attention, zero FFN output.
template <typename Scalar>
ModelParams<Scalar> init_params(Eigen::Index concepts, Eigen::Index classes, const ModelConfig& config,
                                std::uint64_t seed, bool nonneg_W) {
  config.validate(concepts);
  ModelParams<Scalar> p = ModelParams<Scalar>::zeros(concepts, classes, config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> small(0.0, 0.02);
  std::normal_distribution<double> head(0.0, 1.0 / std::sqrt(static_cast<double>(concepts)));
  for (Eigen::Index c = 0; c < concepts; ++c) p.theta_q(c) = static_cast<Scalar>(small(rng));
  for (Eigen::Index c = 0; c < concepts; ++c) p.theta_k(c) = static_cast<Scalar>(small(rng));
  p.theta_v.setOnes();
  p.norm1_scale.setOnes();
  p.norm2_scale.setOnes();
  p.ffn_w1.setOnes();
  p.gamma.setOnes();
  for (Eigen::Index c = 0; c < concepts; ++c)
    for (Eigen::Index k = 0; k < classes; ++k) p.W(k, c) = static_cast<Scalar>(head(rng));
  if (nonneg_W) p.W = p.W.cwiseMax(Scalar(0));
  if (config.variant == AttentionVariant::full) {
    for (Matrix<Scalar>* m : {&p.wq, &p.wk})
      for (Eigen::Index j = 0; j < concepts; ++j)
        for (Eigen::Index i = 0; i < concepts; ++i) (*m)(i, j) = static_cast<Scalar>(small(rng));
    p.wv.setIdentity();
    p.wo.setIdentity();
  }
  return p;
}

// ---------------------------------------------------------------------------
// Scalar nonlinearities

template <typename Scalar>
Scalar softplus(Scalar x) {
  using std::abs, std::exp, std::log1p;
  return (x > Scalar(0) ? x : Scalar(0)) + log1p(exp(-abs(x)));
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  using std::exp;
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-x));
  const Scalar e = exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Scalar gelu(Scalar x) {
  using std::erf;
  return Scalar(0.5) * x * (Scalar(1) + erf(x / Scalar(std::sqrt(2.0))));
}

template <typename Scalar>
Scalar gelu_derivative(Scalar x) {
  using std::erf, std::exp;
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + erf(x / Scalar(std::sqrt(2.0))));
  const Scalar pdf = exp(Scalar(-0.5) * x * x) / Scalar(std::sqrt(2.0 * 3.14159265358979323846));
  return cdf + x * pdf;
}

// ---------------------------------------------------------------------------
// Masked pooling

inline void require_valid_steps(const Mask& mask, const char* what) {
  if (!mask.any()) throw InputError(std::string(what) + ": every time step is masked");
}

/// Per-column softmax over valid rows of scale * values. Masked rows get 0.
template <typename Scalar>
Matrix<Scalar> masked_softmax_columns(const Matrix<Scalar>& values, const Mask& mask, Scalar scale) {
  require_valid_steps(mask, "masked softmax");
  Matrix<Scalar> out = Matrix<Scalar>::Zero(values.rows(), values.cols());
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    Scalar top = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index t = 0; t < values.rows(); ++t)
      if (mask(t)) top = std::max(top, scale * values(t, j));
    Scalar total(0);
    for (Eigen::Index t = 0; t < values.rows(); ++t) {
      if (!mask(t)) continue;
      out(t, j) = std::exp(scale * values(t, j) - top);
      total += out(t, j);
    }
    out.col(j) /= total;
  }
  return out;
}

/// Log-sum-exp pooling over valid rows, column by column:
/// (1/tau) * log( sum_t m_t exp(tau * v_t) / sum_t m_t ) when normalized,
/// the same without the division otherwise.
template <typename Scalar>
Vector<Scalar> lse_pool(const Matrix<Scalar>& values, const Mask& mask, Scalar tau, bool normalized = true) {
  require_valid_steps(mask, "lse_pool");
  if (!(tau > Scalar(0))) throw InputError("lse_pool: tau must be > 0");
  if (mask.size() != values.rows()) throw InputError("lse_pool: mask length does not match values");
  const Scalar count = static_cast<Scalar>(mask.count());
  Vector<Scalar> out(values.cols());
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    Scalar top = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index t = 0; t < values.rows(); ++t)
      if (mask(t)) top = std::max(top, values(t, j));
    Scalar total(0);
    for (Eigen::Index t = 0; t < values.rows(); ++t)
      if (mask(t)) total += std::exp(tau * (values(t, j) - top));
    if (normalized) total /= count;
    out(j) = top + std::log(total) / tau;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-channel temporal normalization

inline constexpr double kNormEpsilon = 1e-5;

template <typename Scalar>
struct NormCache {
  Matrix<Scalar> centered_scaled;  // x_hat, zero on masked rows
  Vector<Scalar> inv_std;          // per channel (temporal) or per step (token)
};

/// (x - mean_c) / sqrt(var_c + eps) * scale_c + shift_c with statistics over
/// valid rows only. Masked rows of the output are 0.
template <typename Scalar>
Matrix<Scalar> channel_norm(const Matrix<Scalar>& x, const Mask& mask, const Vector<Scalar>& scale,
                            const Vector<Scalar>& shift, NormCache<Scalar>* cache = nullptr) {
  require_valid_steps(mask, "channel_norm");
  const Scalar count = static_cast<Scalar>(mask.count());
  Matrix<Scalar> xhat = Matrix<Scalar>::Zero(x.rows(), x.cols());
  Vector<Scalar> inv_std(x.cols());
  Matrix<Scalar> out = Matrix<Scalar>::Zero(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    Scalar mean(0);
    for (Eigen::Index t = 0; t < x.rows(); ++t)
      if (mask(t)) mean += x(t, c);
    mean /= count;
    Scalar var(0);
    for (Eigen::Index t = 0; t < x.rows(); ++t)
      if (mask(t)) var += (x(t, c) - mean) * (x(t, c) - mean);
    var /= count;
    inv_std(c) = Scalar(1) / std::sqrt(var + Scalar(kNormEpsilon));
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
      if (!mask(t)) continue;
      xhat(t, c) = (x(t, c) - mean) * inv_std(c);
      out(t, c) = xhat(t, c) * scale(c) + shift(c);
    }
  }
  if (cache) {
    cache->centered_scaled = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

/// LayerNorm across channels at each valid step; masked rows are 0.
template <typename Scalar>
Matrix<Scalar> token_norm(const Matrix<Scalar>& x, const Mask& mask, const Vector<Scalar>& scale,
                          const Vector<Scalar>& shift, NormCache<Scalar>* cache = nullptr) {
  require_valid_steps(mask, "token_norm");
  const Scalar width = static_cast<Scalar>(x.cols());
  Matrix<Scalar> xhat = Matrix<Scalar>::Zero(x.rows(), x.cols());
  Vector<Scalar> inv_std = Vector<Scalar>::Zero(x.rows());
  Matrix<Scalar> out = Matrix<Scalar>::Zero(x.rows(), x.cols());
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    if (!mask(t)) continue;
    const Scalar mean = x.row(t).sum() / width;
    const Scalar var = (x.row(t).array() - mean).square().sum() / width;
    inv_std(t) = Scalar(1) / std::sqrt(var + Scalar(kNormEpsilon));
    xhat.row(t) = (x.row(t).array() - mean) * inv_std(t);
    out.row(t) = xhat.row(t).cwiseProduct(scale.transpose()) + shift.transpose();
  }
  if (cache) {
    cache->centered_scaled = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> block_norm(NormMode mode, const Matrix<Scalar>& x, const Mask& mask, const Vector<Scalar>& scale,
                          const Vector<Scalar>& shift, NormCache<Scalar>* cache) {
  return mode == NormMode::temporal ? channel_norm(x, mask, scale, shift, cache) : token_norm(x, mask, scale, shift, cache);
}

// ---------------------------------------------------------------------------
// Attention

/// Multiplication counts, split by stage. Only filled when a counter is passed.
struct OpCounter {
  std::uint64_t projection_mults = 0;  // depthwise or dense QKV/O projections
  std::uint64_t score_mults = 0;       // query-key products
  std::uint64_t softmax_mults = 0;     // normalization by the row sum
  std::uint64_t mix_mults = 0;         // weighted sum over values

  std::uint64_t attention_mults() const { return score_mults + softmax_mults + mix_mults; }
};

template <typename Scalar>
struct AttentionResult {
  Matrix<Scalar> output;             // T x C, masked rows 0
  std::vector<Matrix<Scalar>> maps;  // C maps (diagonal) or H maps (full), each T x T
  Matrix<Scalar> q, k, v, mixed;     // projections, and pre-W_O head outputs (full variant)
};

namespace detail {

// Row-wise softmax over valid keys of scores (T x T), zero outside the valid block.
template <typename Scalar>
void softmax_rows_inplace(Matrix<Scalar>& scores, const Mask& mask, OpCounter* ops) {
  const Eigen::Index steps = scores.rows();
  for (Eigen::Index t = 0; t < steps; ++t) {
    if (!mask(t)) {
      scores.row(t).setZero();
      continue;
    }
    Scalar top = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index u = 0; u < steps; ++u)
      if (mask(u)) top = std::max(top, scores(t, u));
    Scalar total(0);
    for (Eigen::Index u = 0; u < steps; ++u) {
      scores(t, u) = mask(u) ? std::exp(scores(t, u) - top) : Scalar(0);
      total += scores(t, u);
    }
    const Scalar inv = Scalar(1) / total;
    for (Eigen::Index u = 0; u < steps; ++u)
      if (mask(u)) scores(t, u) *= inv;
    if (ops) ops->softmax_mults += static_cast<std::uint64_t>(mask.count());
  }
}

}  // namespace detail

/// Per-channel temporal self-attention: channel c attends over its own time
/// series with scalar projections; scores are q_t * k_u with no scaling.
template <typename Scalar>
AttentionResult<Scalar> diagonal_attention(const Matrix<Scalar>& x, const Mask& mask, const Vector<Scalar>& theta_q,
                                           const Vector<Scalar>& theta_k, const Vector<Scalar>& theta_v,
                                           OpCounter* ops = nullptr) {
  require_valid_steps(mask, "diagonal_attention");
  const Eigen::Index steps = x.rows();
  const Eigen::Index concepts = x.cols();
  const auto valid = static_cast<std::uint64_t>(mask.count());
  AttentionResult<Scalar> r;
  r.q = x * theta_q.asDiagonal();
  r.k = x * theta_k.asDiagonal();
  r.v = x * theta_v.asDiagonal();
  if (ops) ops->projection_mults += 3 * valid * static_cast<std::uint64_t>(concepts);
  r.output = Matrix<Scalar>::Zero(steps, concepts);
  r.maps.reserve(static_cast<std::size_t>(concepts));
  for (Eigen::Index c = 0; c < concepts; ++c) {
    Matrix<Scalar> w = r.q.col(c) * r.k.col(c).transpose();
    if (ops) ops->score_mults += valid * valid;
    detail::softmax_rows_inplace(w, mask, ops);
    for (Eigen::Index t = 0; t < steps; ++t) {
      if (!mask(t)) continue;
      Scalar acc(0);
      for (Eigen::Index u = 0; u < steps; ++u)
        if (mask(u)) acc += w(t, u) * r.v(u, c);
      r.output(t, c) = acc;
    }
    if (ops) ops->mix_mults += valid * valid;
    r.maps.push_back(std::move(w));
  }
  return r;
}

template <typename Scalar>
AttentionResult<Scalar> diagonal_attention(const Matrix<Scalar>& x, const Mask& mask, const ModelParams<Scalar>& p,
                                           OpCounter* ops = nullptr) {
  return diagonal_attention(x, mask, p.theta_q, p.theta_k, p.theta_v, ops);
}

/// Standard multi-head attention with dense C x C projections; per-head
/// dimension C/H and score scaling 1/sqrt(C/H). Row convention: the output
/// at step t is W_O * concat_h(head_h(t)).
template <typename Scalar>
AttentionResult<Scalar> full_attention(const Matrix<Scalar>& x, const Mask& mask, const Matrix<Scalar>& wq,
                                       const Matrix<Scalar>& wk, const Matrix<Scalar>& wv, const Matrix<Scalar>& wo,
                                       int heads, OpCounter* ops = nullptr) {
  require_valid_steps(mask, "full_attention");
  const Eigen::Index steps = x.rows();
  const Eigen::Index concepts = x.cols();
  if (heads < 1 || concepts % heads != 0)
    throw ConfigError("full attention: concepts (" + std::to_string(concepts) + ") not divisible by heads (" +
                      std::to_string(heads) + ")");
  if (wq.rows() != concepts || wq.cols() != concepts) throw InputError("full attention: projection shape mismatch");
  const Eigen::Index dim = concepts / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dim));
  const auto valid = static_cast<std::uint64_t>(mask.count());
  AttentionResult<Scalar> r;
  r.q = x * wq.transpose();
  r.k = x * wk.transpose();
  r.v = x * wv.transpose();
  r.mixed = Matrix<Scalar>::Zero(steps, concepts);
  for (int h = 0; h < heads; ++h) {
    const auto qh = r.q.middleCols(h * dim, dim);
    const auto kh = r.k.middleCols(h * dim, dim);
    Matrix<Scalar> w = (qh * kh.transpose()) * scale;
    if (ops) ops->score_mults += valid * valid * static_cast<std::uint64_t>(dim);
    detail::softmax_rows_inplace(w, mask, ops);
    r.mixed.middleCols(h * dim, dim) = w * r.v.middleCols(h * dim, dim);
    if (ops) ops->mix_mults += valid * valid * static_cast<std::uint64_t>(dim);
    r.maps.push_back(std::move(w));
  }
  for (Eigen::Index t = 0; t < steps; ++t)
    if (!mask(t)) r.mixed.row(t).setZero();
  r.output = r.mixed * wo.transpose();
  if (ops) ops->projection_mults += 4 * valid * static_cast<std::uint64_t>(concepts * concepts);
  return r;
}

template <typename Scalar>
AttentionResult<Scalar> full_attention(const Matrix<Scalar>& x, const Mask& mask, const ModelParams<Scalar>& p,
                                       OpCounter* ops = nullptr) {
  return full_attention(x, mask, p.wq, p.wk, p.wv, p.wo, p.config.heads, ops);
}

// ---------------------------------------------------------------------------
// Block

template <typename Scalar>
struct BlockCache {
  NormCache<Scalar> norm1, norm2;
  Matrix<Scalar> normed1;      // Norm1(X)
  AttentionResult<Scalar> attention;
  Matrix<Scalar> after_attention;  // X1
  Matrix<Scalar> normed2;      // Norm2(X1)
  Matrix<Scalar> hidden;       // w1 * Norm2(X1) + b1
  Matrix<Scalar> activated;    // GELU(hidden) after dropout
  Matrix<Scalar> keep;         // dropout multipliers (0 or 1/(1-p)); empty when inactive
};

/// Draws inverted-dropout multipliers over valid rows, column by column.
template <typename Scalar>
Matrix<Scalar> dropout_keep(Eigen::Index steps, Eigen::Index concepts, const Mask& mask, double rate,
                            std::uint64_t seed) {
  Matrix<Scalar> keep = Matrix<Scalar>::Zero(steps, concepts);
  std::mt19937_64 rng(seed);
  const Scalar survive = static_cast<Scalar>(1.0 / (1.0 - rate));
  for (Eigen::Index c = 0; c < concepts; ++c)
    for (Eigen::Index t = 0; t < steps; ++t) {
      if (!mask(t)) continue;
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      keep(t, c) = u < rate ? Scalar(0) : survive;
    }
  return keep;
}

/// X1 = X + Attn(Norm1(X)); X_L = X1 + FFN(Norm2(X1)). With residual off the
/// skip terms are dropped. `dropout_seed` set means training mode.
template <typename Scalar>
Matrix<Scalar> block_forward(const Matrix<Scalar>& x, const Mask& mask, const ModelParams<Scalar>& p,
                             std::optional<std::uint64_t> dropout_seed, BlockCache<Scalar>& cache,
                             OpCounter* ops = nullptr) {
  const ModelConfig& cfg = p.config;
  cache.normed1 = block_norm(cfg.norm, x, mask, p.norm1_scale, p.norm1_shift, &cache.norm1);
  cache.attention = cfg.variant == AttentionVariant::diagonal ? diagonal_attention(cache.normed1, mask, p, ops)
                                                              : full_attention(cache.normed1, mask, p, ops);
  cache.after_attention = cache.attention.output;
  if (cfg.residual) cache.after_attention += x;
  cache.normed2 = block_norm(cfg.norm, cache.after_attention, mask, p.norm2_scale, p.norm2_shift, &cache.norm2);
  cache.hidden = (cache.normed2 * p.ffn_w1.asDiagonal()).rowwise() + p.ffn_b1.transpose();
  cache.activated = cache.hidden.unaryExpr([](Scalar h) { return gelu(h); });
  cache.keep.resize(0, 0);
  if (dropout_seed && cfg.dropout > 0.0) {
    cache.keep = dropout_keep<Scalar>(x.rows(), x.cols(), mask, cfg.dropout, *dropout_seed);
    cache.activated = cache.activated.cwiseProduct(cache.keep);
  }
  Matrix<Scalar> out = (cache.activated * p.ffn_w2.asDiagonal()).rowwise() + p.ffn_b2.transpose();
  if (cfg.residual) out += cache.after_attention;
  for (Eigen::Index t = 0; t < x.rows(); ++t)
    if (!mask(t)) {
      out.row(t).setZero();
      cache.hidden.row(t).setZero();
      cache.activated.row(t).setZero();
    }
  return out;
}

// ---------------------------------------------------------------------------
// Bottleneck, head, pooling

/// Z = Softplus(gamma * X_L + delta), or Softplus(X_L) with affine off.
template <typename Scalar>
Matrix<Scalar> bottleneck(const Matrix<Scalar>& x_l, const ModelParams<Scalar>& p) {
  Matrix<Scalar> pre = x_l;
  if (p.config.affine) pre = (x_l * p.gamma.asDiagonal()).rowwise() + p.delta.transpose();
  return pre.unaryExpr([](Scalar v) { return softplus(v); });
}

/// Lowest index among maxima.
template <typename Derived>
int argmax_first(const Eigen::MatrixBase<Derived>& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = static_cast<int>(i);
  return best;
}

template <typename Scalar>
struct ForwardTrace {
  Mask mask;
  Matrix<Scalar> x_in;            // T x C
  BlockCache<Scalar> block;
  Matrix<Scalar> x_l;             // T x C
  Matrix<Scalar> pre_activation;  // gamma * X_L + delta (masked rows 0)
  Matrix<Scalar> z;               // T x C, masked rows 0
  Matrix<Scalar> logits;          // T x K per-step logits, masked rows 0
  Vector<Scalar> pooled_logits;   // K
  Vector<Scalar> pooled_concepts; // C
  int prediction = 0;

  /// C per-concept maps (diagonal) or H head maps (full), each T x T.
  const std::vector<Matrix<Scalar>>& attention() const { return block.attention.maps; }
  Eigen::Index steps() const { return x_in.rows(); }
};

/// Recomputes per-step logits, both pooled vectors and the prediction from
/// trace.z. Used by forward and by bottleneck-level interventions.
template <typename Scalar>
void apply_head(ForwardTrace<Scalar>& trace, const ModelParams<Scalar>& p) {
  trace.logits = (trace.z * p.W.transpose()).rowwise() + p.b.transpose();
  for (Eigen::Index t = 0; t < trace.logits.rows(); ++t)
    if (!trace.mask(t)) trace.logits.row(t).setZero();
  const Scalar tau = static_cast<Scalar>(p.config.tau);
  trace.pooled_logits = lse_pool(trace.logits, trace.mask, tau, p.config.normalized_lse);
  trace.pooled_concepts = lse_pool(trace.z, trace.mask, tau, p.config.normalized_lse);
  trace.prediction = argmax_first(trace.pooled_logits);
}

template <typename Scalar>
ForwardTrace<Scalar> forward(const Matrix<Scalar>& x, const Mask& mask, const ModelParams<Scalar>& p,
                             std::optional<std::uint64_t> dropout_seed = std::nullopt, OpCounter* ops = nullptr) {
  if (x.cols() != p.concepts())
    throw InputError("input has " + std::to_string(x.cols()) + " concepts, model expects " + std::to_string(p.concepts()));
  if (mask.size() != x.rows()) throw InputError("mask length does not match the number of time steps");
  require_valid_steps(mask, "forward");
  p.config.validate(p.concepts());
  ForwardTrace<Scalar> trace;
  trace.mask = mask;
  trace.x_in = x;
  trace.x_l = block_forward(x, mask, p, dropout_seed, trace.block, ops);
  trace.pre_activation = trace.x_l;
  if (p.config.affine) trace.pre_activation = (trace.x_l * p.gamma.asDiagonal()).rowwise() + p.delta.transpose();
  trace.z = trace.pre_activation.unaryExpr([](Scalar v) { return softplus(v); });
  for (Eigen::Index t = 0; t < x.rows(); ++t)
    if (!mask(t)) {
      trace.pre_activation.row(t).setZero();
      trace.z.row(t).setZero();
    }
  apply_head(trace, p);
  return trace;
}

template <typename Scalar>
ForwardTrace<Scalar> forward(const ConceptSequence& sample, const ModelParams<Scalar>& p,
                             std::optional<std::uint64_t> dropout_seed = std::nullopt) {
  return forward<Scalar>(sample.activations.cast<Scalar>(), full_mask(sample.steps()), p, dropout_seed);
}

/// Mixes a base seed with an index; used to give every sample its own
/// dropout stream independent of how the batch is scheduled.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Forward over a padded batch. With a dropout seed, sample b uses
/// derive_seed(seed, b).
template <typename Scalar>
std::vector<ForwardTrace<Scalar>> forward(const PaddedBatch& batch, const ModelParams<Scalar>& p,
                                          std::optional<std::uint64_t> dropout_seed = std::nullopt) {
  std::vector<ForwardTrace<Scalar>> traces(static_cast<std::size_t>(batch.size()));
  parallel_for(traces.size(), [&](std::size_t b) {
    std::optional<std::uint64_t> seed;
    if (dropout_seed) seed = derive_seed(*dropout_seed, b);
    traces[b] = forward<Scalar>(batch.activations[b].cast<Scalar>(), batch.masks[b], p, seed);
  });
  return traces;
}

}  // namespace motif
