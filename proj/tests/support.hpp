#pragma once

// Shared fixtures and reference implementations for the test suites. The
// references are deliberately naive (explicit loops, no Eigen expressions)
// so they share no code with the library.

#include <cmath>
#include <random>
#include <vector>

#include "motif/gradients.hpp"
#include "motif/model.hpp"

namespace motif::fixtures {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline Mask prefix_mask(Eigen::Index steps, Eigen::Index valid) {
  Mask m = Mask::Constant(steps, false);
  m.head(valid).setConstant(true);
  return m;
}

/// Every tensor filled with O(1) noise so no gradient path is trivially dead.
inline ModelParams<double> random_params(Eigen::Index concepts, Eigen::Index classes, const ModelConfig& config,
                                         std::mt19937_64& rng) {
  ModelParams<double> p = ModelParams<double>::zeros(concepts, classes, config);
  std::normal_distribution<double> n(0.0, 0.5);
  for_each_tensor(
      [&](const TensorSlot&, auto& t) {
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = n(rng);
      },
      p);
  p.norm1_scale.array() += 1.0;
  p.norm2_scale.array() += 1.0;
  return p;
}

/// Batch of B samples with lengths drawn in [1, max_steps]; with `ragged`
/// off every sample has max_steps steps.
inline PaddedBatch random_batch(std::mt19937_64& rng, int batch, int max_steps, Eigen::Index concepts, int classes,
                                bool ragged) {
  std::vector<ConceptSequence> samples;
  std::uniform_int_distribution<int> len(1, max_steps), label(0, classes - 1);
  for (int b = 0; b < batch; ++b) {
    ConceptSequence s;
    s.id = "b" + std::to_string(b);
    s.label = label(rng);
    const int steps = ragged ? (b == 0 ? max_steps : len(rng)) : max_steps;
    s.activations = random_matrix(rng, steps, concepts);
    samples.push_back(std::move(s));
  }
  return pad_batch(samples);
}

// --- reference attention -----------------------------------------------------

inline std::vector<MatrixXd> naive_softmax_rows(const std::vector<MatrixXd>& scores, const Mask& mask) {
  std::vector<MatrixXd> out;
  for (const auto& s : scores) {
    MatrixXd p = MatrixXd::Zero(s.rows(), s.cols());
    for (Eigen::Index t = 0; t < s.rows(); ++t) {
      if (!mask(t)) continue;
      double top = -INFINITY;
      for (Eigen::Index u = 0; u < s.cols(); ++u)
        if (mask(u) && s(t, u) > top) top = s(t, u);
      double total = 0;
      for (Eigen::Index u = 0; u < s.cols(); ++u)
        if (mask(u)) total += std::exp(s(t, u) - top);
      for (Eigen::Index u = 0; u < s.cols(); ++u)
        if (mask(u)) p(t, u) = std::exp(s(t, u) - top) / total;
    }
    out.push_back(p);
  }
  return out;
}

struct NaiveAttention {
  MatrixXd output;
  std::vector<MatrixXd> maps;
};

inline NaiveAttention naive_diagonal(const MatrixXd& x, const Mask& mask, const VectorXd& tq, const VectorXd& tk,
                                     const VectorXd& tv) {
  const auto T = x.rows(), C = x.cols();
  std::vector<MatrixXd> scores;
  for (Eigen::Index c = 0; c < C; ++c) {
    MatrixXd s(T, T);
    for (Eigen::Index t = 0; t < T; ++t)
      for (Eigen::Index u = 0; u < T; ++u) s(t, u) = (tq(c) * x(t, c)) * (tk(c) * x(u, c));
    scores.push_back(s);
  }
  NaiveAttention r{MatrixXd::Zero(T, C), naive_softmax_rows(scores, mask)};
  for (Eigen::Index c = 0; c < C; ++c)
    for (Eigen::Index t = 0; t < T; ++t)
      for (Eigen::Index u = 0; u < T; ++u) r.output(t, c) += r.maps[c](t, u) * tv(c) * x(u, c);
  return r;
}

inline NaiveAttention naive_full(const MatrixXd& x, const Mask& mask, const MatrixXd& wq, const MatrixXd& wk,
                                 const MatrixXd& wv, const MatrixXd& wo, int heads) {
  const auto T = x.rows(), C = x.cols(), d = C / heads;
  auto project = [&](const MatrixXd& w) {
    MatrixXd out = MatrixXd::Zero(T, C);
    for (Eigen::Index t = 0; t < T; ++t)
      for (Eigen::Index i = 0; i < C; ++i)
        for (Eigen::Index j = 0; j < C; ++j) out(t, i) += w(i, j) * x(t, j);
    return out;
  };
  const MatrixXd q = project(wq), k = project(wk), v = project(wv);
  std::vector<MatrixXd> scores;
  for (int h = 0; h < heads; ++h) {
    MatrixXd s = MatrixXd::Zero(T, T);
    for (Eigen::Index t = 0; t < T; ++t)
      for (Eigen::Index u = 0; u < T; ++u)
        for (Eigen::Index j = h * d; j < (h + 1) * d; ++j) s(t, u) += q(t, j) * k(u, j) / std::sqrt(double(d));
    scores.push_back(s);
  }
  NaiveAttention r{MatrixXd::Zero(T, C), naive_softmax_rows(scores, mask)};
  MatrixXd mixed = MatrixXd::Zero(T, C);
  for (int h = 0; h < heads; ++h)
    for (Eigen::Index t = 0; t < T; ++t)
      for (Eigen::Index u = 0; u < T; ++u)
        for (Eigen::Index j = h * d; j < (h + 1) * d; ++j) mixed(t, j) += r.maps[h](t, u) * v(u, j);
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index i = 0; i < C; ++i)
      for (Eigen::Index j = 0; j < C; ++j) r.output(t, i) += wo(i, j) * mixed(t, j);
  return r;
}

/// (1/tau) log((1/n) sum_t m_t exp(tau v_t)), by direct summation.
inline double naive_lse(const std::vector<double>& v, const std::vector<int>& mask, double tau, bool normalized) {
  double total = 0;
  int n = 0;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (mask[i]) {
      total += std::exp(tau * v[i]);
      ++n;
    }
  return std::log(normalized ? total / n : total) / tau;
}

// --- finite differences ------------------------------------------------------

struct GradientCheck {
  double worst_relative_error = 0;
  std::string worst_tensor;
  int entries = 0;
};

/// Central differences of the total loss, one entry at a time. Relative error
/// is |a - n| / max(|a|, |n|, floor).
inline GradientCheck check_gradients(const PaddedBatch& batch, const ModelParams<double>& p,
                                     const std::vector<double>& weights, const Regularization& reg,
                                     double step = 1e-5, double floor = 1e-4) {
  const auto analytic = gradients<double>(batch, p, weights, reg, std::nullopt).gradient;
  GradientCheck out;
  ModelParams<double> probe = p;
  ModelParams<double> grads = analytic;
  for_each_tensor(
      [&](const TensorSlot& slot, auto& t, auto& g) {
        for (Eigen::Index i = 0; i < t.size(); ++i) {
          const double saved = t.data()[i];
          t.data()[i] = saved + step;
          const double up = loss<double>(batch, probe, weights, reg).total();
          t.data()[i] = saved - step;
          const double down = loss<double>(batch, probe, weights, reg).total();
          t.data()[i] = saved;
          const double numeric = (up - down) / (2 * step);
          const double a = g.data()[i];
          const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
          ++out.entries;
          if (rel > out.worst_relative_error) {
            out.worst_relative_error = rel;
            out.worst_tensor = slot.name;
          }
        }
      },
      probe, grads);
  return out;
}

}  // namespace motif::fixtures
