#pragma once

// Prediction decomposition for a trained model: per-step concept
// contributions c_t = Z_t .* W_k, scores s_t = sum_c c_t + b_k, temporal
// weights pi (softmax over valid steps) and global attributions sum_t pi_t c_t.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "motif/model.hpp"

namespace motif {

/// How the temperature enters the temporal weights. `scaled` is
/// pi ∝ exp(tau * s), matching the pooling (larger tau sharpens);
/// `divided` is pi ∝ exp(s / tau).
enum class TemporalWeighting { scaled, divided };

struct ExplainOptions {
  int top_windows = 3;
  int top_concepts = 5;
  TemporalWeighting weighting = TemporalWeighting::scaled;
  std::optional<double> tau;  // defaults to the model's tau
};

template <typename Scalar>
struct Explanation {
  int target_class = 0;
  Matrix<Scalar> contributions;  // T x C
  Vector<Scalar> scores;         // T
  Vector<Scalar> pi;             // T, zero on masked steps
  Vector<Scalar> global;         // C
  Mask mask;
};

struct ConceptValue {
  int concept_index = 0;
  double value = 0;
};

struct LocalWindow {
  int step = 0;
  double weight = 0;
  std::vector<ConceptValue> concepts;  // largest |c_{t,c}| first
};

template <typename Scalar>
struct ExplanationViews {
  Explanation<Scalar> explanation;
  std::vector<LocalWindow> local;         // highest-pi windows first
  std::vector<ConceptValue> global_top;   // largest |global| first, signed
};

/// Softmax over valid steps of tau*s (or s/tau).
template <typename Scalar>
Vector<Scalar> temporal_weights(const Vector<Scalar>& scores, const Mask& mask, double tau,
                                TemporalWeighting weighting = TemporalWeighting::scaled) {
  if (!(tau > 0.0)) throw InputError("temporal weights: tau must be > 0");
  const Scalar factor = static_cast<Scalar>(weighting == TemporalWeighting::scaled ? tau : 1.0 / tau);
  Matrix<Scalar> column = scores;
  return masked_softmax_columns(column, mask, factor).col(0);
}

namespace detail {

template <typename Scalar>
std::vector<ConceptValue> top_by_magnitude(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& values, int count) {
  std::vector<int> idx(static_cast<std::size_t>(values.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return std::abs(values(a)) > std::abs(values(b)); });
  idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(std::max(count, 0))));
  std::vector<ConceptValue> out;
  for (int i : idx) out.push_back({i, static_cast<double>(values(i))});
  return out;
}

}  // namespace detail

template <typename Scalar>
Explanation<Scalar> decompose(const ForwardTrace<Scalar>& trace, const ModelParams<Scalar>& p, int target_class,
                              double tau, TemporalWeighting weighting = TemporalWeighting::scaled) {
  if (target_class < 0 || target_class >= p.classes())
    throw InputError("explain: class " + std::to_string(target_class) + " outside [0, " + std::to_string(p.classes()) + ")");
  if (trace.z.cols() != p.concepts()) throw InputError("explain: trace does not match the model");
  Explanation<Scalar> e;
  e.target_class = target_class;
  e.mask = trace.mask;
  e.contributions = trace.z * p.W.row(target_class).transpose().asDiagonal();
  // Left-to-right so s_t is bitwise the sum as written.
  e.scores = Vector<Scalar>::Zero(e.contributions.rows());
  for (Eigen::Index t = 0; t < e.scores.size(); ++t) {
    if (!trace.mask(t)) continue;
    Scalar s(0);
    for (Eigen::Index c = 0; c < e.contributions.cols(); ++c) s += e.contributions(t, c);
    e.scores(t) = s + p.b(target_class);
  }
  e.pi = temporal_weights(e.scores, trace.mask, tau, weighting);
  e.global = e.contributions.transpose() * e.pi;
  return e;
}

/// Global, local and temporal views for one class.
template <typename Scalar>
ExplanationViews<Scalar> explain(const ForwardTrace<Scalar>& trace, const ModelParams<Scalar>& p, int target_class,
                                 const ExplainOptions& opt = {}) {
  ExplanationViews<Scalar> v;
  v.explanation = decompose(trace, p, target_class, opt.tau.value_or(p.config.tau), opt.weighting);
  const auto& e = v.explanation;
  std::vector<int> steps;
  for (Eigen::Index t = 0; t < e.pi.size(); ++t)
    if (e.mask(t)) steps.push_back(static_cast<int>(t));
  std::stable_sort(steps.begin(), steps.end(), [&](int a, int b) { return e.pi(a) > e.pi(b); });
  steps.resize(std::min<std::size_t>(steps.size(), static_cast<std::size_t>(std::max(opt.top_windows, 0))));
  for (int t : steps) {
    const Vector<Scalar> row = e.contributions.row(t).transpose();
    v.local.push_back({t, static_cast<double>(e.pi(t)), detail::top_by_magnitude(row, opt.top_concepts)});
  }
  v.global_top = detail::top_by_magnitude(e.global, opt.top_concepts);
  return v;
}

/// Shannon entropy in nats, 0 ln 0 = 0.
template <typename Derived>
double entropy(const Eigen::MatrixBase<Derived>& probs) {
  double total = 0.0, h = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const double p = static_cast<double>(probs(i));
    if (p < -1e-12) throw InputError("entropy: negative probability");
    total += p;
    if (p > 0.0) h -= p * std::log(p);
  }
  if (std::abs(total - 1.0) > 1e-6) throw InputError("entropy: probabilities sum to " + std::to_string(total));
  return h;
}

template <typename Scalar>
struct AttentionMapView {
  Matrix<Scalar> map;                    // rows: query t, columns: key u
  bool concept_attribution_lost = false; // head map of the full variant
};

/// Map of concept c (diagonal variant) or head c (full variant).
template <typename Scalar>
AttentionMapView<Scalar> attention_map(const ForwardTrace<Scalar>& trace, const ModelConfig& config, int index) {
  const auto& maps = trace.attention();
  if (index < 0 || index >= static_cast<int>(maps.size()))
    throw InputError("attention map index " + std::to_string(index) + " outside [0, " + std::to_string(maps.size()) + ")");
  return {maps[static_cast<std::size_t>(index)], config.variant == AttentionVariant::full};
}

/// Rescales a map to [0, 1] by its maximum (all-zero maps stay zero).
template <typename Scalar>
Matrix<Scalar> heatmap_grid(const Matrix<Scalar>& map) {
  const Scalar top = map.size() ? map.maxCoeff() : Scalar(0);
  return top > Scalar(0) ? Matrix<Scalar>(map / top) : map;
}

/// Mean over concepts of the entropy of softmax_t(tau * Z[:, c]).
template <typename Scalar>
double concept_entropy(const ForwardTrace<Scalar>& trace, double tau, TemporalWeighting weighting) {
  const Scalar factor = static_cast<Scalar>(weighting == TemporalWeighting::scaled ? tau : 1.0 / tau);
  const Matrix<Scalar> probs = masked_softmax_columns(trace.z, trace.mask, factor);
  double acc = 0.0;
  for (Eigen::Index c = 0; c < probs.cols(); ++c) acc += entropy(probs.col(c));
  return acc / static_cast<double>(probs.cols());
}

struct TauSweepRow {
  double tau = 0;
  double accuracy = 0;
  double concept_entropy = 0;  // mean over samples
  double logit_entropy = 0;    // mean over samples
};

struct TauSweep {
  std::vector<TauSweepRow> rows;
  Eigen::MatrixXd sample_logit_entropy;    // N x G
  Eigen::MatrixXd sample_concept_entropy;  // N x G
  std::vector<int> reference_predictions;  // predictions at the model's tau
};

/// Re-pools and re-explains at each tau without retraining. The explained
/// class is the prediction at the model's own tau, held fixed across the grid.
template <typename Scalar>
TauSweep tau_sweep(const Dataset& data, const ModelParams<Scalar>& p, const std::vector<double>& grid,
                   TemporalWeighting weighting = TemporalWeighting::scaled) {
  if (data.samples.empty()) throw InputError("tau sweep: empty dataset");
  for (double tau : grid)
    if (!(tau > 0.0)) throw InputError("tau sweep: grid values must be > 0");
  const std::size_t n = data.samples.size();
  const auto g = static_cast<Eigen::Index>(grid.size());
  TauSweep out;
  out.sample_logit_entropy.resize(static_cast<Eigen::Index>(n), g);
  out.sample_concept_entropy.resize(static_cast<Eigen::Index>(n), g);
  out.reference_predictions.resize(n);
  Eigen::MatrixXi correct(static_cast<Eigen::Index>(n), g);
  parallel_for(n, [&](std::size_t i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const auto tr = forward(data.samples[i], p);
    out.reference_predictions[i] = tr.prediction;
    for (Eigen::Index j = 0; j < g; ++j) {
      const double tau = grid[static_cast<std::size_t>(j)];
      const Vector<Scalar> pooled = lse_pool(tr.logits, tr.mask, static_cast<Scalar>(tau), p.config.normalized_lse);
      correct(ii, j) = argmax_first(pooled) == data.samples[i].label;
      const auto e = decompose(tr, p, tr.prediction, tau, weighting);
      out.sample_logit_entropy(ii, j) = entropy(e.pi);
      out.sample_concept_entropy(ii, j) = concept_entropy(tr, tau, weighting);
    }
  });
  for (Eigen::Index j = 0; j < g; ++j) {
    out.rows.push_back({grid[static_cast<std::size_t>(j)], correct.col(j).cast<double>().mean(),
                        out.sample_concept_entropy.col(j).mean(), out.sample_logit_entropy.col(j).mean()});
  }
  return out;
}

}  // namespace motif
