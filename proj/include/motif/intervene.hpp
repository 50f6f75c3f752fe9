#pragma once

#include <algorithm>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "motif/explain.hpp"
#include "motif/model.hpp"

namespace motif {

/// Where removed channels are zeroed: in the input activations (before the
/// block) or in Z after the bottleneck.
enum class RemovalSite { input, bottleneck };
/// Channel order for the top-k curve: each sample's own predicted-class
/// attribution, or one dataset-wide order from the mean |attribution|.
enum class ChannelRanking { per_sample, global };

inline const char* to_string(RemovalSite s) { return s == RemovalSite::input ? "input" : "bottleneck"; }
inline const char* to_string(ChannelRanking r) { return r == ChannelRanking::per_sample ? "per-sample" : "global"; }

inline RemovalSite parse_removal_site(const std::string& s) {
  if (s == "input") return RemovalSite::input;
  if (s == "bottleneck") return RemovalSite::bottleneck;
  throw InputError("unknown removal site '" + s + "' (expected input|bottleneck)");
}

inline ChannelRanking parse_ranking(const std::string& s) {
  if (s == "per-sample") return ChannelRanking::per_sample;
  if (s == "global") return ChannelRanking::global;
  throw InputError("unknown channel ranking '" + s + "' (expected per-sample|global)");
}

template <typename Scalar>
ForwardTrace<Scalar> remove_concepts(const Matrix<Scalar>& x, const ModelParams<Scalar>& p,
                                     const std::vector<int>& channels, RemovalSite site = RemovalSite::input) {
  for (int c : channels)
    if (c < 0 || c >= x.cols())
      throw InputError("remove_concepts: channel " + std::to_string(c) + " outside [0, " + std::to_string(x.cols()) + ")");
  const Mask mask = full_mask(x.rows());
  if (site == RemovalSite::input) {
    Matrix<Scalar> edited = x;
    for (int c : channels) edited.col(c).setZero();
    return forward<Scalar>(edited, mask, p);
  }
  ForwardTrace<Scalar> tr = forward<Scalar>(x, mask, p);
  if (channels.empty()) return tr;
  for (int c : channels) tr.z.col(c).setZero();
  apply_head(tr, p);
  return tr;
}

template <typename Scalar>
ForwardTrace<Scalar> remove_concepts(const ConceptSequence& s, const ModelParams<Scalar>& p,
                                     const std::vector<int>& channels, RemovalSite site = RemovalSite::input) {
  return remove_concepts<Scalar>(s.activations.cast<Scalar>(), p, channels, site);
}

/// Deletes the given (0-based) windows, shortening the sequence, and re-runs forward.
template <typename Scalar>
ForwardTrace<Scalar> remove_windows(const ConceptSequence& s, const ModelParams<Scalar>& p, const std::vector<int>& windows) {
  const std::set<int> drop(windows.begin(), windows.end());
  for (int w : drop)
    if (w < 0 || w >= s.steps())
      throw InputError("remove_windows: window " + std::to_string(w) + " outside [0, " + std::to_string(s.steps()) + ")");
  const Eigen::Index kept = s.steps() - static_cast<Eigen::Index>(drop.size());
  if (kept < 1) throw InputError("remove_windows: at least one window must survive");
  Matrix<Scalar> x(kept, s.concepts());
  Eigen::Index row = 0;
  for (Eigen::Index t = 0; t < s.steps(); ++t)
    if (!drop.count(static_cast<int>(t))) x.row(row++) = s.activations.row(t).template cast<Scalar>();
  return forward<Scalar>(x, full_mask(kept), p);
}

struct InterventionRecord {
  std::string id;
  int original_prediction = 0;
  double original_logit = 0;        // pooled logit of the original prediction
  std::vector<int> removal_order;   // channels, most influential first (length k_max)
  std::vector<int> predictions;     // per k = 0..k_max
  std::vector<double> logits;       // pooled logit of the original class, per k
};

struct InterventionReport {
  RemovalSite site = RemovalSite::input;
  ChannelRanking ranking = ChannelRanking::per_sample;
  std::vector<double> retained;  // k -> fraction keeping the original prediction
  std::vector<InterventionRecord> samples;

  bool nonincreasing() const {
    for (std::size_t k = 1; k < retained.size(); ++k)
      if (retained[k] > retained[k - 1]) return false;
    return true;
  }
};

namespace detail {

inline std::vector<int> order_by_magnitude(const Eigen::VectorXd& scores) {
  std::vector<int> idx(static_cast<std::size_t>(scores.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return std::abs(scores(a)) > std::abs(scores(b)); });
  return idx;
}

}  // namespace detail

/// Removes the top-k channels cumulatively for k = 0..k_max and measures
/// agreement with the model's own unablated predictions.
template <typename Scalar>
InterventionReport topk_curve(const Dataset& data, const ModelParams<Scalar>& p, int k_max,
                              ChannelRanking ranking = ChannelRanking::per_sample, RemovalSite site = RemovalSite::input) {
  if (data.samples.empty()) throw InputError("topk_curve: empty dataset");
  if (k_max < 0 || k_max >= p.concepts())
    throw InputError("topk_curve: k_max must lie in [0, C) with C = " + std::to_string(p.concepts()));
  const std::size_t n = data.samples.size();
  InterventionReport report;
  report.site = site;
  report.ranking = ranking;
  report.samples.resize(n);
  std::vector<Eigen::VectorXd> attributions(n);
  parallel_for(n, [&](std::size_t i) {
    const auto tr = forward(data.samples[i], p);
    const auto e = decompose(tr, p, tr.prediction, p.config.tau);
    attributions[i] = e.global.template cast<double>();
    auto& rec = report.samples[i];
    rec.id = data.samples[i].id;
    rec.original_prediction = tr.prediction;
    rec.original_logit = static_cast<double>(tr.pooled_logits(tr.prediction));
  });
  std::vector<int> shared_order;
  if (ranking == ChannelRanking::global) {
    Eigen::VectorXd mean_abs = Eigen::VectorXd::Zero(p.concepts());
    for (const auto& a : attributions) mean_abs += a.cwiseAbs();
    shared_order = detail::order_by_magnitude(mean_abs / static_cast<double>(n));
  }
  parallel_for(n, [&](std::size_t i) {
    auto& rec = report.samples[i];
    std::vector<int> order = ranking == ChannelRanking::global ? shared_order : detail::order_by_magnitude(attributions[i]);
    order.resize(static_cast<std::size_t>(k_max));
    rec.removal_order = order;
    for (int k = 0; k <= k_max; ++k) {
      const std::vector<int> removed(order.begin(), order.begin() + k);
      const auto tr = remove_concepts(data.samples[i], p, removed, site);
      rec.predictions.push_back(tr.prediction);
      rec.logits.push_back(static_cast<double>(tr.pooled_logits(rec.original_prediction)));
    }
  });
  for (int k = 0; k <= k_max; ++k) {
    std::size_t same = 0;
    for (const auto& rec : report.samples) same += rec.predictions[static_cast<std::size_t>(k)] == rec.original_prediction;
    report.retained.push_back(static_cast<double>(same) / static_cast<double>(n));
  }
  return report;
}

}  // namespace motif
