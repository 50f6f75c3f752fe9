#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "motif/adamw.hpp"
#include "motif/gradients.hpp"
#include "motif/model.hpp"

namespace motif {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double weight_decay = 1e-2;
  double tau = 1.0;
  double lambda_l1 = 1e-3;
  double lambda_sparse = 1e-3;
  bool nonneg_W = true;
  std::uint64_t seed = 42;
  AttentionVariant variant = AttentionVariant::diagonal;
  std::optional<NormMode> norm;  // unset: temporal for diagonal, token for full
  int heads = 1;
  bool residual = true;
  bool affine = true;
  double dropout_rate = 0.1;
  bool normalized_lse = true;
  bool single_precision = false;

  ModelConfig model_config() const {
    ModelConfig m;
    m.variant = variant;
    m.norm = norm.value_or(variant == AttentionVariant::diagonal ? NormMode::temporal : NormMode::token);
    m.heads = heads;
    m.tau = tau;
    m.affine = affine;
    m.residual = residual;
    m.dropout = dropout_rate;
    m.normalized_lse = normalized_lse;
    return m;
  }
  Regularization regularization() const { return {lambda_l1, lambda_sparse}; }
  AdamWOptions optimizer() const {
    AdamWOptions o;
    o.learning_rate = learning_rate;
    o.weight_decay = weight_decay;
    o.nonneg_W = nonneg_W;
    return o;
  }

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(weight_decay >= 0.0) || !(lambda_l1 >= 0.0) || !(lambda_sparse >= 0.0))
      throw ConfigError("weight_decay and penalties must be >= 0");
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
    if (heads < 1) throw ConfigError("heads must be >= 1");
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0, cross_entropy = 0, l1 = 0, sparsity = 0;
  double train_accuracy = 0, test_accuracy = 0;
  double seconds = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // selected on test accuracy
  double best_test_accuracy = 0;
  double final_test_accuracy = 0;
  double final_train_accuracy = 0;
  double seconds = 0;
};

template <typename Scalar>
struct FitResult {
  ModelParams<Scalar> final_params;
  ModelParams<Scalar> best_params;
  TrainReport report;
};

/// Thrown when the loss or parameters stop being finite. Carries the epochs
/// completed so far.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, TrainReport partial) : NumericalError(what), report(std::move(partial)) {}
  TrainReport report;
};

struct EvalResult {
  double accuracy = 0;
  Eigen::MatrixXi confusion;  // rows: true class, columns: predicted
  std::vector<int> predictions;
};

template <typename Scalar>
EvalResult evaluate(const Dataset& data, const ModelParams<Scalar>& p) {
  if (data.samples.empty()) throw InputError("evaluate: empty dataset");
  if (data.concepts() != p.concepts()) throw InputError("evaluate: dataset concept count does not match the model");
  const Eigen::Index classes = p.classes();
  EvalResult r;
  r.predictions.resize(data.samples.size());
  parallel_for(data.samples.size(), [&](std::size_t i) { r.predictions[i] = forward(data.samples[i], p).prediction; });
  r.confusion = Eigen::MatrixXi::Zero(classes, classes);
  int correct = 0;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const int y = data.samples[i].label;
    if (y >= classes) throw InputError("evaluate: label " + std::to_string(y) + " exceeds model classes");
    r.confusion(y, r.predictions[i]) += 1;
    correct += y == r.predictions[i];
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.samples.size());
  return r;
}

namespace detail {

inline void check_splits(const Dataset& train, const Dataset& test) {
  if (train.samples.empty()) throw InputError("fit: empty training set");
  validate_dataset(train);
  validate_dataset(test);
  if (!test.samples.empty() && test.concepts() != train.concepts())
    throw InputError("fit: train and test sets have different concept counts");
  if (!test.samples.empty() && test.concept_names != train.concept_names)
    throw InputError("fit: train and test sets have different concept names");
}

inline int class_count(const Dataset& train, const Dataset& test) {
  return std::max(train.classes(), test.samples.empty() ? 0 : test.classes());
}

template <typename Scalar>
bool all_finite(const ModelParams<Scalar>& p) {
  bool ok = true;
  ModelParams<Scalar> copy = p;
  for_each_tensor([&](const TensorSlot&, auto& t) { ok = ok && t.allFinite(); }, copy);
  return ok;
}

}  // namespace detail

using EpochCallback = std::function<void(const EpochRecord&)>;

/// A batch loss this many times the first batch loss counts as divergence.
/// Every operation is overflow-safe, so a runaway loss can stay finite.
inline constexpr double kDivergenceFactor = 1e6;

/// Minibatch AdamW training. Deterministic given config.seed: the shuffle
/// stream and every dropout mask derive from it.
template <typename Scalar>
FitResult<Scalar> fit(const Dataset& train, const Dataset& test, const TrainConfig& config,
                      const EpochCallback& on_epoch = {}) {
  config.validate();
  detail::check_splits(train, test);
  const int classes = detail::class_count(train, test);
  const ModelConfig model_config = config.model_config();
  model_config.validate(train.concepts());

  FitResult<Scalar> result{init_params<Scalar>(train.concepts(), classes, model_config, config.seed, config.nonneg_W),
                           {}, {}};
  ModelParams<Scalar>& params = result.final_params;
  result.best_params = params;
  AdamState<Scalar> state = AdamState<Scalar>::like(params);
  const AdamWOptions opt = config.optimizer();
  const Regularization reg = config.regularization();

  std::vector<int> labels;
  for (const auto& s : train.samples) labels.push_back(s.label);
  const std::vector<double> weights = class_weights(labels, classes);

  std::vector<std::size_t> order(train.samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 shuffle_rng(derive_seed(config.seed, 0x5eed));
  const auto start = std::chrono::steady_clock::now();
  double best = -1.0;
  double first_loss = -1.0;
  TrainReport& report = result.report;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    const std::uint64_t epoch_seed = derive_seed(config.seed, static_cast<std::uint64_t>(epoch));
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size), ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      std::vector<const ConceptSequence*> members;
      for (std::size_t i = begin; i < end; ++i) members.push_back(&train.samples[order[i]]);
      const PaddedBatch batch = pad_batch(members);
      std::optional<std::uint64_t> dropout_seed;
      if (config.dropout_rate > 0.0) dropout_seed = derive_seed(epoch_seed, batch_index);
      LossAndGradient<Scalar> lg;
      try {
        lg = gradients(batch, params, weights, reg, dropout_seed);
      } catch (const NumericalError& e) {
        report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what(), report);
      }
      const double batch_loss = static_cast<double>(lg.terms.total());
      if (first_loss < 0.0) first_loss = std::max(batch_loss, 1e-3);
      if (!std::isfinite(batch_loss) || batch_loss > kDivergenceFactor * first_loss) {
        report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": batch loss " +
                                  std::to_string(batch_loss) + " against initial " + std::to_string(first_loss) +
                                  "; parameter norms:" + detail::parameter_norms(params),
                              report);
      }
      const double share = static_cast<double>(end - begin) / static_cast<double>(order.size());
      rec.cross_entropy += share * static_cast<double>(lg.terms.cross_entropy);
      rec.l1 += share * static_cast<double>(lg.terms.l1);
      rec.sparsity += share * static_cast<double>(lg.terms.sparsity);
      adamw_step(params, lg.gradient, state, opt);
      if (!detail::all_finite(params)) {
        report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                                  ": non-finite parameters after update; parameter norms:" + detail::parameter_norms(params),
                              report);
      }
    }
    rec.train_loss = rec.cross_entropy + rec.l1 + rec.sparsity;
    rec.train_accuracy = evaluate(train, params).accuracy;
    rec.test_accuracy = test.samples.empty() ? std::numeric_limits<double>::quiet_NaN() : evaluate(test, params).accuracy;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    if (!test.samples.empty() && rec.test_accuracy > best) {
      best = rec.test_accuracy;
      report.best_epoch = epoch;
      result.best_params = params;
    }
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (test.samples.empty()) {
    report.best_epoch = config.epochs;
    result.best_params = params;
  }
  report.best_test_accuracy = test.samples.empty() ? std::numeric_limits<double>::quiet_NaN() : best;
  report.final_test_accuracy = report.epochs.back().test_accuracy;
  report.final_train_accuracy = report.epochs.back().train_accuracy;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// ---------------------------------------------------------------------------
// Baseline: linear softmax probe on per-channel temporal means.

struct ProbeOptions {
  int epochs = 500;  // full-batch steps
  double learning_rate = 1e-2;
};

struct ProbeResult {
  Eigen::MatrixXd W;  // K x C
  Eigen::VectorXd b;
  double train_accuracy = 0;
  double test_accuracy = 0;
};

inline Eigen::MatrixXd temporal_means(const Dataset& data) {
  Eigen::MatrixXd f(static_cast<Eigen::Index>(data.samples.size()), data.concepts());
  for (std::size_t i = 0; i < data.samples.size(); ++i)
    f.row(static_cast<Eigen::Index>(i)) = data.samples[i].activations.colwise().mean();
  return f;
}

inline double probe_accuracy(const ProbeResult& probe, const Dataset& data) {
  if (data.samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  const Eigen::MatrixXd logits = (temporal_means(data) * probe.W.transpose()).rowwise() + probe.b.transpose();
  int correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    correct += argmax_first(logits.row(i).transpose()) == data.samples[static_cast<std::size_t>(i)].label;
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

/// Class-weighted softmax regression fitted full-batch with Adam.
inline ProbeResult fit_mean_probe(const Dataset& train, const Dataset& test, const ProbeOptions& opt = {}) {
  detail::check_splits(train, test);
  const int classes = detail::class_count(train, test);
  const Eigen::MatrixXd x = temporal_means(train);
  const Eigen::Index n = x.rows();
  std::vector<int> labels;
  for (const auto& s : train.samples) labels.push_back(s.label);
  const std::vector<double> weights = class_weights(labels, classes);
  ProbeResult r;
  r.W = Eigen::MatrixXd::Zero(classes, train.concepts());
  r.b = Eigen::VectorXd::Zero(classes);
  Eigen::MatrixXd mW = r.W, vW = r.W;
  Eigen::VectorXd mb = r.b, vb = r.b;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int step = 1; step <= opt.epochs; ++step) {
    Eigen::MatrixXd logits = (x * r.W.transpose()).rowwise() + r.b.transpose();
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, classes);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double top = logits.row(i).maxCoeff();
      Eigen::RowVectorXd pr = (logits.row(i).array() - top).exp();
      pr /= pr.sum();
      const int y = labels[static_cast<std::size_t>(i)];
      pr(y) -= 1.0;
      d.row(i) = pr * (weights[static_cast<std::size_t>(y)] / static_cast<double>(n));
    }
    const Eigen::MatrixXd gW = d.transpose() * x;
    const Eigen::VectorXd gb = d.colwise().sum().transpose();
    const double c1 = 1.0 - std::pow(b1, step), c2 = 1.0 - std::pow(b2, step);
    mW = b1 * mW + (1 - b1) * gW;
    vW = b2 * vW + (1 - b2) * gW.cwiseAbs2();
    mb = b1 * mb + (1 - b1) * gb;
    vb = b2 * vb + (1 - b2) * gb.cwiseAbs2();
    r.W.array() -= opt.learning_rate * (mW.array() / c1) / ((vW.array() / c2).sqrt() + eps);
    r.b.array() -= opt.learning_rate * (mb.array() / c1) / ((vb.array() / c2).sqrt() + eps);
  }
  r.train_accuracy = probe_accuracy(r, train);
  r.test_accuracy = probe_accuracy(r, test);
  return r;
}

}  // namespace motif
