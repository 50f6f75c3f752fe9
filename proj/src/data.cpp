#include "motif/data.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "motif/errors.hpp"

namespace motif {

int Dataset::classes() const {
  if (!class_names.empty()) return static_cast<int>(class_names.size());
  int top = -1;
  for (const auto& s : samples) top = std::max(top, s.label);
  return top + 1;
}

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& what) { throw InputError("synthetic spec: " + what); };
  if (classes < 1) fail("classes must be >= 1");
  if (concepts < classes) fail("need concepts >= classes");
  if (min_steps < 1 || max_steps < min_steps) fail("need 1 <= min_steps <= max_steps");
  if (motif_length < 1 || motif_length > min_steps) fail("need 1 <= motif_length <= min_steps");
  if (!(amplitude > 0.0)) fail("amplitude must be > 0");
  if (!(noise_std >= 0.0)) fail("noise_std must be >= 0");
  if (samples_per_class < 0 || test_samples_per_class < 0) fail("sample counts must be >= 0");
  if (distractors < 0) fail("distractors must be >= 0");
  if (distractor_length < 0 || distractor_length > min_steps)
    fail("distractor_length must lie in [0, min_steps]");
}

WindowSelector parse_selector(const std::string& name) {
  if (name == "random") return WindowSelector::random;
  if (name == "first") return WindowSelector::first;
  if (name == "mean") return WindowSelector::mean;
  throw InputError("unknown window selector '" + name + "' (expected random|first|mean)");
}

Eigen::MatrixXd cosine_activations(const Eigen::MatrixXd& frame_embeddings, const ConceptBank& bank) {
  if (!bank.has_vectors()) throw InputError("concept bank has no embedding vectors");
  if (frame_embeddings.cols() != bank.vectors.cols()) {
    throw InputError("embedding dimension " + std::to_string(frame_embeddings.cols()) +
                     " does not match concept bank dimension " + std::to_string(bank.vectors.cols()));
  }
  const Eigen::VectorXd row_norms = frame_embeddings.rowwise().norm();
  for (Eigen::Index n = 0; n < row_norms.size(); ++n) {
    if (!(row_norms(n) > 0.0)) throw InputError("degenerate input: embedding row " + std::to_string(n) + " has zero norm");
  }
  const Eigen::VectorXd bank_norms = bank.vectors.rowwise().norm();
  for (Eigen::Index c = 0; c < bank_norms.size(); ++c) {
    if (!(bank_norms(c) > 0.0)) throw InputError("degenerate input: concept vector " + std::to_string(c) + " has zero norm");
  }
  Eigen::MatrixXd sims = frame_embeddings * bank.vectors.transpose();
  sims.array().colwise() /= row_norms.array();
  sims.array().rowwise() /= bank_norms.transpose().array();
  return sims.cwiseMax(-1.0).cwiseMin(1.0);
}

Eigen::MatrixXd window_embeddings(const Eigen::MatrixXd& frame_embeddings, int window_size,
                                  WindowSelector selector, std::uint64_t seed) {
  if (window_size <= 0) throw InputError("window size must be >= 1");
  const Eigen::Index frames = frame_embeddings.rows();
  if (frames < 1) throw InputError("need at least one frame");
  const Eigen::Index windows = (frames + window_size - 1) / window_size;
  Eigen::MatrixXd out(windows, frame_embeddings.cols());
  std::mt19937_64 rng(seed);
  for (Eigen::Index w = 0; w < windows; ++w) {
    const Eigen::Index begin = w * window_size;
    const Eigen::Index len = std::min<Eigen::Index>(window_size, frames - begin);
    switch (selector) {
      case WindowSelector::first:
        out.row(w) = frame_embeddings.row(begin);
        break;
      case WindowSelector::mean:
        out.row(w) = frame_embeddings.middleRows(begin, len).colwise().mean();
        break;
      case WindowSelector::random: {
        std::uniform_int_distribution<Eigen::Index> pick(0, len - 1);
        out.row(w) = frame_embeddings.row(begin + pick(rng));
        break;
      }
    }
  }
  return out;
}

PaddedBatch pad_batch(const std::vector<const ConceptSequence*>& samples) {
  if (samples.empty()) throw InputError("cannot pad an empty batch");
  const Eigen::Index concepts = samples.front()->concepts();
  Eigen::Index max_steps = 0;
  for (const auto* s : samples) {
    if (s->concepts() != concepts) {
      throw InputError("sample '" + s->id + "' has " + std::to_string(s->concepts()) + " concepts, expected " +
                       std::to_string(concepts));
    }
    if (s->steps() < 1) throw InputError("sample '" + s->id + "' has no time steps");
    max_steps = std::max(max_steps, s->steps());
  }
  PaddedBatch batch;
  batch.activations.reserve(samples.size());
  batch.masks.reserve(samples.size());
  batch.labels.reserve(samples.size());
  for (const auto* s : samples) {
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(max_steps, concepts);
    x.topRows(s->steps()) = s->activations;
    Mask m = Mask::Constant(max_steps, false);
    m.head(s->steps()).setConstant(true);
    batch.activations.push_back(std::move(x));
    batch.masks.push_back(std::move(m));
    batch.labels.push_back(s->label);
  }
  return batch;
}

PaddedBatch pad_batch(const std::vector<ConceptSequence>& samples) {
  std::vector<const ConceptSequence*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return pad_batch(ptrs);
}

std::vector<double> class_weights(const std::vector<int>& labels, int classes) {
  if (classes < 1) throw InputError("class count must be >= 1");
  std::vector<double> counts(static_cast<std::size_t>(classes), 0.0);
  for (int y : labels) {
    if (y < 0 || y >= classes) throw InputError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    counts[static_cast<std::size_t>(y)] += 1.0;
  }
  const double n = static_cast<double>(labels.size());
  std::vector<double> weights(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k) weights[k] = n / (classes * std::max(counts[k], 1.0));
  return weights;
}

namespace {

void fill_split(const SyntheticSpec& spec, const std::vector<int>& class_channels, int per_class,
                const std::string& prefix, std::mt19937_64& rng, Dataset& out,
                std::vector<MotifPlacement>& truth) {
  std::uniform_int_distribution<int> length_dist(spec.min_steps, spec.max_steps);
  std::uniform_int_distribution<int> class_dist(0, spec.classes - 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  const int spread = spec.distractor_length > 0 ? spec.distractor_length : spec.min_steps;
  const double spread_amp = spec.amplitude * spec.motif_length / spread;
  int index = 0;
  for (int k = 0; k < spec.classes; ++k) {
    for (int i = 0; i < per_class; ++i, ++index) {
      const int steps = length_dist(rng);
      Eigen::MatrixXd x(steps, spec.concepts);
      for (Eigen::Index c = 0; c < x.cols(); ++c)
        for (Eigen::Index t = 0; t < x.rows(); ++t) x(t, c) = spec.noise_std > 0.0 ? spec.noise_std * noise(rng) : 0.0;
      const int channel = class_channels[static_cast<std::size_t>(k)];
      std::uniform_int_distribution<int> offset_dist(0, steps - spec.motif_length);
      const int offset = offset_dist(rng);
      x.block(offset, channel, spec.motif_length, 1).array() += spec.amplitude;
      for (int d = 0; d < spec.distractors; ++d) {
        const int dc = class_channels[static_cast<std::size_t>(class_dist(rng))];
        std::uniform_int_distribution<int> doff_dist(0, steps - spread);
        x.block(doff_dist(rng), dc, spread, 1).array() += spread_amp;
      }
      char id[32];
      std::snprintf(id, sizeof id, "%s_%05d", prefix.c_str(), index);
      out.samples.push_back({id, k, std::move(x)});
      truth.push_back({id, k, channel, offset});
    }
  }
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<int> channels(static_cast<std::size_t>(spec.concepts));
  std::iota(channels.begin(), channels.end(), 0);
  std::shuffle(channels.begin(), channels.end(), rng);
  channels.resize(static_cast<std::size_t>(spec.classes));

  SyntheticDataset result;
  result.class_channels = channels;
  std::vector<std::string> names;
  for (int c = 0; c < spec.concepts; ++c) names.push_back("concept_" + std::to_string(c));
  std::vector<std::string> classes;
  for (int k = 0; k < spec.classes; ++k) classes.push_back("class_" + std::to_string(k));
  for (Dataset* d : {&result.train, &result.test}) {
    d->concept_names = names;
    d->class_names = classes;
  }
  fill_split(spec, channels, spec.samples_per_class, "train", rng, result.train, result.truth);
  fill_split(spec, channels, spec.test_samples_per_class, "test", rng, result.test, result.truth);
  return result;
}

void validate_dataset(const Dataset& dataset) {
  const Eigen::Index concepts = dataset.concepts();
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    const std::string where = "sample " + std::to_string(i) + " ('" + s.id + "')";
    if (s.steps() < 1) throw InputError(where + ": activations must have T >= 1");
    if (s.concepts() != concepts) {
      throw InputError(where + ": has " + std::to_string(s.concepts()) + " concepts, expected " + std::to_string(concepts));
    }
    if (!s.activations.allFinite()) throw InputError(where + ": activations contain NaN or Inf");
    if (s.label < 0) throw InputError(where + ": negative label");
    if (!dataset.class_names.empty() && s.label >= static_cast<int>(dataset.class_names.size()))
      throw InputError(where + ": label outside class list");
  }
}

Dataset project_embeddings(const std::vector<EmbeddingRecord>& videos, const ConceptBank& bank,
                           int window_size, WindowSelector selector, std::uint64_t seed) {
  Dataset out;
  out.concept_names = bank.names;
  std::uint64_t index = 0;
  for (const auto& v : videos) {
    // Independent selector stream per video.
    const Eigen::MatrixXd windows = window_embeddings(v.embeddings, window_size, selector, seed + 0x9E3779B97F4A7C15ULL * ++index);
    out.samples.push_back({v.id, v.label, cosine_activations(windows, bank)});
  }
  return out;
}

}  // namespace motif
