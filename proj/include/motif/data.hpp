#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "motif/types.hpp"

namespace motif {

/// One sample: a T x C matrix of concept activations (rows are windows).
struct ConceptSequence {
  std::string id;
  int label = 0;
  Eigen::MatrixXd activations;

  Eigen::Index steps() const { return activations.rows(); }
  Eigen::Index concepts() const { return activations.cols(); }
};

/// A set of sequences sharing one concept vocabulary.
struct Dataset {
  std::vector<std::string> concept_names;
  std::vector<std::string> class_names;  // optional; may be empty
  std::vector<ConceptSequence> samples;

  Eigen::Index concepts() const { return static_cast<Eigen::Index>(concept_names.size()); }
  /// Number of classes: class_names.size() when given, else 1 + max label.
  int classes() const;
};

struct ConceptBank {
  std::vector<std::string> names;
  Eigen::MatrixXd vectors;  // C x D, rows unit norm; may be empty

  bool has_vectors() const { return vectors.size() > 0; }
};

/// B samples stacked to a common length. Padded rows are exactly zero.
struct PaddedBatch {
  std::vector<Eigen::MatrixXd> activations;  // B entries, each T_max x C
  std::vector<Mask> masks;                   // B entries, each length T_max
  std::vector<int> labels;

  Eigen::Index size() const { return static_cast<Eigen::Index>(labels.size()); }
  Eigen::Index max_steps() const { return activations.empty() ? 0 : activations.front().rows(); }
};

/// Planted-motif generator parameters.
///
/// Every class k owns a concept channel c_k. A class-k sample carries an
/// additive bump of amplitude `amplitude` on c_k over `motif_length`
/// consecutive windows at a random offset. Optional distractor bumps are
/// placed on class channels drawn independently of the label; each has the
/// same area as a motif but is spread over `distractor_length` windows, so
/// temporal means cannot separate it from a true motif.
struct SyntheticSpec {
  int classes = 5;
  int concepts = 20;
  int min_steps = 10;
  int max_steps = 20;
  int motif_length = 4;
  double amplitude = 3.0;
  double noise_std = 0.5;
  int samples_per_class = 60;
  int test_samples_per_class = 0;
  int distractors = 0;
  int distractor_length = 0;  // 0 selects min_steps
  std::uint64_t seed = 42;

  void validate() const;
};

struct MotifPlacement {
  std::string id;
  int label = 0;
  int channel = 0;
  int offset = 0;
};

struct SyntheticDataset {
  Dataset train;
  Dataset test;
  std::vector<int> class_channels;     // class -> planted channel
  std::vector<MotifPlacement> truth;   // train samples first, then test
};

enum class WindowSelector { random, first, mean };

WindowSelector parse_selector(const std::string& name);

/// Cosine similarity of each embedding row with each bank vector (N x C).
Eigen::MatrixXd cosine_activations(const Eigen::MatrixXd& frame_embeddings, const ConceptBank& bank);

/// One representative row per window of `window_size` frames; the last
/// window may be partial.
Eigen::MatrixXd window_embeddings(const Eigen::MatrixXd& frame_embeddings, int window_size,
                                  WindowSelector selector, std::uint64_t seed = 0);

PaddedBatch pad_batch(const std::vector<ConceptSequence>& samples);
PaddedBatch pad_batch(const std::vector<const ConceptSequence*>& samples);

/// Inverse-frequency weights N / (K * max(N_k, 1)).
std::vector<double> class_weights(const std::vector<int>& labels, int classes);

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

/// Checks T >= 1, finite values, a shared C and labels >= 0.
void validate_dataset(const Dataset& dataset);

// JSON Lines persistence. The first record carries "concepts" (and
// optionally "classes"); every record carries id, label and activations.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

struct EmbeddingRecord {
  std::string id;
  int label = 0;
  Eigen::MatrixXd embeddings;  // M x D frame embeddings
};

std::vector<EmbeddingRecord> load_embeddings(const std::filesystem::path& path);
/// Rows are normalized to unit length on load; zero vectors are rejected.
ConceptBank load_concept_bank(const std::filesystem::path& path);

/// Windows each video and projects it onto the bank.
Dataset project_embeddings(const std::vector<EmbeddingRecord>& videos, const ConceptBank& bank,
                           int window_size, WindowSelector selector, std::uint64_t seed);

}  // namespace motif
