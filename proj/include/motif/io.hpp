#pragma once

// JSON/CSV persistence for configs, checkpoints and reports.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "motif/data.hpp"
#include "motif/explain.hpp"
#include "motif/intervene.hpp"
#include "motif/model.hpp"
#include "motif/train.hpp"

namespace motif {

// Configs reject unknown keys and wrongly typed values with ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& config);
TrainConfig load_train_config(const std::filesystem::path& path);

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticSpec& spec);

/// 16 hex digits of FNV-1a over the canonical (sorted-key) JSON dump.
std::string config_hash(const nlohmann::json& j);

struct Checkpoint {
  ModelParams<double> params;
  std::vector<std::string> concept_names;
  std::vector<std::string> class_names;
  std::string config_hash;
  bool nonneg_W = true;
};

nlohmann::json to_json(const Checkpoint& ckpt);
/// Fails with InputError on unknown or missing fields and on shape mismatches.
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// epoch,train_loss,ce,l1,sparse,train_acc,test_acc[,seconds]
std::string train_report_csv(const TrainReport& report, bool include_seconds);
nlohmann::json train_report_summary(const TrainReport& report);

std::string confusion_csv(const EvalResult& eval, const std::vector<std::string>& class_names);

nlohmann::json explanation_json(const std::string& sample_id, const ExplanationViews<double>& views,
                                const std::vector<std::string>& concept_names,
                                const std::vector<std::string>& class_names);
std::string matrix_csv(const Eigen::MatrixXd& m);

std::string intervention_curve_csv(const InterventionReport& report);
std::string intervention_records_jsonl(const InterventionReport& report);

std::string tau_sweep_csv(const TauSweep& sweep);

}  // namespace motif
