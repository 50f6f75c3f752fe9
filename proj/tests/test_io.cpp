#include <gtest/gtest.h>

#include <filesystem>

#include "motif/io.hpp"
#include "support.hpp"

using namespace motif;
using namespace motif::fixtures;
using nlohmann::json;

namespace {

Checkpoint sample_checkpoint(AttentionVariant variant) {
  std::mt19937_64 rng(400);
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.norm = variant == AttentionVariant::full ? NormMode::token : NormMode::temporal;
  cfg.heads = variant == AttentionVariant::full ? 2 : 1;
  cfg.tau = 0.7;
  Checkpoint c;
  c.params = random_params(4, 3, cfg, rng);
  c.concept_names = {"a", "b", "c", "d"};
  c.class_names = {"x", "y", "z"};
  c.config_hash = "0123456789abcdef";
  c.nonneg_W = false;
  return c;
}

}  // namespace

TEST(TrainConfigJson, DefaultsAndRoundTrip) {
  const TrainConfig d = train_config_from_json(json::object());
  EXPECT_EQ(d.epochs, 100);
  EXPECT_EQ(d.batch_size, 32);
  EXPECT_EQ(d.learning_rate, 1e-3);
  EXPECT_EQ(d.weight_decay, 1e-2);
  EXPECT_EQ(d.lambda_l1, 1e-3);
  EXPECT_EQ(d.lambda_sparse, 1e-3);
  EXPECT_TRUE(d.nonneg_W);
  EXPECT_EQ(d.seed, 42u);
  EXPECT_FALSE(d.norm.has_value());
  TrainConfig c;
  c.variant = AttentionVariant::full;
  c.heads = 4;
  c.norm = NormMode::temporal;
  c.single_precision = true;
  c.tau = 2.5;
  const TrainConfig back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.model_config().norm, NormMode::temporal);
  EXPECT_TRUE(back.single_precision);
}

TEST(TrainConfigJson, StrictParsing) {
  EXPECT_THROW(train_config_from_json({{"epoch", 3}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"epochs", "three"}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"variant", "sparse"}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"norm", "batch"}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"precision", "half"}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"learning_rate", -1.0}}), ConfigError);
  EXPECT_THROW(train_config_from_json(json::array()), ConfigError);
}

TEST(SyntheticSpecJson, RoundTripAndStrict) {
  SyntheticSpec s;
  s.distractors = 2;
  s.seed = 9;
  const SyntheticSpec back = synthetic_spec_from_json(to_json(s));
  EXPECT_EQ(to_json(back), to_json(s));
  EXPECT_THROW(synthetic_spec_from_json({{"clases", 3}}), ConfigError);
}

TEST(ConfigHash, StableAndKeyOrderIndependent) {
  const json a = json::parse(R"({"b": 1, "a": [1, 2]})");
  const json b = json::parse(R"({"a": [1, 2], "b": 1})");
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  EXPECT_NE(config_hash(a), config_hash(json::parse(R"({"a": [1, 2], "b": 2})")));
  // FNV-1a 64 of the empty object "{}".
  EXPECT_EQ(config_hash(json::object()), "08f44b07b5901a25");
}

TEST(Checkpoint, RoundTripIsExact) {
  for (auto variant : {AttentionVariant::diagonal, AttentionVariant::full}) {
    const Checkpoint c = sample_checkpoint(variant);
    const auto path = std::filesystem::temp_directory_path() / "motif_ckpt_roundtrip.json";
    save_checkpoint(c, path);
    const Checkpoint back = load_checkpoint(path);
    EXPECT_EQ(back.concept_names, c.concept_names);
    EXPECT_EQ(back.class_names, c.class_names);
    EXPECT_EQ(back.config_hash, c.config_hash);
    EXPECT_EQ(back.nonneg_W, c.nonneg_W);
    EXPECT_EQ(back.params.config.variant, variant);
    EXPECT_EQ(back.params.config.tau, 0.7);
    ModelParams<double> a = c.params, b = back.params;
    for_each_tensor([](const TensorSlot& slot, auto& x, auto& y) { EXPECT_EQ(x, y) << slot.name; }, a, b);
  }
}

TEST(Checkpoint, RejectsUnknownAndMissingFields) {
  const json good = to_json(sample_checkpoint(AttentionVariant::diagonal));
  EXPECT_NO_THROW(checkpoint_from_json(good));

  json extra = good;
  extra["comment"] = "hi";
  EXPECT_THROW(checkpoint_from_json(extra), InputError);

  json extra_model = good;
  extra_model["model"]["depth"] = 2;
  EXPECT_THROW(checkpoint_from_json(extra_model), InputError);

  json extra_tensor = good;
  extra_tensor["tensors"]["theta_x"] = extra_tensor["tensors"]["theta_q"];
  EXPECT_THROW(checkpoint_from_json(extra_tensor), InputError);

  json stray_full = good;
  stray_full["tensors"]["wq"] = {{"rows", 4}, {"cols", 4}, {"data", std::vector<double>(16, 0.0)}};
  EXPECT_THROW(checkpoint_from_json(stray_full), InputError);

  json missing = good;
  missing["tensors"].erase("gamma");
  EXPECT_THROW(checkpoint_from_json(missing), InputError);

  json bad_shape = good;
  bad_shape["tensors"]["delta"]["rows"] = 3;
  EXPECT_THROW(checkpoint_from_json(bad_shape), InputError);

  json bad_version = good;
  bad_version["version"] = 2;
  EXPECT_THROW(checkpoint_from_json(bad_version), InputError);
}

TEST(Reports, TrainCsvColumns) {
  TrainReport r;
  r.epochs.push_back({1, 1.5, 1.25, 0.125, 0.125, 0.5, 0.25, 3.0});
  EXPECT_EQ(train_report_csv(r, false),
            "epoch,train_loss,ce,l1,sparse,train_acc,test_acc\n1,1.5,1.25,0.125,0.125,0.5,0.25\n");
  EXPECT_EQ(train_report_csv(r, true),
            "epoch,train_loss,ce,l1,sparse,train_acc,test_acc,seconds\n1,1.5,1.25,0.125,0.125,0.5,0.25,3\n");
  r.best_test_accuracy = std::numeric_limits<double>::quiet_NaN();
  EXPECT_TRUE(train_report_summary(r)["best_test_accuracy"].is_null());
}

TEST(Reports, ConfusionAndCurves) {
  EvalResult e;
  e.confusion = Eigen::MatrixXi::Zero(2, 2);
  e.confusion << 3, 1, 0, 2;
  EXPECT_EQ(confusion_csv(e, {"cat", "dog"}), "true\\predicted,cat,dog\ncat,3,1\ndog,0,2\n");
  InterventionReport ir;
  ir.retained = {1.0, 0.5};
  EXPECT_EQ(intervention_curve_csv(ir), "k,retained_fraction\n0,1\n1,0.5\n");
  Eigen::MatrixXd m(2, 2);
  m << 1, 0.5, 0.25, 0;
  EXPECT_EQ(matrix_csv(m), "1,0.5\n0.25,0\n");
}
