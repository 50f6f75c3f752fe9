#include "motif/io.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace motif {

using nlohmann::json;

namespace {

// Strict key readers: every key is consumed once; leftovers are errors.
template <typename Error>
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw Error(where_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw Error(where_ + ": field '" + key + "' has the wrong type");
    }
  }

  template <typename T>
  void require(const char* key, T& out) {
    if (!j_.contains(key)) throw Error(where_ + ": missing field '" + key + "'");
    get(key, out);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw Error(where_ + ": unknown field '" + it.key() + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

json tensor_json(const Eigen::MatrixXd& m) {
  json data = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Eigen::MatrixXd tensor_from_json(const json& j, const std::string& name) {
  Reader<InputError> r(j, "checkpoint tensor '" + name + "'");
  Eigen::Index rows = 0, cols = 0;
  std::vector<double> data;
  r.require("rows", rows);
  r.require("cols", cols);
  r.require("data", data);
  r.finish();
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size())
    throw InputError("checkpoint tensor '" + name + "': data length does not match rows x cols");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = data[static_cast<std::size_t>(i * cols + c)];
  if (!m.allFinite()) throw InputError("checkpoint tensor '" + name + "' contains non-finite values");
  return m;
}

json model_config_json(const ModelConfig& m) {
  return {{"variant", to_string(m.variant)}, {"norm", to_string(m.norm)},     {"heads", m.heads},
          {"tau", m.tau},                    {"affine", m.affine},            {"residual", m.residual},
          {"dropout", m.dropout},            {"normalized_lse", m.normalized_lse}};
}

ModelConfig model_config_from_json(const json& j) {
  Reader<InputError> r(j, "checkpoint model");
  ModelConfig m;
  std::string variant, norm;
  r.require("variant", variant);
  r.require("norm", norm);
  r.require("heads", m.heads);
  r.require("tau", m.tau);
  r.require("affine", m.affine);
  r.require("residual", m.residual);
  r.require("dropout", m.dropout);
  r.require("normalized_lse", m.normalized_lse);
  r.finish();
  try {
    m.variant = parse_variant(variant);
    m.norm = parse_norm_mode(norm);
  } catch (const std::invalid_argument& e) {
    throw InputError(std::string("checkpoint model: ") + e.what());
  }
  return m;
}

}  // namespace

TrainConfig train_config_from_json(const json& j) {
  Reader<ConfigError> r(j, "train config");
  TrainConfig c;
  std::string variant = to_string(c.variant), norm = "auto", precision = "double";
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("learning_rate", c.learning_rate);
  r.get("weight_decay", c.weight_decay);
  r.get("tau", c.tau);
  r.get("lambda_l1", c.lambda_l1);
  r.get("lambda_sparse", c.lambda_sparse);
  r.get("nonneg_W", c.nonneg_W);
  r.get("seed", c.seed);
  r.get("variant", variant);
  r.get("norm", norm);
  r.get("heads", c.heads);
  r.get("residual", c.residual);
  r.get("affine", c.affine);
  r.get("dropout_rate", c.dropout_rate);
  r.get("normalized_lse", c.normalized_lse);
  r.get("precision", precision);
  r.finish();
  try {
    c.variant = parse_variant(variant);
    if (norm != "auto") c.norm = parse_norm_mode(norm);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (precision != "double" && precision != "single")
    throw ConfigError("train config: precision must be 'double' or 'single'");
  c.single_precision = precision == "single";
  c.validate();
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"tau", c.tau},
          {"lambda_l1", c.lambda_l1},
          {"lambda_sparse", c.lambda_sparse},
          {"nonneg_W", c.nonneg_W},
          {"seed", c.seed},
          {"variant", to_string(c.variant)},
          {"norm", c.norm ? to_string(*c.norm) : "auto"},
          {"heads", c.heads},
          {"residual", c.residual},
          {"affine", c.affine},
          {"dropout_rate", c.dropout_rate},
          {"normalized_lse", c.normalized_lse},
          {"precision", c.single_precision ? "single" : "double"}};
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  json j;
  try {
    j = read_json_file(path);
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
  return train_config_from_json(j);
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
  Reader<ConfigError> r(j, "synthetic spec");
  SyntheticSpec s;
  r.get("classes", s.classes);
  r.get("concepts", s.concepts);
  r.get("min_steps", s.min_steps);
  r.get("max_steps", s.max_steps);
  r.get("motif_length", s.motif_length);
  r.get("amplitude", s.amplitude);
  r.get("noise_std", s.noise_std);
  r.get("samples_per_class", s.samples_per_class);
  r.get("test_samples_per_class", s.test_samples_per_class);
  r.get("distractors", s.distractors);
  r.get("distractor_length", s.distractor_length);
  r.get("seed", s.seed);
  r.finish();
  s.validate();
  return s;
}

json to_json(const SyntheticSpec& s) {
  return {{"classes", s.classes},
          {"concepts", s.concepts},
          {"min_steps", s.min_steps},
          {"max_steps", s.max_steps},
          {"motif_length", s.motif_length},
          {"amplitude", s.amplitude},
          {"noise_std", s.noise_std},
          {"samples_per_class", s.samples_per_class},
          {"test_samples_per_class", s.test_samples_per_class},
          {"distractors", s.distractors},
          {"distractor_length", s.distractor_length},
          {"seed", s.seed}};
}

std::string config_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

json to_json(const Checkpoint& ckpt) {
  json tensors = json::object();
  ModelParams<double> p = ckpt.params;
  for_each_tensor(
      [&](const TensorSlot& slot, auto& t) {
        if (t.size() > 0) tensors[slot.name] = tensor_json(t);
      },
      p);
  return {{"format", "motif-checkpoint"},
          {"version", 1},
          {"config_hash", ckpt.config_hash},
          {"concepts", ckpt.concept_names},
          {"classes", ckpt.class_names},
          {"nonneg_W", ckpt.nonneg_W},
          {"model", model_config_json(ckpt.params.config)},
          {"tensors", tensors}};
}

Checkpoint checkpoint_from_json(const json& j) {
  Reader<InputError> r(j, "checkpoint");
  std::string format;
  int version = 0;
  json model, tensors;
  Checkpoint ckpt;
  r.require("format", format);
  r.require("version", version);
  r.require("config_hash", ckpt.config_hash);
  r.require("concepts", ckpt.concept_names);
  r.require("classes", ckpt.class_names);
  r.require("nonneg_W", ckpt.nonneg_W);
  r.require("model", model);
  r.require("tensors", tensors);
  r.finish();
  if (format != "motif-checkpoint") throw InputError("checkpoint: unexpected format '" + format + "'");
  if (version != 1) throw InputError("checkpoint: unsupported version " + std::to_string(version));
  if (!tensors.is_object()) throw InputError("checkpoint: 'tensors' must be an object");

  const ModelConfig config = model_config_from_json(model);
  const auto concepts = static_cast<Eigen::Index>(ckpt.concept_names.size());
  if (concepts < 1) throw InputError("checkpoint: no concepts");
  if (!tensors.contains("W")) throw InputError("checkpoint: missing tensor 'W'");
  const Eigen::Index classes = tensors["W"].value("rows", Eigen::Index{0});
  if (classes < 1) throw InputError("checkpoint: W has no rows");
  if (!ckpt.class_names.empty() && static_cast<Eigen::Index>(ckpt.class_names.size()) != classes)
    throw InputError("checkpoint: class names do not match W");
  try {
    config.validate(concepts);
  } catch (const ConfigError& e) {
    throw InputError(std::string("checkpoint model: ") + e.what());
  }

  ckpt.params = ModelParams<double>::zeros(concepts, classes, config);
  std::set<std::string> known;
  for_each_tensor(
      [&](const TensorSlot& slot, auto& t) {
        known.insert(slot.name);
        if (t.size() == 0) {
          if (tensors.contains(slot.name)) throw InputError(std::string("checkpoint: unexpected tensor '") + slot.name + "'");
          return;
        }
        if (!tensors.contains(slot.name)) throw InputError(std::string("checkpoint: missing tensor '") + slot.name + "'");
        const Eigen::MatrixXd m = tensor_from_json(tensors[slot.name], slot.name);
        if (m.rows() != t.rows() || m.cols() != t.cols())
          throw InputError(std::string("checkpoint: tensor '") + slot.name + "' has shape " + std::to_string(m.rows()) + "x" +
                           std::to_string(m.cols()) + ", expected " + std::to_string(t.rows()) + "x" +
                           std::to_string(t.cols()));
        t = m;
      },
      ckpt.params);
  for (auto it = tensors.begin(); it != tensors.end(); ++it)
    if (!known.count(it.key())) throw InputError("checkpoint: unknown tensor '" + it.key() + "'");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_text_file(path, to_json(ckpt).dump() + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return checkpoint_from_json(read_json_file(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("failed writing " + path.string());
}

std::string train_report_csv(const TrainReport& report, bool include_seconds) {
  std::ostringstream os;
  os << "epoch,train_loss,ce,l1,sparse,train_acc,test_acc";
  if (include_seconds) os << ",seconds";
  os << '\n';
  for (const auto& e : report.epochs) {
    os << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.cross_entropy) << ','
       << format_double(e.l1) << ',' << format_double(e.sparsity) << ',' << format_double(e.train_accuracy) << ','
       << format_double(e.test_accuracy);
    if (include_seconds) os << ',' << format_double(e.seconds);
    os << '\n';
  }
  return os.str();
}

namespace {
// NaN (no test set) becomes null.
json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
}  // namespace

json train_report_summary(const TrainReport& report) {
  return {{"epochs", report.epochs.size()},
          {"best_epoch", report.best_epoch},
          {"best_test_accuracy", number_or_null(report.best_test_accuracy)},
          {"final_test_accuracy", number_or_null(report.final_test_accuracy)},
          {"final_train_accuracy", number_or_null(report.final_train_accuracy)},
          {"seconds", report.seconds}};
}

std::string confusion_csv(const EvalResult& eval, const std::vector<std::string>& class_names) {
  const auto k = eval.confusion.rows();
  auto name = [&](Eigen::Index i) {
    return static_cast<std::size_t>(i) < class_names.size() ? class_names[static_cast<std::size_t>(i)] : std::to_string(i);
  };
  std::ostringstream os;
  os << "true\\predicted";
  for (Eigen::Index c = 0; c < k; ++c) os << ',' << name(c);
  os << '\n';
  for (Eigen::Index r = 0; r < k; ++r) {
    os << name(r);
    for (Eigen::Index c = 0; c < k; ++c) os << ',' << eval.confusion(r, c);
    os << '\n';
  }
  return os.str();
}

json explanation_json(const std::string& sample_id, const ExplanationViews<double>& views,
                      const std::vector<std::string>& concept_names, const std::vector<std::string>& class_names) {
  const auto& e = views.explanation;
  auto concept_list = [&](const std::vector<ConceptValue>& values) {
    json out = json::array();
    for (const auto& v : values)
      out.push_back({{"index", v.concept_index}, {"name", concept_names.at(static_cast<std::size_t>(v.concept_index))},
                     {"value", v.value}});
    return out;
  };
  json local = json::array();
  for (const auto& w : views.local) local.push_back({{"t", w.step}, {"pi", w.weight}, {"concepts", concept_list(w.concepts)}});
  json j = {{"sample", sample_id},
            {"class", e.target_class},
            {"pi", std::vector<double>(e.pi.data(), e.pi.data() + e.pi.size())},
            {"scores", std::vector<double>(e.scores.data(), e.scores.data() + e.scores.size())},
            {"global", std::vector<double>(e.global.data(), e.global.data() + e.global.size())},
            {"global_top", concept_list(views.global_top)},
            {"local", local}};
  if (static_cast<std::size_t>(e.target_class) < class_names.size())
    j["class_name"] = class_names[static_cast<std::size_t>(e.target_class)];
  return j;
}

std::string matrix_csv(const Eigen::MatrixXd& m) {
  std::ostringstream os;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) os << (c ? "," : "") << format_double(m(r, c));
    os << '\n';
  }
  return os.str();
}

std::string intervention_curve_csv(const InterventionReport& report) {
  std::ostringstream os;
  os << "k,retained_fraction\n";
  for (std::size_t k = 0; k < report.retained.size(); ++k) os << k << ',' << format_double(report.retained[k]) << '\n';
  return os.str();
}

std::string intervention_records_jsonl(const InterventionReport& report) {
  std::ostringstream os;
  for (const auto& rec : report.samples) {
    json j = {{"id", rec.id},
              {"site", to_string(report.site)},
              {"ranking", to_string(report.ranking)},
              {"original_prediction", rec.original_prediction},
              {"original_logit", rec.original_logit},
              {"removal_order", rec.removal_order},
              {"predictions", rec.predictions},
              {"logits", rec.logits}};
    os << j.dump() << '\n';
  }
  return os.str();
}

std::string tau_sweep_csv(const TauSweep& sweep) {
  std::ostringstream os;
  os << "tau,accuracy,concept_entropy,logit_entropy\n";
  for (const auto& r : sweep.rows)
    os << format_double(r.tau) << ',' << format_double(r.accuracy) << ',' << format_double(r.concept_entropy) << ','
       << format_double(r.logit_entropy) << '\n';
  return os.str();
}

}  // namespace motif
