// motif: command-line front end. Every command writes into a fresh output
// directory and finishes by writing manifest.json.
//
// Exit codes: 0 success, 2 input/config/usage error, 3 numerical failure,
// 1 anything else.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "motif/data.hpp"
#include "motif/errors.hpp"
#include "motif/explain.hpp"
#include "motif/intervene.hpp"
#include "motif/io.hpp"
#include "motif/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace motif;

namespace {

constexpr int kCheckpointVersion = 1;

class Run {
 public:
  Run(std::string command, fs::path out, bool force) : command_(std::move(command)), out_(std::move(out)) {
    if (out_.empty()) throw InputError("--out is required");
    if (fs::exists(out_)) {
      if (!fs::is_directory(out_)) throw InputError("output path " + out_.string() + " is not a directory");
      if (!fs::is_empty(out_) && !force)
        throw InputError("output directory " + out_.string() + " is not empty (pass --force to reuse it)");
    }
    fs::create_directories(out_);
  }

  fs::path path(const std::string& name) const { return out_ / name; }

  void write(const std::string& name, const std::string& text) {
    const fs::path p = path(name);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_text_file(p, text);
    outputs_.push_back(name);
  }
  void write(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }
  void record_output(const std::string& name) { outputs_.push_back(name); }

  void input(const std::string& key, const std::string& value) {
    if (!value.empty()) inputs_[key] = value;
  }

  void finish(const json& config, std::uint64_t seed) {
    json m;
    m["command"] = command_;
    m["config"] = config;
    m["config_hash"] = config_hash(config);
    m["seed"] = seed;
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    m["versions"] = {{"motif", MOTIF_VERSION}, {"checkpoint", kCheckpointVersion}};
    m["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_text_file(path("manifest.json"), m.dump(2) + "\n");
  }

 private:
  std::string command_;
  fs::path out_;
  json inputs_ = json::object();
  std::vector<std::string> outputs_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "csv";
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c, const std::string& default_format) {
  c.format = default_format;
  cmd->add_option("--out", c.out, "Output directory")->required();
  cmd->add_option("--seed", c.seed, "Seed (overrides the config)");
  cmd->add_option("--format", c.format, "Report format")->check(CLI::IsMember({"json", "csv"}));
  cmd->add_flag("--force", c.force, "Allow a non-empty output directory");
}

std::string safe_name(const std::string& s) {
  std::string out;
  for (char ch : s) out += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '.') ? ch : '_';
  return out;
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

TrainConfig effective_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
  TrainConfig c = path.empty() ? TrainConfig{} : load_train_config(path);
  if (seed) c.seed = *seed;
  c.validate();
  return c;
}

FitResult<double> train_model(const Dataset& train, const Dataset& test, const TrainConfig& config) {
  if (!config.single_precision) return fit<double>(train, test, config);
  auto r = fit<float>(train, test, config);
  return {r.final_params.cast<double>(), r.best_params.cast<double>(), r.report};
}

Checkpoint make_checkpoint(const ModelParams<double>& p, const Dataset& data, const TrainConfig& config) {
  Checkpoint ck;
  ck.params = p;
  ck.concept_names = data.concept_names;
  ck.class_names = data.class_names;
  ck.config_hash = config_hash(to_json(config));
  ck.nonneg_W = config.nonneg_W;
  return ck;
}

void check_vocabulary(const Checkpoint& ck, const Dataset& data) {
  if (data.concepts() != ck.params.concepts())
    throw InputError("dataset has " + std::to_string(data.concepts()) + " concepts, checkpoint expects " +
                     std::to_string(ck.params.concepts()));
  if (data.concept_names != ck.concept_names) throw InputError("dataset concept names differ from the checkpoint");
  for (const auto& s : data.samples)
    if (s.label >= ck.params.classes())
      throw InputError("sample '" + s.id + "' has label " + std::to_string(s.label) + " outside the checkpoint classes");
}

Dataset load_checked(const std::string& path, const Checkpoint& ck) {
  Dataset d = load_dataset(path);
  check_vocabulary(ck, d);
  return d;
}

// --- synth -------------------------------------------------------------------

struct SynthArgs {
  Common common;
};

void cmd_synth(const SynthArgs& a) {
  SyntheticSpec spec = a.common.config.empty() ? SyntheticSpec{} : synthetic_spec_from_json(read_json_file(a.common.config));
  if (a.common.seed) spec.seed = *a.common.seed;
  Run run("synth", a.common.out, a.common.force);
  run.input("config", a.common.config);
  const auto data = generate_synthetic(spec);
  save_dataset(data.train, run.path("train.jsonl"));
  run.record_output("train.jsonl");
  if (!data.test.samples.empty()) {
    save_dataset(data.test, run.path("test.jsonl"));
    run.record_output("test.jsonl");
  }
  std::ostringstream truth;
  truth << "id,split,label,channel,offset\n";
  for (std::size_t i = 0; i < data.truth.size(); ++i) {
    const auto& t = data.truth[i];
    truth << t.id << ',' << (i < data.train.samples.size() ? "train" : "test") << ',' << t.label << ',' << t.channel
          << ',' << t.offset << '\n';
  }
  run.write("truth.csv", truth.str());
  run.finish(to_json(spec), spec.seed);
}

// --- project -----------------------------------------------------------------

struct ProjectArgs {
  Common common;
  std::string embeddings, bank, selector = "random";
  int window_size = 0;
};

void cmd_project(const ProjectArgs& a) {
  const std::uint64_t seed = a.common.seed.value_or(42);
  const auto selector = parse_selector(a.selector);
  if (a.window_size < 1) throw ConfigError("--window-size must be >= 1");
  const auto videos = load_embeddings(a.embeddings);
  const auto bank = load_concept_bank(a.bank);
  Run run("project", a.common.out, a.common.force);
  run.input("embeddings", a.embeddings);
  run.input("bank", a.bank);
  save_dataset(project_embeddings(videos, bank, a.window_size, selector, seed), run.path("activations.jsonl"));
  run.record_output("activations.jsonl");
  run.finish({{"window_size", a.window_size}, {"selector", a.selector}}, seed);
}

// --- train -------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string train, test;
  bool timing = false;
};

void cmd_train(const TrainArgs& a) {
  const TrainConfig config = effective_config(a.common.config, a.common.seed);
  const Dataset train = load_dataset(a.train);
  const Dataset test = a.test.empty() ? Dataset{train.concept_names, train.class_names, {}} : load_dataset(a.test);
  Run run("train", a.common.out, a.common.force);
  run.input("config", a.common.config);
  run.input("train", a.train);
  run.input("test", a.test);
  FitResult<double> result;
  try {
    result = train_model(train, test, config);
  } catch (const DivergenceError& e) {
    run.write("train_report.csv", train_report_csv(e.report, a.timing));
    run.finish(to_json(config), config.seed);
    throw;
  }
  if (a.common.format == "csv") {
    run.write("train_report.csv", train_report_csv(result.report, a.timing));
  } else {
    json epochs = json::array();
    for (const auto& e : result.report.epochs) {
      json row = {{"epoch", e.epoch},    {"train_loss", e.train_loss}, {"ce", e.cross_entropy},
                  {"l1", e.l1},          {"sparse", e.sparsity},       {"train_acc", e.train_accuracy},
                  {"test_acc", std::isfinite(e.test_accuracy) ? json(e.test_accuracy) : json(nullptr)}};
      if (a.timing) row["seconds"] = e.seconds;
      epochs.push_back(row);
    }
    run.write("train_report.json", epochs);
  }
  run.write("summary.json", train_report_summary(result.report));
  run.write("config.json", to_json(config));
  save_checkpoint(make_checkpoint(result.best_params, train, config), run.path("checkpoint_best.json"));
  save_checkpoint(make_checkpoint(result.final_params, train, config), run.path("checkpoint_final.json"));
  run.record_output("checkpoint_best.json");
  run.record_output("checkpoint_final.json");
  run.finish(to_json(config), config.seed);
}

// --- eval --------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string checkpoint, data;
};

void cmd_eval(const EvalArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Dataset data = load_checked(a.data, ck);
  Run run("eval", a.common.out, a.common.force);
  run.input("checkpoint", a.checkpoint);
  run.input("data", a.data);
  const EvalResult r = evaluate(data, ck.params);
  const auto names = ck.class_names.empty() ? data.class_names : ck.class_names;
  if (a.common.format == "json")
    run.write("metrics.json", json{{"accuracy", r.accuracy}, {"samples", data.samples.size()}});
  else
    run.write("metrics.csv", "accuracy,samples\n" + std::to_string(r.accuracy) + "," +
                                 std::to_string(data.samples.size()) + "\n");
  run.write("confusion.csv", confusion_csv(r, names));
  std::ostringstream preds;
  preds << "id,label,prediction\n";
  for (std::size_t i = 0; i < data.samples.size(); ++i)
    preds << data.samples[i].id << ',' << data.samples[i].label << ',' << r.predictions[i] << '\n';
  run.write("predictions.csv", preds.str());
  run.finish({{"checkpoint_config_hash", ck.config_hash}}, 0);
}

// --- explain -----------------------------------------------------------------

struct ExplainArgs {
  Common common;
  std::string checkpoint, data, weighting = "scaled";
  std::vector<std::string> samples;
  std::optional<int> target_class;
  std::optional<double> tau;
  int top_windows = 3, top_concepts = 5;
};

void cmd_explain(const ExplainArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Dataset data = load_checked(a.data, ck);
  ExplainOptions opt;
  opt.top_windows = a.top_windows;
  opt.top_concepts = a.top_concepts;
  opt.tau = a.tau;
  if (a.weighting == "scaled")
    opt.weighting = TemporalWeighting::scaled;
  else if (a.weighting == "divided")
    opt.weighting = TemporalWeighting::divided;
  else
    throw ConfigError("--weighting must be scaled or divided");
  if (a.tau && !(*a.tau > 0.0)) throw ConfigError("--tau must be > 0");
  if (a.target_class && (*a.target_class < 0 || *a.target_class >= ck.params.classes()))
    throw InputError("--class must lie in [0, " + std::to_string(ck.params.classes()) + ")");

  std::vector<const ConceptSequence*> chosen;
  if (a.samples.empty()) {
    for (const auto& s : data.samples) chosen.push_back(&s);
  } else {
    for (const auto& id : a.samples) {
      const ConceptSequence* hit = nullptr;
      for (const auto& s : data.samples)
        if (s.id == id) hit = &s;
      if (!hit) throw InputError("sample '" + id + "' not found in " + a.data);
      chosen.push_back(hit);
    }
  }

  Run run("explain", a.common.out, a.common.force);
  run.input("checkpoint", a.checkpoint);
  run.input("data", a.data);
  const auto class_names = ck.class_names.empty() ? data.class_names : ck.class_names;
  const bool full = ck.params.config.variant == AttentionVariant::full;
  for (const ConceptSequence* s : chosen) {
    const auto trace = forward(*s, ck.params);
    const int k = a.target_class.value_or(trace.prediction);
    const auto views = explain(trace, ck.params, k, opt);
    json doc = explanation_json(s->id, views, ck.concept_names, class_names);
    const std::string stem = safe_name(s->id);
    const int maps = static_cast<int>(trace.attention().size());
    for (int m = 0; m < maps; ++m) {
      const auto view = attention_map(trace, ck.params.config, m);
      const std::string label = full ? "head" + std::to_string(m) : ck.concept_names[static_cast<std::size_t>(m)];
      if (a.common.format == "json") {
        doc["attention"][label] = matrix_json(view.map);
      } else {
        run.write("attention/" + stem + "_" + safe_name(label) + ".csv", matrix_csv(view.map));
        run.write("heatmaps/" + stem + "_" + safe_name(label) + ".csv", matrix_csv(heatmap_grid(view.map)));
      }
    }
    if (full) doc["attention_note"] = "full-variant head maps mix concepts and cannot be attributed to one concept";
    run.write("explanations/" + stem + ".json", doc);
  }
  json cfg = {{"weighting", a.weighting}, {"top_windows", a.top_windows}, {"top_concepts", a.top_concepts},
              {"checkpoint_config_hash", ck.config_hash}};
  cfg["class"] = a.target_class ? json(*a.target_class) : json(nullptr);
  cfg["tau"] = a.tau ? json(*a.tau) : json(nullptr);
  run.finish(cfg, 0);
}

// --- intervene ---------------------------------------------------------------

struct InterveneArgs {
  Common common;
  std::string checkpoint, data, site = "input", ranking = "per-sample";
  std::optional<int> k_max;
};

void cmd_intervene(const InterveneArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Dataset data = load_checked(a.data, ck);
  const auto site = parse_removal_site(a.site);
  const auto ranking = parse_ranking(a.ranking);
  const int k_max = a.k_max.value_or(static_cast<int>(std::min<Eigen::Index>(5, ck.params.concepts() - 1)));
  Run run("intervene", a.common.out, a.common.force);
  run.input("checkpoint", a.checkpoint);
  run.input("data", a.data);
  const auto report = topk_curve(data, ck.params, k_max, ranking, site);
  if (a.common.format == "json") {
    run.write("curve.json", json{{"site", to_string(site)}, {"ranking", to_string(ranking)}, {"retained", report.retained}});
  } else {
    run.write("curve.csv", intervention_curve_csv(report));
  }
  run.write("records.jsonl", intervention_records_jsonl(report));
  run.finish({{"site", a.site}, {"ranking", a.ranking}, {"k_max", k_max}, {"checkpoint_config_hash", ck.config_hash}},
             0);
}

// --- ablate ------------------------------------------------------------------

struct AblateArgs {
  Common common;
  std::string sweep, axis, grid;
  std::string checkpoint, data;
  std::string train, test;
  std::string train_embeddings, test_embeddings, bank, selector = "random";
  std::string weighting = "scaled";
};

const std::vector<std::string> kRetrainAxes = {"variant",  "seed",          "lambda_l1",    "lambda_sparse",
                                               "learning_rate", "nonneg_W", "weight_decay", "affine"};

json parse_grid_value(const std::string& token) {
  try {
    return json::parse(token);
  } catch (const json::parse_error&) {
    return token;
  }
}

std::string value_text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

struct SweepPoint {
  std::string value;
  double train_acc = 0, final_test = 0, best_test = 0, concept_entropy = 0, logit_entropy = 0;
  int best_epoch = 0;
};

std::string fmt(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void cmd_ablate(const AblateArgs& a) {
  std::string axis = a.axis;
  std::vector<json> grid;
  if (!a.sweep.empty()) {
    if (!a.axis.empty() || !a.grid.empty()) throw ConfigError("give either --sweep or --axis/--grid, not both");
    const json s = read_json_file(a.sweep);
    if (!s.is_object() || !s.contains("axis") || !s["axis"].is_string() || !s.contains("grid") || !s["grid"].is_array() ||
        s.size() != 2)
      throw ConfigError("sweep spec must be {\"axis\": <name>, \"grid\": [values]}");
    axis = s["axis"].get<std::string>();
    for (const auto& v : s["grid"]) grid.push_back(v);
  } else {
    std::stringstream ss(a.grid);
    for (std::string tok; std::getline(ss, tok, ',');)
      if (!tok.empty()) grid.push_back(parse_grid_value(tok));
  }
  if (axis == "lr") axis = "learning_rate";
  if (grid.empty()) throw ConfigError("sweep grid is empty");
  const TemporalWeighting weighting =
      a.weighting == "divided" ? TemporalWeighting::divided : TemporalWeighting::scaled;
  if (a.weighting != "scaled" && a.weighting != "divided") throw ConfigError("--weighting must be scaled or divided");

  if (axis == "tau") {
    std::vector<double> taus;
    for (const auto& v : grid) {
      if (!v.is_number()) throw ConfigError("tau grid values must be numbers");
      taus.push_back(v.get<double>());
    }
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const Dataset data = load_checked(a.data, ck);
    Run run("ablate", a.common.out, a.common.force);
    run.input("checkpoint", a.checkpoint);
    run.input("data", a.data);
    const auto sweep = tau_sweep(data, ck.params, taus, weighting);
    if (a.common.format == "json") {
      json rows = json::array();
      for (const auto& r : sweep.rows)
        rows.push_back({{"tau", r.tau}, {"accuracy", r.accuracy}, {"concept_entropy", r.concept_entropy},
                        {"logit_entropy", r.logit_entropy}});
      run.write("sweep.json", rows);
    } else {
      run.write("sweep.csv", tau_sweep_csv(sweep));
    }
    run.finish({{"axis", axis}, {"grid", taus}, {"weighting", a.weighting}}, 0);
    return;
  }

  const bool windowed = axis == "window_size";
  if (!windowed && std::find(kRetrainAxes.begin(), kRetrainAxes.end(), axis) == kRetrainAxes.end())
    throw ConfigError("unknown sweep axis '" + axis + "'");
  const TrainConfig base = effective_config(a.common.config, a.common.seed);

  Dataset train, test;
  std::vector<EmbeddingRecord> train_videos, test_videos;
  ConceptBank bank;
  if (windowed) {
    if (a.train_embeddings.empty() || a.bank.empty())
      throw InputError("window_size sweeps need --train-embeddings and --bank");
    train_videos = load_embeddings(a.train_embeddings);
    if (!a.test_embeddings.empty()) test_videos = load_embeddings(a.test_embeddings);
    bank = load_concept_bank(a.bank);
    parse_selector(a.selector);
  } else {
    if (a.train.empty()) throw InputError("retraining sweeps need --train");
    train = load_dataset(a.train);
    test = a.test.empty() ? Dataset{train.concept_names, train.class_names, {}} : load_dataset(a.test);
  }

  Run run("ablate", a.common.out, a.common.force);
  run.input("config", a.common.config);
  run.input("train", windowed ? a.train_embeddings : a.train);
  run.input("test", windowed ? a.test_embeddings : a.test);
  run.input("bank", a.bank);

  std::vector<SweepPoint> points;
  for (const auto& value : grid) {
    TrainConfig config = base;
    if (windowed) {
      if (!value.is_number_integer() || value.get<int>() < 1) throw ConfigError("window_size values must be integers >= 1");
      const int w = value.get<int>();
      const auto selector = parse_selector(a.selector);
      train = project_embeddings(train_videos, bank, w, selector, config.seed);
      test = test_videos.empty() ? Dataset{train.concept_names, train.class_names, {}}
                                 : project_embeddings(test_videos, bank, w, selector, config.seed);
    } else {
      json j = to_json(config);
      j[axis] = value;
      config = train_config_from_json(j);
      config.validate();
    }
    const auto result = train_model(train, test, config);
    const Dataset& probe_set = test.samples.empty() ? train : test;
    const auto ent = tau_sweep(probe_set, result.best_params, {config.tau}, weighting);
    SweepPoint p;
    p.value = value_text(value);
    p.train_acc = result.report.final_train_accuracy;
    p.final_test = result.report.final_test_accuracy;
    p.best_test = result.report.best_test_accuracy;
    p.best_epoch = result.report.best_epoch;
    p.concept_entropy = ent.rows.front().concept_entropy;
    p.logit_entropy = ent.rows.front().logit_entropy;
    points.push_back(p);
    run.write("reports/" + axis + "_" + safe_name(p.value) + ".csv", train_report_csv(result.report, false));
  }

  const bool aggregate = axis == "seed";
  auto stat = [&](auto member, bool want_std) {
    double mean = 0;
    for (const auto& p : points) mean += p.*member;
    mean /= static_cast<double>(points.size());
    if (!want_std) return mean;
    if (points.size() < 2) return 0.0;
    double ss = 0;
    for (const auto& p : points) ss += (p.*member - mean) * (p.*member - mean);
    return std::sqrt(ss / static_cast<double>(points.size() - 1));
  };
  if (a.common.format == "json") {
    json rows = json::array();
    for (const auto& p : points)
      rows.push_back({{axis, p.value},
                      {"train_acc", p.train_acc},
                      {"final_test_acc", std::isfinite(p.final_test) ? json(p.final_test) : json(nullptr)},
                      {"best_test_acc", std::isfinite(p.best_test) ? json(p.best_test) : json(nullptr)},
                      {"best_epoch", p.best_epoch},
                      {"concept_entropy", p.concept_entropy},
                      {"logit_entropy", p.logit_entropy}});
    json doc = {{"axis", axis}, {"rows", rows}};
    if (aggregate) {
      for (bool s : {false, true})
        doc[s ? "std" : "mean"] = {{"train_acc", stat(&SweepPoint::train_acc, s)},
                                   {"final_test_acc", stat(&SweepPoint::final_test, s)},
                                   {"best_test_acc", stat(&SweepPoint::best_test, s)},
                                   {"concept_entropy", stat(&SweepPoint::concept_entropy, s)},
                                   {"logit_entropy", stat(&SweepPoint::logit_entropy, s)}};
    }
    run.write("sweep.json", doc);
  } else {
    std::ostringstream os;
    os << axis << ",train_acc,final_test_acc,best_test_acc,best_epoch,concept_entropy,logit_entropy\n";
    for (const auto& p : points)
      os << p.value << ',' << fmt(p.train_acc) << ',' << fmt(p.final_test) << ',' << fmt(p.best_test) << ','
         << p.best_epoch << ',' << fmt(p.concept_entropy) << ',' << fmt(p.logit_entropy) << '\n';
    if (aggregate) {
      for (bool s : {false, true})
        os << (s ? "std" : "mean") << ',' << fmt(stat(&SweepPoint::train_acc, s)) << ','
           << fmt(stat(&SweepPoint::final_test, s)) << ',' << fmt(stat(&SweepPoint::best_test, s)) << ",,"
           << fmt(stat(&SweepPoint::concept_entropy, s)) << ',' << fmt(stat(&SweepPoint::logit_entropy, s)) << '\n';
    }
    run.write("sweep.csv", os.str());
  }
  json grid_json = grid;
  run.finish({{"axis", axis}, {"grid", grid_json}, {"base", to_json(base)}, {"selector", a.selector},
              {"weighting", a.weighting}},
             base.seed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Concept-bottleneck sequence classifier with per-concept temporal attention"};
  app.set_version_flag("--version", MOTIF_VERSION);
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a planted-motif dataset");
  add_common(s, synth.common, "csv");
  s->add_option("--config,--spec", synth.common.config, "Synthetic spec (JSON)")->check(CLI::ExistingFile);

  ProjectArgs project;
  auto* p = app.add_subcommand("project", "Project frame embeddings onto a concept bank");
  add_common(p, project.common, "csv");
  p->add_option("--embeddings", project.embeddings, "Frame embeddings (JSON Lines)")->required()->check(CLI::ExistingFile);
  p->add_option("--bank", project.bank, "Concept bank (JSON Lines)")->required()->check(CLI::ExistingFile);
  p->add_option("--window-size", project.window_size, "Frames per window")->required();
  p->add_option("--selector", project.selector, "random, first or mean");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model");
  add_common(t, train.common, "csv");
  t->add_option("--config", train.common.config, "Training config (JSON)")->check(CLI::ExistingFile);
  t->add_option("--train", train.train, "Training set")->required()->check(CLI::ExistingFile);
  t->add_option("--test", train.test, "Test set")->check(CLI::ExistingFile);
  t->add_flag("--timing", train.timing, "Add a seconds column to the report");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Accuracy and confusion matrix");
  add_common(e, eval.common, "json");
  e->add_option("--checkpoint", eval.checkpoint)->required()->check(CLI::ExistingFile);
  e->add_option("--data", eval.data)->required()->check(CLI::ExistingFile);

  ExplainArgs expl;
  auto* x = app.add_subcommand("explain", "Explanations and attention maps");
  add_common(x, expl.common, "csv");
  x->add_option("--checkpoint", expl.checkpoint)->required()->check(CLI::ExistingFile);
  x->add_option("--data", expl.data)->required()->check(CLI::ExistingFile);
  x->add_option("--samples", expl.samples, "Sample ids (default: all)")->delimiter(',');
  x->add_option("--class", expl.target_class, "Class to explain (default: prediction)");
  x->add_option("--tau", expl.tau, "Temperature for the temporal weights");
  x->add_option("--weighting", expl.weighting, "scaled or divided");
  x->add_option("--top-windows", expl.top_windows);
  x->add_option("--top-concepts", expl.top_concepts);

  InterveneArgs inter;
  auto* i = app.add_subcommand("intervene", "Top-k concept removal curve");
  add_common(i, inter.common, "csv");
  i->add_option("--checkpoint", inter.checkpoint)->required()->check(CLI::ExistingFile);
  i->add_option("--data", inter.data)->required()->check(CLI::ExistingFile);
  i->add_option("--site", inter.site, "input or bottleneck");
  i->add_option("--ranking", inter.ranking, "per-sample or global");
  i->add_option("--k-max", inter.k_max);

  AblateArgs abl;
  auto* b = app.add_subcommand("ablate", "One-axis sweep");
  add_common(b, abl.common, "csv");
  b->add_option("--config", abl.common.config, "Base training config (JSON)")->check(CLI::ExistingFile);
  b->add_option("--sweep", abl.sweep, "Sweep spec {axis, grid} (JSON)")->check(CLI::ExistingFile);
  b->add_option("--axis", abl.axis);
  b->add_option("--grid", abl.grid, "Comma-separated values");
  b->add_option("--checkpoint", abl.checkpoint, "Checkpoint (tau axis)")->check(CLI::ExistingFile);
  b->add_option("--data", abl.data, "Dataset (tau axis)")->check(CLI::ExistingFile);
  b->add_option("--train", abl.train)->check(CLI::ExistingFile);
  b->add_option("--test", abl.test)->check(CLI::ExistingFile);
  b->add_option("--train-embeddings", abl.train_embeddings)->check(CLI::ExistingFile);
  b->add_option("--test-embeddings", abl.test_embeddings)->check(CLI::ExistingFile);
  b->add_option("--bank", abl.bank)->check(CLI::ExistingFile);
  b->add_option("--selector", abl.selector);
  b->add_option("--weighting", abl.weighting);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*s) cmd_synth(synth);
    if (*p) cmd_project(project);
    if (*t) cmd_train(train);
    if (*e) cmd_eval(eval);
    if (*x) cmd_explain(expl);
    if (*i) cmd_intervene(inter);
    if (*b) cmd_ablate(abl);
  } catch (const NumericalError& err) {
    std::cerr << "motif: numerical failure: " << err.what() << '\n';
    return 3;
  } catch (const InputError& err) {
    std::cerr << "motif: " << err.what() << '\n';
    return 2;
  } catch (const ConfigError& err) {
    std::cerr << "motif: config: " << err.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "motif: " << err.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& err) {
    std::cerr << "motif: malformed JSON: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "motif: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
