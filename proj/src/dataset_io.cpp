#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "json.hpp"
#include "motif/data.hpp"
#include "motif/errors.hpp"

namespace motif {

using nlohmann::json;

namespace {

struct LineContext {
  std::string file;
  std::size_t line;
  std::string where(const std::string& field) const {
    return file + ":" + std::to_string(line) + ": field '" + field + "'";
  }
};

Eigen::MatrixXd read_matrix(const json& record, const std::string& field, const LineContext& ctx) {
  if (!record.contains(field)) throw InputError(ctx.where(field) + " is missing");
  const json& rows = record.at(field);
  if (!rows.is_array()) throw InputError(ctx.where(field) + " must be an array of rows");
  if (rows.empty()) throw InputError(ctx.where(field) + " has T=0 rows");
  const std::size_t width = rows.front().is_array() ? rows.front().size() : 0;
  if (width == 0) throw InputError(ctx.where(field) + " row 0 is empty or not an array");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t t = 0; t < rows.size(); ++t) {
    const json& row = rows[t];
    if (!row.is_array() || row.size() != width) {
      throw InputError(ctx.where(field) + " row " + std::to_string(t) + " has " +
                       std::to_string(row.is_array() ? row.size() : 0) + " entries, expected " + std::to_string(width));
    }
    for (std::size_t c = 0; c < width; ++c) {
      if (!row[c].is_number()) throw InputError(ctx.where(field) + " row " + std::to_string(t) + " has a non-numeric entry");
      const double v = row[c].get<double>();
      if (!std::isfinite(v)) throw InputError(ctx.where(field) + " row " + std::to_string(t) + " contains NaN/Inf");
      m(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) = v;
    }
  }
  return m;
}

json write_matrix(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(t, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

template <typename F>
void for_each_record(const std::filesystem::path& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    LineContext ctx{path.string(), line};
    json record;
    try {
      record = json::parse(text);
    } catch (const json::parse_error& e) {
      throw InputError(path.string() + ":" + std::to_string(line) + ": malformed JSON: " + e.what());
    }
    if (!record.is_object()) throw InputError(path.string() + ":" + std::to_string(line) + ": record is not an object");
    f(record, ctx);
  }
}

std::vector<std::string> read_strings(const json& record, const std::string& field, const LineContext& ctx) {
  const json& arr = record.at(field);
  if (!arr.is_array()) throw InputError(ctx.where(field) + " must be an array of strings");
  std::vector<std::string> out;
  for (const auto& v : arr) {
    if (!v.is_string()) throw InputError(ctx.where(field) + " must contain only strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

std::string read_id(const json& record, const LineContext& ctx) {
  if (!record.contains("id") || !record["id"].is_string()) throw InputError(ctx.where("id") + " must be a string");
  return record["id"].get<std::string>();
}

int read_label(const json& record, const LineContext& ctx) {
  if (!record.contains("label") || !record["label"].is_number_integer())
    throw InputError(ctx.where("label") + " must be an integer");
  const int label = record["label"].get<int>();
  if (label < 0) throw InputError(ctx.where("label") + " must be >= 0");
  return label;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path) {
  Dataset ds;
  bool have_concepts = false;
  for_each_record(path, [&](const json& record, const LineContext& ctx) {
    if (record.contains("concepts")) {
      if (have_concepts) throw InputError(ctx.where("concepts") + " may appear only once");
      ds.concept_names = read_strings(record, "concepts", ctx);
      have_concepts = true;
      if (record.contains("classes")) ds.class_names = read_strings(record, "classes", ctx);
      if (!record.contains("activations")) return;  // header-only record
    }
    if (!have_concepts) throw InputError(ctx.where("concepts") + " must be given on the first record");
    ConceptSequence s{read_id(record, ctx), read_label(record, ctx), read_matrix(record, "activations", ctx)};
    if (s.concepts() != ds.concepts()) {
      throw InputError(ctx.where("activations") + " has C=" + std::to_string(s.concepts()) + ", expected " +
                       std::to_string(ds.concepts()));
    }
    if (!ds.class_names.empty() && s.label >= static_cast<int>(ds.class_names.size()))
      throw InputError(ctx.where("label") + " is outside the class list");
    ds.samples.push_back(std::move(s));
  });
  if (!have_concepts) throw InputError(path.string() + ": no concept header found");
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  validate_dataset(dataset);
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  bool first = true;
  if (dataset.samples.empty()) {
    json header = {{"concepts", dataset.concept_names}};
    if (!dataset.class_names.empty()) header["classes"] = dataset.class_names;
    out << header.dump() << '\n';
  }
  for (const auto& s : dataset.samples) {
    json record = {{"id", s.id}, {"label", s.label}, {"activations", write_matrix(s.activations)}};
    if (first) {
      record["concepts"] = dataset.concept_names;
      if (!dataset.class_names.empty()) record["classes"] = dataset.class_names;
      first = false;
    }
    out << record.dump() << '\n';
  }
}

std::vector<EmbeddingRecord> load_embeddings(const std::filesystem::path& path) {
  std::vector<EmbeddingRecord> out;
  for_each_record(path, [&](const json& record, const LineContext& ctx) {
    EmbeddingRecord r{read_id(record, ctx), read_label(record, ctx), read_matrix(record, "embeddings", ctx)};
    if (!out.empty() && r.embeddings.cols() != out.front().embeddings.cols())
      throw InputError(ctx.where("embeddings") + " dimension differs from earlier records");
    out.push_back(std::move(r));
  });
  return out;
}

ConceptBank load_concept_bank(const std::filesystem::path& path) {
  ConceptBank bank;
  std::vector<Eigen::VectorXd> rows;
  for_each_record(path, [&](const json& record, const LineContext& ctx) {
    if (!record.contains("name") || !record["name"].is_string()) throw InputError(ctx.where("name") + " must be a string");
    const std::string name = record["name"].get<std::string>();
    if (std::find(bank.names.begin(), bank.names.end(), name) != bank.names.end())
      throw InputError(ctx.where("name") + " duplicates concept '" + name + "'");
    if (!record.contains("vector") || !record["vector"].is_array() || record["vector"].empty())
      throw InputError(ctx.where("vector") + " must be a non-empty array");
    const json& v = record["vector"];
    Eigen::VectorXd row(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw InputError(ctx.where("vector") + " has a non-numeric entry");
      row(static_cast<Eigen::Index>(i)) = v[i].get<double>();
    }
    if (!row.allFinite()) throw InputError(ctx.where("vector") + " contains NaN/Inf");
    if (!rows.empty() && row.size() != rows.front().size()) throw InputError(ctx.where("vector") + " dimension mismatch");
    const double norm = row.norm();
    if (!(norm > 0.0)) throw InputError(ctx.where("vector") + " has zero norm");
    rows.push_back(row / norm);
    bank.names.push_back(name);
  });
  if (rows.empty()) throw InputError(path.string() + ": empty concept bank");
  bank.vectors.resize(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t c = 0; c < rows.size(); ++c) bank.vectors.row(static_cast<Eigen::Index>(c)) = rows[c].transpose();
  return bank;
}

}  // namespace motif
