#pragma once

// Line-delimited corpus and labeling files, evaluation metrics, and
// cross-validation splits.

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lscrf/graph.hpp"
#include "lscrf/regress.hpp"

namespace lscrf {

struct FeatureSchema {
  int node_dim = 0;
  int edge_dim = 0;
  std::vector<std::string> node_names;  // optional, node_dim entries when present
  std::vector<std::string> edge_names;
};

struct Corpus {
  std::vector<Instance> instances;
  std::vector<std::string> label_names;
  FeatureSchema schema;
  Json provenance = Json::object();

  int num_labels() const { return static_cast<int>(label_names.size()); }

  void validate() const {
    if (label_names.empty()) throw Error("corpus has no labels");
    std::set<std::string> ids;
    for (const auto& inst : instances) {
      inst.validate(num_labels());
      if (inst.node_features.cols() != schema.node_dim)
        throw Error("instance '" + inst.id + "': node feature dimension does not match the schema");
      if (inst.graph.num_edges() && inst.edge_features.cols() != schema.edge_dim)
        throw Error("instance '" + inst.id + "': edge feature dimension does not match the schema");
      if (!ids.insert(inst.id).second) throw Error("duplicate instance id '" + inst.id + "'");
    }
  }
};

namespace detail {

inline Json matrix_json(const FeatureMatrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json r = Json::array();
    for (Eigen::Index d = 0; d < m.cols(); ++d) r.push_back(m(i, d));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline FeatureMatrix matrix_from_json(const nlohmann::json& rows, Eigen::Index expected_rows, Eigen::Index dim,
                                      const char* what) {
  if (!rows.is_array() || static_cast<Eigen::Index>(rows.size()) != expected_rows)
    throw Error(std::string(what) + ": expected " + std::to_string(expected_rows) + " rows");
  FeatureMatrix m(expected_rows, dim);
  for (Eigen::Index i = 0; i < expected_rows; ++i) {
    const auto& r = rows[i];
    if (!r.is_array() || static_cast<Eigen::Index>(r.size()) != dim)
      throw Error(std::string(what) + ": row " + std::to_string(i) + " does not have " + std::to_string(dim) +
                  " entries (schema mismatch)");
    for (Eigen::Index d = 0; d < dim; ++d) m(i, d) = r[d].get<double>();
  }
  return m;
}

}  // namespace detail

inline Json instance_to_json(const Instance& inst) {
  Json j;
  j["id"] = inst.id;
  j["m"] = inst.graph.num_nodes();
  Json edges = Json::array();
  for (const auto& e : inst.graph.edges()) edges.push_back(Json::array({e.s, e.t}));
  j["edges"] = std::move(edges);
  j["node_features"] = detail::matrix_json(inst.node_features);
  j["edge_features"] = detail::matrix_json(inst.edge_features);
  if (inst.labels) j["labels"] = *inst.labels;
  return j;
}

inline void write_corpus(const Corpus& corpus, std::ostream& out) {
  Json header;
  header["format"] = "lscrf-corpus";
  header["version"] = 1;
  header["label_names"] = corpus.label_names;
  header["node_feature_dim"] = corpus.schema.node_dim;
  header["edge_feature_dim"] = corpus.schema.edge_dim;
  header["node_feature_names"] = corpus.schema.node_names;
  header["edge_feature_names"] = corpus.schema.edge_names;
  header["num_instances"] = corpus.instances.size();
  header["provenance"] = corpus.provenance;
  out << header.dump() << '\n';
  for (const auto& inst : corpus.instances) out << instance_to_json(inst).dump() << '\n';
}

inline void write_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  write_corpus(corpus, out);
  if (!out) throw Error("write to '" + path + "' failed");
}

inline Corpus read_corpus(std::istream& in) {
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    try {
      if (!have_header) {
        if (j.value("format", "") != "lscrf-corpus") throw Error("missing lscrf-corpus header record");
        if (j.at("version").get<int>() != 1) throw Error("unsupported corpus version");
        corpus.label_names = j.at("label_names").get<std::vector<std::string>>();
        corpus.schema.node_dim = j.at("node_feature_dim").get<int>();
        corpus.schema.edge_dim = j.at("edge_feature_dim").get<int>();
        corpus.schema.node_names = j.value("node_feature_names", std::vector<std::string>{});
        corpus.schema.edge_names = j.value("edge_feature_names", std::vector<std::string>{});
        corpus.provenance = j.contains("provenance") ? Json(j["provenance"]) : Json::object();
        if (corpus.label_names.empty()) throw Error("header lists no labels");
        have_header = true;
        continue;
      }
      Instance inst;
      inst.id = j.at("id").get<std::string>();
      const int m = j.at("m").get<int>();
      std::vector<Edge> edges;
      for (const auto& e : j.at("edges")) {
        if (!e.is_array() || e.size() != 2) throw Error("edge entries must be [s, t]");
        edges.push_back({e[0].get<int>(), e[1].get<int>()});
      }
      inst.graph = Graph(m, std::move(edges));
      inst.node_features = detail::matrix_from_json(j.at("node_features"), m, corpus.schema.node_dim, "node_features");
      inst.edge_features =
          detail::matrix_from_json(j.at("edge_features"), inst.graph.num_edges(), corpus.schema.edge_dim, "edge_features");
      if (j.contains("labels")) inst.labels = j["labels"].get<Labeling>();
      inst.validate(corpus.num_labels());
      if (!ids.insert(inst.id).second) throw Error("duplicate instance id '" + inst.id + "'");
      corpus.instances.push_back(std::move(inst));
    } catch (const FormatError&) {
      throw;
    } catch (const std::exception& e) {
      throw FormatError(e.what(), line_no);
    }
  }
  if (!have_header) throw FormatError("empty corpus file (no header record)");
  return corpus;
}

inline Corpus read_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return read_corpus(in);
}

// ---------------------------------------------------------------------------
// Labelings

struct LabelingSet {
  std::vector<std::string> ids;
  std::vector<Labeling> labelings;
  Json provenance = Json::object();
};

inline void write_labelings(const LabelingSet& set, std::ostream& out) {
  Json header;
  header["format"] = "lscrf-labelings";
  header["version"] = 1;
  header["provenance"] = set.provenance;
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < set.ids.size(); ++i) {
    Json j;
    j["id"] = set.ids[i];
    j["labels"] = set.labelings[i];
    out << j.dump() << '\n';
  }
}

inline LabelingSet read_labelings(std::istream& in) {
  LabelingSet set;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!have_header) {
        if (j.value("format", "") != "lscrf-labelings") throw Error("missing lscrf-labelings header record");
        set.provenance = j.contains("provenance") ? Json(j["provenance"]) : Json::object();
        have_header = true;
        continue;
      }
      set.ids.push_back(j.at("id").get<std::string>());
      set.labelings.push_back(j.at("labels").get<Labeling>());
    } catch (const std::exception& e) {
      throw FormatError(e.what(), line_no);
    }
  }
  if (!have_header) throw FormatError("empty labelings file");
  return set;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  double per_pixel_accuracy = 0.0;
  double per_class_accuracy = 0.0;
  std::vector<std::vector<std::uint64_t>> confusion;  // [truth][prediction]
  std::vector<std::pair<std::string, double>> wall_times;  // (phase, seconds)
};

/// Per-pixel accuracy = correct / total nodes; per-class accuracy = mean
/// recall over the classes present in the ground truth.
inline EvalReport evaluate(std::span<const Labeling> predictions, std::span<const Labeling> truths, int num_labels) {
  if (predictions.size() != truths.size()) throw Error("evaluate: prediction and truth counts differ");
  EvalReport report;
  report.confusion.assign(num_labels, std::vector<std::uint64_t>(num_labels, 0));
  std::uint64_t total = 0, correct = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (predictions[i].size() != truths[i].size())
      throw Error("evaluate: labeling " + std::to_string(i) + " has the wrong length");
    for (std::size_t s = 0; s < truths[i].size(); ++s) {
      const int t = truths[i][s], p = predictions[i][s];
      if (t < 0 || t >= num_labels || p < 0 || p >= num_labels) throw Error("evaluate: label out of range");
      ++report.confusion[t][p];
      ++total;
      correct += t == p;
    }
  }
  report.per_pixel_accuracy = total ? static_cast<double>(correct) / total : 0.0;
  double recall_sum = 0.0;
  int present = 0;
  for (int c = 0; c < num_labels; ++c) {
    const auto row_total = std::accumulate(report.confusion[c].begin(), report.confusion[c].end(), std::uint64_t{0});
    if (row_total == 0) continue;
    recall_sum += static_cast<double>(report.confusion[c][c]) / row_total;
    ++present;
  }
  report.per_class_accuracy = present ? recall_sum / present : 0.0;
  return report;
}

inline Json to_json(const EvalReport& report) {
  Json j;
  j["per_pixel_accuracy"] = report.per_pixel_accuracy;
  j["per_class_accuracy"] = report.per_class_accuracy;
  j["confusion"] = report.confusion;
  Json times = Json::object();
  for (const auto& [phase, seconds] : report.wall_times) times[phase] = seconds;
  j["wall_times"] = std::move(times);
  return j;
}

inline std::string format_report(const EvalReport& report, const std::vector<std::string>& label_names = {}) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << "per-pixel accuracy: " << 100.0 * report.per_pixel_accuracy << " %\n";
  out << "per-class accuracy: " << 100.0 * report.per_class_accuracy << " %\n";
  out << "confusion (rows = truth, columns = prediction):\n";
  const auto n = report.confusion.size();
  auto name = [&](std::size_t c) { return c < label_names.size() ? label_names[c] : std::to_string(c); };
  out << std::setw(12) << "";
  for (std::size_t c = 0; c < n; ++c) out << std::setw(12) << name(c);
  out << '\n';
  for (std::size_t t = 0; t < n; ++t) {
    out << std::setw(12) << name(t);
    for (std::size_t p = 0; p < n; ++p) out << std::setw(12) << report.confusion[t][p];
    out << '\n';
  }
  for (const auto& [phase, seconds] : report.wall_times)
    out << "time[" << phase << "]: " << std::setprecision(3) << seconds << " s\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Cross-validation

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// k disjoint test folds covering [0, n) whose sizes differ by at most one.
inline std::vector<Split> cross_val_splits(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2 || static_cast<std::size_t>(k) > n) throw Error("cross_val_splits: need 2 <= k <= n");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Split> splits(k);
  for (std::size_t pos = 0; pos < n; ++pos)
    for (int f = 0; f < k; ++f) (static_cast<int>(pos % k) == f ? splits[f].test : splits[f].train).push_back(order[pos]);
  for (auto& s : splits) {
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
  }
  return splits;
}

}  // namespace lscrf
