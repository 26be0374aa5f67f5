#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "coverset/ambiguity.hpp"
#include "coverset/conformal.hpp"
#include "coverset/errors.hpp"
#include "coverset/matrix.hpp"
#include "coverset/version.hpp"

namespace coverset {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// digests and number formatting

inline std::uint64_t fnv1a64(std::span<const char> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open '" + path + "' for digest");
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string data = buf.str();
  char out[32];
  std::snprintf(out, sizeof(out), "fnv1a64:%016llx",
                static_cast<unsigned long long>(fnv1a64(data)));
  return out;
}

/// Shortest decimal string that parses back to exactly the same double.
inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

/// Rounds to 6 significant decimal digits (the report-file precision) by a
/// print/parse round trip.
inline double round6(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", x);
  return std::strtod(buf, nullptr);
}

// ---------------------------------------------------------------------------
// delimited-text plumbing

namespace detail {

/// Comma-split with CR trimming. No quoting: ids, class names and
/// annotator names must not contain commas.
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string::size_type start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  if (!fields.empty() && !fields.back().empty() && fields.back().back() == '\r') {
    fields.back().pop_back();
  }
  return fields;
}

struct CsvFile {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // data rows, file order
  std::vector<long> line_numbers;              // 1-based, parallel to rows
};

inline CsvFile read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open '" + path + "'");
  CsvFile csv;
  csv.path = path;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      csv.header = split_csv(line);
      continue;
    }
    if (line.empty() || line == "\r") continue;  // tolerate a trailing blank line
    csv.rows.push_back(split_csv(line));
    csv.line_numbers.push_back(line_no);
  }
  if (line_no == 0) throw parse_error(path, 1, "file is empty");
  return csv;
}

inline double parse_probability_field(const CsvFile& csv, std::size_t row, std::size_t col) {
  const std::string& field = csv.rows[row][col];
  if (field.empty()) {
    throw parse_error(csv.path, csv.line_numbers[row], "empty numeric field");
  }
  const char* begin = field.c_str();
  char* end = nullptr;
  const double value = std::strtod(begin, &end);
  if (end != begin + field.size()) {
    throw parse_error(csv.path, csv.line_numbers[row],
                      "cannot parse '" + field + "' as a number");
  }
  return value;
}

inline int resolve_label(const std::string& token,
                         const std::vector<std::string>& class_names,
                         const std::string& path, long line) {
  for (std::size_t k = 0; k < class_names.size(); ++k) {
    if (token == class_names[k]) return static_cast<int>(k);
  }
  // fall back to a bare class index
  int idx = 0;
  const auto res = std::from_chars(token.data(), token.data() + token.size(), idx);
  if (res.ec == std::errc{} && res.ptr == token.data() + token.size() && idx >= 0 &&
      static_cast<std::size_t>(idx) < class_names.size()) {
    return idx;
  }
  throw parse_error(path, line, "unknown label '" + token + "'");
}

inline void check_expected_header(const CsvFile& csv, std::span<const std::string> expected) {
  if (csv.header.size() != expected.size()) {
    throw parse_error(csv.path, 1,
                      "expected " + std::to_string(expected.size()) +
                          " header fields, got " + std::to_string(csv.header.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (csv.header[i] != expected[i]) {
      throw parse_error(csv.path, 1,
                        "expected header field '" + expected[i] + "', got '" +
                            csv.header[i] + "'");
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// loaders

struct LoadedProbabilities {
  std::vector<std::string> ids;
  std::vector<std::string> class_names;
  ProbabilityMatrix probs;
};

/// Reads `id,<class_0>,…` with one instance per row; rows are validated
/// (entries in [0,1], sum within 1e-6) and kept in file order.
inline LoadedProbabilities load_probabilities(const std::string& path) {
  const detail::CsvFile csv = detail::read_csv(path);
  if (csv.header.size() < 3 || csv.header[0] != "id") {
    throw parse_error(path, 1, "expected header 'id,<class_0>,...' with at least 2 classes");
  }
  LoadedProbabilities out;
  out.class_names.assign(csv.header.begin() + 1, csv.header.end());
  {
    std::set<std::string> seen;
    for (const auto& name : out.class_names) {
      if (name.empty()) throw parse_error(path, 1, "empty class name in header");
      if (!seen.insert(name).second) {
        throw parse_error(path, 1, "duplicate class name '" + name + "' in header");
      }
    }
  }
  const std::size_t n_classes = out.class_names.size();
  out.probs = ProbabilityMatrix(0, n_classes);
  std::set<std::string> seen_ids;
  std::vector<double> row(n_classes);
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const long line = csv.line_numbers[r];
    if (csv.rows[r].size() != n_classes + 1) {
      throw parse_error(path, line,
                        "expected " + std::to_string(n_classes + 1) + " fields, got " +
                            std::to_string(csv.rows[r].size()));
    }
    const std::string& id = csv.rows[r][0];
    if (id.empty()) throw parse_error(path, line, "empty instance id");
    if (!seen_ids.insert(id).second) {
      throw parse_error(path, line, "duplicate instance id '" + id + "'");
    }
    for (std::size_t k = 0; k < n_classes; ++k) {
      row[k] = detail::parse_probability_field(csv, r, k + 1);
    }
    try {
      validate_probability_vector(row);
    } catch (const input_error& e) {
      throw parse_error(path, line, e.what());
    }
    out.ids.push_back(id);
    out.probs.append_row(row);
  }
  if (out.ids.empty()) throw parse_error(path, 1, "no data rows");
  return out;
}

/// Reads `id,label`, requiring ids to match `expected_ids` in exact file
/// order. Misalignment is an error, never a silent reindex.
inline std::vector<int> load_labels(const std::string& path,
                                    const std::vector<std::string>& class_names,
                                    std::span<const std::string> expected_ids) {
  const detail::CsvFile csv = detail::read_csv(path);
  const std::vector<std::string> header{"id", "label"};
  detail::check_expected_header(csv, header);
  if (csv.rows.size() != expected_ids.size()) {
    throw input_error("'" + path + "' has " + std::to_string(csv.rows.size()) +
                      " labels but the probability file has " +
                      std::to_string(expected_ids.size()) + " instances");
  }
  std::vector<int> labels;
  labels.reserve(csv.rows.size());
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const long line = csv.line_numbers[r];
    if (csv.rows[r].size() != 2) {
      throw parse_error(path, line, "expected 2 fields, got " +
                                        std::to_string(csv.rows[r].size()));
    }
    if (csv.rows[r][0] != expected_ids[r]) {
      throw parse_error(path, line,
                        "instance id '" + csv.rows[r][0] + "' does not match '" +
                            expected_ids[r] + "' from the probability file (row order "
                            "must align exactly)");
    }
    labels.push_back(detail::resolve_label(csv.rows[r][1], class_names, path, line));
  }
  return labels;
}

/// Reads long-format `id,annotator,label` records and groups them per
/// expected instance. Every expected instance needs at least one record;
/// records for unknown instances are an error.
inline AnnotationTable load_annotations(const std::string& path,
                                        const std::vector<std::string>& class_names,
                                        std::span<const std::string> expected_ids) {
  const detail::CsvFile csv = detail::read_csv(path);
  const std::vector<std::string> header{"id", "annotator", "label"};
  detail::check_expected_header(csv, header);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < expected_ids.size(); ++i) index[expected_ids[i]] = i;
  AnnotationTable table;
  table.records.resize(expected_ids.size());
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const long line = csv.line_numbers[r];
    if (csv.rows[r].size() != 3) {
      throw parse_error(path, line, "expected 3 fields, got " +
                                        std::to_string(csv.rows[r].size()));
    }
    const auto it = index.find(csv.rows[r][0]);
    if (it == index.end()) {
      throw parse_error(path, line, "unknown instance id '" + csv.rows[r][0] + "'");
    }
    if (csv.rows[r][1].empty()) throw parse_error(path, line, "empty annotator id");
    const int label = detail::resolve_label(csv.rows[r][2], class_names, path, line);
    table.records[it->second].push_back({csv.rows[r][1], label});
  }
  for (std::size_t i = 0; i < expected_ids.size(); ++i) {
    if (table.records[i].empty()) {
      throw input_error("'" + path + "' has no annotations for instance '" +
                        expected_ids[i] + "'");
    }
  }
  return table;
}

/// Reads `id,classes` where classes is a space-joined list of class names
/// (empty field = empty set), aligned to expected_ids in exact order.
inline std::vector<PredictionSet> load_sets(const std::string& path,
                                            const std::vector<std::string>& class_names,
                                            std::span<const std::string> expected_ids) {
  const detail::CsvFile csv = detail::read_csv(path);
  const std::vector<std::string> header{"id", "classes"};
  detail::check_expected_header(csv, header);
  if (csv.rows.size() != expected_ids.size()) {
    throw input_error("'" + path + "' has " + std::to_string(csv.rows.size()) +
                      " rows but " + std::to_string(expected_ids.size()) +
                      " instances were expected");
  }
  std::vector<PredictionSet> sets;
  sets.reserve(csv.rows.size());
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const long line = csv.line_numbers[r];
    if (csv.rows[r].size() != 2) {
      throw parse_error(path, line, "expected 2 fields, got " +
                                        std::to_string(csv.rows[r].size()));
    }
    if (csv.rows[r][0] != expected_ids[r]) {
      throw parse_error(path, line,
                        "instance id '" + csv.rows[r][0] + "' does not match '" +
                            expected_ids[r] + "' (row order must align exactly)");
    }
    PredictionSet set;
    std::istringstream tokens(csv.rows[r][1]);
    std::string token;
    std::set<int> seen;
    while (tokens >> token) {
      const int label = detail::resolve_label(token, class_names, path, line);
      if (!seen.insert(label).second) {
        throw parse_error(path, line, "duplicate class '" + token + "' in set");
      }
      set.push_back(label);
    }
    sets.push_back(std::move(set));
  }
  return sets;
}

// ---------------------------------------------------------------------------
// writers

namespace detail {

inline std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw input_error("cannot write '" + path + "'");
  return out;
}

}  // namespace detail

inline void write_probabilities(const std::string& path,
                                std::span<const std::string> ids,
                                const std::vector<std::string>& class_names,
                                const ProbabilityMatrix& probs) {
  if (ids.size() != probs.rows() || class_names.size() != probs.cols()) {
    throw input_error("probability writer given misaligned pieces");
  }
  std::ofstream out = detail::open_for_write(path);
  out << "id";
  for (const auto& name : class_names) out << ',' << name;
  out << '\n';
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    out << ids[i];
    for (double p : probs.row(i)) out << ',' << format_double(p);
    out << '\n';
  }
}

inline void write_labels(const std::string& path, std::span<const std::string> ids,
                         const std::vector<std::string>& class_names,
                         std::span<const int> labels) {
  if (ids.size() != labels.size()) throw input_error("label writer given misaligned pieces");
  std::ofstream out = detail::open_for_write(path);
  out << "id,label\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i] << ',' << class_names.at(labels[i]) << '\n';
  }
}

inline void write_annotations(const std::string& path, std::span<const std::string> ids,
                              const std::vector<std::string>& class_names,
                              const AnnotationTable& table) {
  if (ids.size() != table.records.size()) {
    throw input_error("annotation writer given misaligned pieces");
  }
  std::ofstream out = detail::open_for_write(path);
  out << "id,annotator,label\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (const auto& rec : table.records[i]) {
      out << ids[i] << ',' << rec.annotator << ',' << class_names.at(rec.label) << '\n';
    }
  }
}

inline void write_sets(const std::string& path, std::span<const std::string> ids,
                       const std::vector<std::string>& class_names,
                       const std::vector<PredictionSet>& sets) {
  if (ids.size() != sets.size()) throw input_error("set writer given misaligned pieces");
  std::ofstream out = detail::open_for_write(path);
  out << "id,classes\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i] << ',';
    for (std::size_t j = 0; j < sets[i].size(); ++j) {
      if (j > 0) out << ' ';
      out << class_names.at(sets[i][j]);
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// manifests and reports

struct InputFile {
  std::string role;
  std::string path;
};

/// Run manifest: tool identity, the subcommand, its parameters, and a
/// digest per input file — enough to re-run bit-identically. No
/// timestamps, so reruns stay byte-identical.
inline ordered_json manifest_json(const std::string& command, ordered_json parameters,
                                  const std::vector<InputFile>& inputs) {
  ordered_json m;
  m["tool"] = kToolName;
  m["version"] = kToolVersion;
  m["command"] = command;
  m["parameters"] = std::move(parameters);
  ordered_json files = ordered_json::array();
  for (const auto& in : inputs) {
    ordered_json f;
    f["role"] = in.role;
    f["path"] = in.path;
    f["digest"] = file_digest(in.path);
    files.push_back(std::move(f));
  }
  m["inputs"] = std::move(files);
  return m;
}

inline void write_json(const std::string& path, const ordered_json& doc) {
  std::ofstream out = detail::open_for_write(path);
  out << doc.dump(2) << '\n';
}

/// Report skeleton: the five fixed top-level keys, unfilled sections null.
inline ordered_json report_skeleton(ordered_json manifest) {
  ordered_json report;
  report["manifest"] = std::move(manifest);
  report["performance"] = nullptr;
  report["correlation"] = nullptr;
  report["similarity"] = nullptr;
  report["histograms"] = nullptr;
  return report;
}

inline ordered_json correlation_json(const CorrelationResult& r) {
  ordered_json j;
  j["r_s"] = round6(r.r_s);
  j["p_value"] = round6(r.p_value);
  j["n_used"] = r.n_used;
  j["strength"] = correlation_strength(r.r_s);
  return j;
}

// ---------------------------------------------------------------------------
// calibrated-predictor artifact

struct PredictorArtifact {
  CalibratedPredictor predictor;
  std::vector<std::string> class_names;
  std::optional<LambdaTuneResult> tuning;
};

inline ordered_json predictor_json(const PredictorArtifact& art, ordered_json manifest) {
  const auto& pred = art.predictor;
  ordered_json j;
  j["kind"] = "calibrated_predictor";
  j["method"] = method_name(pred.config.method);
  j["lambda"] = pred.config.lambda;
  j["k_reg"] = pred.config.k_reg;
  j["alpha"] = pred.alpha;
  // full precision: this threshold is reloaded for prediction, never displayed
  if (pred.q_hat.has_value()) {
    j["q_hat"] = *pred.q_hat;
  } else {
    j["q_hat"] = nullptr;
  }
  j["full_set"] = pred.full_set();
  j["n_cal"] = pred.n_cal;
  j["class_names"] = art.class_names;
  if (art.tuning.has_value()) {
    ordered_json t;
    t["chosen_lambda"] = art.tuning->chosen;
    ordered_json rows = ordered_json::array();
    for (const auto& e : art.tuning->table) {
      ordered_json row;
      row["lambda"] = e.lambda;
      row["holdout_coverage"] = e.holdout_coverage;
      row["holdout_mean_set_size"] = e.holdout_mean_set_size;
      rows.push_back(std::move(row));
    }
    t["table"] = std::move(rows);
    j["tuning"] = std::move(t);
  } else {
    j["tuning"] = nullptr;
  }
  j["manifest"] = std::move(manifest);
  return j;
}

inline PredictorArtifact load_predictor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open '" + path + "'");
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(path, 1, std::string("invalid JSON: ") + e.what());
  }
  try {
    if (j.at("kind").get<std::string>() != "calibrated_predictor") {
      throw input_error("not a calibrated predictor artifact");
    }
    PredictorArtifact art;
    art.predictor.config.method = method_from_name(j.at("method").get<std::string>());
    art.predictor.config.lambda = j.at("lambda").get<double>();
    art.predictor.config.k_reg = j.at("k_reg").get<int>();
    art.predictor.alpha = j.at("alpha").get<double>();
    if (!j.at("q_hat").is_null()) art.predictor.q_hat = j.at("q_hat").get<double>();
    art.predictor.n_cal = j.at("n_cal").get<long>();
    art.class_names = j.at("class_names").get<std::vector<std::string>>();
    art.predictor.n_classes = static_cast<int>(art.class_names.size());
    if (art.predictor.n_classes < 2) {
      throw input_error("artifact lists fewer than two classes");
    }
    validate_method_config(art.predictor.config);
    if (j.at("full_set").get<bool>() != art.predictor.full_set()) {
      throw input_error("artifact full_set flag disagrees with q_hat");
    }
    return art;
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(path, 1, std::string("bad artifact: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// bundles

/// A full two-split dataset with test-instance annotations: consistent K,
/// unique ids within each split, disjoint splits.
struct DatasetBundle {
  std::vector<std::string> class_names;
  std::vector<std::string> cal_ids;
  ProbabilityMatrix cal_probs;
  std::vector<int> cal_labels;
  std::vector<std::string> test_ids;
  ProbabilityMatrix test_probs;
  std::vector<int> test_labels;
  AnnotationTable annotations;  // test instances
};

inline DatasetBundle load_bundle(const std::string& cal_probs_path,
                                 const std::string& cal_labels_path,
                                 const std::string& test_probs_path,
                                 const std::string& test_labels_path,
                                 const std::string& annotations_path) {
  LoadedProbabilities cal = load_probabilities(cal_probs_path);
  LoadedProbabilities test = load_probabilities(test_probs_path);
  if (cal.class_names != test.class_names) {
    throw input_error("calibration and test probability files disagree on class names");
  }
  DatasetBundle b;
  b.class_names = std::move(cal.class_names);
  b.cal_labels = load_labels(cal_labels_path, b.class_names, cal.ids);
  b.test_labels = load_labels(test_labels_path, b.class_names, test.ids);
  b.annotations = load_annotations(annotations_path, b.class_names, test.ids);
  std::set<std::string> cal_set(cal.ids.begin(), cal.ids.end());
  for (const auto& id : test.ids) {
    if (cal_set.count(id)) {
      throw input_error("instance id '" + id + "' appears in both splits");
    }
  }
  b.cal_ids = std::move(cal.ids);
  b.cal_probs = std::move(cal.probs);
  b.test_ids = std::move(test.ids);
  b.test_probs = std::move(test.probs);
  return b;
}

inline void write_bundle(const std::filesystem::path& dir, const DatasetBundle& b) {
  std::filesystem::create_directories(dir);
  write_probabilities((dir / "cal_probabilities.csv").string(), b.cal_ids, b.class_names,
                      b.cal_probs);
  write_labels((dir / "cal_labels.csv").string(), b.cal_ids, b.class_names, b.cal_labels);
  write_probabilities((dir / "test_probabilities.csv").string(), b.test_ids, b.class_names,
                      b.test_probs);
  write_labels((dir / "test_labels.csv").string(), b.test_ids, b.class_names,
               b.test_labels);
  write_annotations((dir / "test_annotations.csv").string(), b.test_ids, b.class_names,
                    b.annotations);
}

}  // namespace coverset
