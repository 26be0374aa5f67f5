// coverset: split-conformal prediction sets (LAC/APS/RAPS) and their
// relationship to annotation ambiguity, as a batch CLI.
//
// Exit codes: 0 success, 1 usage error, 2 input/validation error,
// 3 undefined-statistic condition.

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "coverset/ambiguity.hpp"
#include "coverset/conformal.hpp"
#include "coverset/dataio.hpp"
#include "coverset/errors.hpp"
#include "coverset/matrix.hpp"
#include "coverset/metrics.hpp"
#include "coverset/sweep.hpp"
#include "coverset/synth.hpp"
#include "coverset/version.hpp"

namespace {

using coverset::ordered_json;

// ---------------------------------------------------------------------------
// shared option bundles

struct SetsSource {
  std::string sets_path;
  std::string predictor_path;

  void attach(CLI::App* cmd) {
    auto* sets = cmd->add_option("--sets", sets_path,
                                 "Prediction sets CSV (from `predict`)");
    auto* pred = cmd->add_option("--predictor", predictor_path,
                                 "Calibrated predictor artifact (sets built on the fly)");
    sets->excludes(pred);
    pred->excludes(sets);
  }

  // Builds or loads the prediction sets for `probs`, recording the extra
  // manifest input and a description of where sets came from.
  std::vector<coverset::PredictionSet> resolve(
      const coverset::LoadedProbabilities& probs,
      std::vector<coverset::InputFile>& inputs, std::string& source) const {
    if (!sets_path.empty()) {
      inputs.push_back({"sets", sets_path});
      source = "file";
      return coverset::load_sets(sets_path, probs.class_names, probs.ids);
    }
    if (!predictor_path.empty()) {
      inputs.push_back({"predictor", predictor_path});
      source = "predictor";
      const coverset::PredictorArtifact art = coverset::load_predictor(predictor_path);
      if (art.class_names != probs.class_names) {
        throw coverset::input_error(
            "predictor artifact and probability file disagree on class names");
      }
      return coverset::build_sets(probs.probs, art.predictor);
    }
    throw coverset::input_error("provide either --sets or --predictor");
  }
};

long count_empty(const std::vector<coverset::PredictionSet>& sets) {
  long n = 0;
  for (const auto& s : sets) {
    if (s.empty()) ++n;
  }
  return n;
}

ordered_json correlation_or_null(const std::vector<coverset::PredictionSet>& sets,
                                 std::span<const double> signal, bool exclude_empty,
                                 bool& undefined_seen) {
  std::vector<double> sizes;
  std::vector<double> kept;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (exclude_empty && sets[i].empty()) continue;
    sizes.push_back(static_cast<double>(sets[i].size()));
    kept.push_back(signal[i]);
  }
  if (sizes.size() < 2) {
    throw coverset::input_error("fewer than two usable instances after exclusions (" +
                                std::to_string(sizes.size()) + ")");
  }
  try {
    return coverset::correlation_json(coverset::spearman_rs(sizes, kept));
  } catch (const coverset::undefined_statistic_error& e) {
    undefined_seen = true;
    ordered_json j;
    j["r_s"] = nullptr;
    j["p_value"] = nullptr;
    j["n_used"] = static_cast<long>(sizes.size());
    j["undefined_reason"] = e.what();
    return j;
  }
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateOptions {
  std::string cal_probs_path;
  std::string cal_labels_path;
  std::string out_path;
  std::string method_str;
  double alpha = 0.1;
  std::optional<double> lambda;
  std::vector<double> lambda_grid{coverset::kDefaultLambdaGrid.begin(),
                                  coverset::kDefaultLambdaGrid.end()};
  int k_reg = 1;
  std::uint64_t seed = 0;
};

void run_calibrate(const CalibrateOptions& opt) {
  const coverset::LoadedProbabilities cal = coverset::load_probabilities(opt.cal_probs_path);
  const std::vector<int> labels =
      coverset::load_labels(opt.cal_labels_path, cal.class_names, cal.ids);

  coverset::MethodConfig cfg;
  cfg.method = coverset::method_from_name(opt.method_str);
  std::optional<coverset::LambdaTuneResult> tuning;
  if (cfg.method == coverset::Method::raps) {
    cfg.k_reg = opt.k_reg;
    if (opt.lambda.has_value()) {
      cfg.lambda = *opt.lambda;
    } else {
      tuning = coverset::tune_raps_lambda(cal.probs, labels, opt.lambda_grid, opt.alpha,
                                          0.2, opt.seed, opt.k_reg);
      cfg.lambda = tuning->chosen;
    }
  } else if (opt.lambda.has_value()) {
    throw coverset::input_error("--lambda is only meaningful with --method raps");
  }

  coverset::PredictorArtifact art;
  art.predictor = coverset::calibrate(cal.probs, labels, cfg, opt.alpha);
  art.class_names = cal.class_names;
  art.tuning = std::move(tuning);

  ordered_json params;
  params["method"] = opt.method_str;
  params["alpha"] = opt.alpha;
  if (opt.lambda.has_value()) {
    params["lambda"] = *opt.lambda;
  } else {
    params["lambda"] = nullptr;
  }
  if (cfg.method == coverset::Method::raps) {
    params["lambda_grid"] = opt.lambda_grid;
    params["k_reg"] = opt.k_reg;
  }
  params["seed"] = opt.seed;
  const ordered_json manifest = coverset::manifest_json(
      "calibrate", std::move(params),
      {{"calibration_probabilities", opt.cal_probs_path},
       {"calibration_labels", opt.cal_labels_path}});
  coverset::write_json(opt.out_path, coverset::predictor_json(art, manifest));
}

// ---------------------------------------------------------------------------
// predict

struct PredictOptions {
  std::string predictor_path;
  std::string probs_path;
  std::string out_path;
};

void run_predict(const PredictOptions& opt) {
  const coverset::PredictorArtifact art = coverset::load_predictor(opt.predictor_path);
  const coverset::LoadedProbabilities lp = coverset::load_probabilities(opt.probs_path);
  if (lp.class_names != art.class_names) {
    throw coverset::input_error(
        "predictor artifact and probability file disagree on class names");
  }
  const std::vector<coverset::PredictionSet> sets =
      coverset::build_sets(lp.probs, art.predictor);
  coverset::write_sets(opt.out_path, lp.ids, lp.class_names, sets);
  const ordered_json manifest = coverset::manifest_json(
      "predict", ordered_json::object(),
      {{"predictor", opt.predictor_path}, {"probabilities", opt.probs_path}});
  coverset::write_json(opt.out_path + ".manifest.json", manifest);
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
  std::string probs_path;
  std::string labels_path;
  SetsSource sets_source;
  std::string out_path;
  int bins = coverset::kDefaultEceBins;
};

void run_evaluate(const EvaluateOptions& opt) {
  const coverset::LoadedProbabilities lp = coverset::load_probabilities(opt.probs_path);
  const std::vector<int> labels =
      coverset::load_labels(opt.labels_path, lp.class_names, lp.ids);
  std::vector<coverset::InputFile> inputs{{"probabilities", opt.probs_path},
                                          {"labels", opt.labels_path}};
  std::string source;
  coverset::EvaluationBatch batch;
  batch.sets = opt.sets_source.resolve(lp, inputs, source);
  batch.labels = labels;

  ordered_json params;
  params["bins"] = opt.bins;
  params["sets_source"] = source;
  ordered_json report = coverset::report_skeleton(
      coverset::manifest_json("evaluate", std::move(params), inputs));

  ordered_json perf;
  perf["n_instances"] = static_cast<long>(batch.sets.size());
  perf["n_empty_sets"] = count_empty(batch.sets);
  perf["coverage"] = coverset::round6(coverset::coverage(batch));
  perf["ssc"] = coverset::round6(coverset::size_stratified_coverage(batch));
  perf["mean_set_size"] = coverset::round6(coverset::mean_set_size(batch));
  perf["ece"] = coverset::round6(coverset::ece(lp.probs, labels, opt.bins));
  perf["ece_bin_count"] = opt.bins;
  report["performance"] = std::move(perf);

  ordered_json hist;
  ordered_json size_rows = ordered_json::array();
  for (const auto& [size, count] : coverset::size_histogram(batch)) {
    ordered_json row;
    row["size"] = size;
    row["count"] = count;
    size_rows.push_back(std::move(row));
  }
  hist["set_size"] = std::move(size_rows);
  ordered_json cov_rows = ordered_json::array();
  for (const auto& g : coverset::coverage_by_size(batch)) {
    ordered_json row;
    row["size"] = g.size;
    row["count"] = g.count;
    row["coverage"] = coverset::round6(g.coverage);
    cov_rows.push_back(std::move(row));
  }
  hist["coverage_by_size"] = std::move(cov_rows);
  ordered_json bin_rows = ordered_json::array();
  for (const auto& b : coverset::ece_bins(lp.probs, labels, opt.bins)) {
    ordered_json row;
    row["bin_index"] = b.bin_index;
    row["count"] = b.count;
    row["mean_confidence"] = coverset::round6(b.mean_confidence);
    row["accuracy"] = coverset::round6(b.accuracy);
    bin_rows.push_back(std::move(row));
  }
  hist["ece_bins"] = std::move(bin_rows);
  report["histograms"] = std::move(hist);

  coverset::write_json(opt.out_path, report);
}

// ---------------------------------------------------------------------------
// correlate

struct CorrelateOptions {
  std::string probs_path;
  std::string annotations_path;
  SetsSource sets_source;
  std::string out_path;
  bool exclude_empty = true;
  std::vector<int> size_caps;  // empty = default 2..max observed size
  long permutation_trials = 0;
  std::uint64_t seed = 0;
};

void run_correlate(const CorrelateOptions& opt) {
  const coverset::LoadedProbabilities lp = coverset::load_probabilities(opt.probs_path);
  const coverset::AnnotationTable table =
      coverset::load_annotations(opt.annotations_path, lp.class_names, lp.ids);
  std::vector<coverset::InputFile> inputs{{"probabilities", opt.probs_path},
                                          {"annotations", opt.annotations_path}};
  std::string source;
  const std::vector<coverset::PredictionSet> sets =
      opt.sets_source.resolve(lp, inputs, source);
  const coverset::OverlapProfile profile = coverset::overlap_profile(table);

  std::vector<double> overlap_signal;
  overlap_signal.reserve(profile.instances.size());
  for (const auto& inst : profile.instances) {
    overlap_signal.push_back(static_cast<double>(inst.distinct_labels));
  }
  std::vector<double> entropy_signal;
  entropy_signal.reserve(lp.probs.rows());
  for (std::size_t i = 0; i < lp.probs.rows(); ++i) {
    entropy_signal.push_back(coverset::softmax_entropy(lp.probs.row(i)));
  }

  std::vector<int> caps = opt.size_caps;
  if (caps.empty()) {
    int max_size = 2;
    for (const auto& s : sets) max_size = std::max(max_size, static_cast<int>(s.size()));
    for (int c = 2; c <= max_size; ++c) caps.push_back(c);
  }

  ordered_json params;
  params["exclude_empty"] = opt.exclude_empty;
  params["size_caps"] = caps;
  params["permutation_trials"] = opt.permutation_trials;
  if (opt.permutation_trials > 0) params["seed"] = opt.seed;
  params["sets_source"] = source;
  ordered_json report = coverset::report_skeleton(
      coverset::manifest_json("correlate", std::move(params), inputs));

  bool undefined_seen = false;
  ordered_json corr;
  corr["n_instances"] = static_cast<long>(sets.size());
  corr["n_empty_sets"] = count_empty(sets);
  corr["exclude_empty"] = opt.exclude_empty;
  corr["mean_annotators"] = coverset::round6(table.mean_annotators());
  corr["overlap_fraction"] = coverset::round6(profile.overlap_fraction());
  corr["mean_distinct_labels"] = coverset::round6(profile.mean_distinct_labels());
  corr["overlap"] =
      correlation_or_null(sets, overlap_signal, opt.exclude_empty, undefined_seen);
  corr["entropy"] =
      correlation_or_null(sets, entropy_signal, opt.exclude_empty, undefined_seen);

  // the incremental sweep always works on non-empty sets (1 <= |set| <= cap)
  ordered_json sweep_rows = ordered_json::array();
  for (const auto& point : coverset::incremental_sweep(sets, overlap_signal, caps, true)) {
    ordered_json row;
    row["cap"] = point.cap;
    if (point.result.has_value()) {
      row["r_s"] = coverset::round6(point.result->r_s);
      row["p_value"] = coverset::round6(point.result->p_value);
      row["n_used"] = point.result->n_used;
      row["strength"] = coverset::correlation_strength(point.result->r_s);
    } else {
      row["r_s"] = nullptr;
      row["skip_reason"] = point.skip_reason;
    }
    sweep_rows.push_back(std::move(row));
  }
  corr["size_sweep"] = std::move(sweep_rows);

  if (opt.permutation_trials > 0) {
    std::vector<double> sizes;
    std::vector<double> kept_overlap;
    std::vector<double> kept_entropy;
    for (std::size_t i = 0; i < sets.size(); ++i) {
      if (opt.exclude_empty && sets[i].empty()) continue;
      sizes.push_back(static_cast<double>(sets[i].size()));
      kept_overlap.push_back(overlap_signal[i]);
      kept_entropy.push_back(entropy_signal[i]);
    }
    ordered_json perm;
    perm["trials"] = opt.permutation_trials;
    const auto perm_or_null = [&](std::span<const double> y, std::uint64_t stream) {
      try {
        return ordered_json(coverset::round6(coverset::permutation_p_value(
            sizes, y, opt.permutation_trials, coverset::derive_seed(opt.seed, stream))));
      } catch (const coverset::undefined_statistic_error&) {
        return ordered_json(nullptr);
      }
    };
    perm["overlap_p_value"] = perm_or_null(kept_overlap, 0);
    perm["entropy_p_value"] = perm_or_null(kept_entropy, 1);
    corr["permutation"] = std::move(perm);
  } else {
    corr["permutation"] = nullptr;
  }

  report["correlation"] = std::move(corr);
  coverset::write_json(opt.out_path, report);
  if (undefined_seen) {
    throw coverset::undefined_statistic_error(
        "a requested correlation was undefined; see the null markers in " + opt.out_path);
  }
}

// ---------------------------------------------------------------------------
// similarity

struct SimilarityOptions {
  std::string probs_path;
  std::string annotations_path;
  SetsSource sets_source;
  std::string out_path;
  bool exclude_empty = true;
};

void run_similarity(const SimilarityOptions& opt) {
  const coverset::LoadedProbabilities lp = coverset::load_probabilities(opt.probs_path);
  const coverset::AnnotationTable table =
      coverset::load_annotations(opt.annotations_path, lp.class_names, lp.ids);
  std::vector<coverset::InputFile> inputs{{"probabilities", opt.probs_path},
                                          {"annotations", opt.annotations_path}};
  std::string source;
  const std::vector<coverset::PredictionSet> sets =
      opt.sets_source.resolve(lp, inputs, source);
  const coverset::OverlapProfile profile = coverset::overlap_profile(table);

  ordered_json params;
  params["exclude_empty"] = opt.exclude_empty;
  params["sets_source"] = source;
  ordered_json report = coverset::report_skeleton(
      coverset::manifest_json("similarity", std::move(params), inputs));

  const coverset::SimilarityReport sim = coverset::similarity(
      sets, profile, static_cast<int>(lp.class_names.size()), opt.exclude_empty);
  ordered_json s;
  s["n_instances"] = static_cast<long>(sets.size());
  s["n_empty_sets"] = count_empty(sets);
  s["exclude_empty"] = opt.exclude_empty;
  s["n_used"] = sim.n_used;
  s["precision"] = coverset::round6(sim.precision);
  s["recall"] = coverset::round6(sim.recall);
  s["subset_accuracy"] = coverset::round6(sim.subset_accuracy);
  s["hamming_loss"] = coverset::round6(sim.hamming);
  report["similarity"] = std::move(s);
  coverset::write_json(opt.out_path, report);
}

// ---------------------------------------------------------------------------
// sweep-alpha

struct SweepAlphaOptions {
  std::string cal_probs_path;
  std::string cal_labels_path;
  std::string test_probs_path;
  std::string test_labels_path;
  std::string out_path;
  std::string method_str;
  std::vector<double> alpha_grid{coverset::kDefaultAlphaGrid.begin(),
                                 coverset::kDefaultAlphaGrid.end()};
  std::optional<double> lambda;
  std::vector<double> lambda_grid{coverset::kDefaultLambdaGrid.begin(),
                                  coverset::kDefaultLambdaGrid.end()};
  int k_reg = 1;
  std::uint64_t seed = 0;
  bool select_on_test = false;
};

void run_sweep_alpha(const SweepAlphaOptions& opt) {
  const coverset::LoadedProbabilities cal = coverset::load_probabilities(opt.cal_probs_path);
  const std::vector<int> cal_labels =
      coverset::load_labels(opt.cal_labels_path, cal.class_names, cal.ids);
  const coverset::Method method = coverset::method_from_name(opt.method_str);
  if (method != coverset::Method::raps && opt.lambda.has_value()) {
    throw coverset::input_error("--lambda is only meaningful with --method raps");
  }

  std::vector<coverset::InputFile> inputs{
      {"calibration_probabilities", opt.cal_probs_path},
      {"calibration_labels", opt.cal_labels_path}};
  coverset::AlphaSweepResult result;
  std::string mode;
  if (opt.select_on_test) {
    if (opt.test_probs_path.empty() || opt.test_labels_path.empty()) {
      throw coverset::input_error(
          "--select-on-test needs --test-probs and --test-labels");
    }
    const coverset::LoadedProbabilities test =
        coverset::load_probabilities(opt.test_probs_path);
    if (test.class_names != cal.class_names) {
      throw coverset::input_error(
          "calibration and test probability files disagree on class names");
    }
    const std::vector<int> test_labels =
        coverset::load_labels(opt.test_labels_path, test.class_names, test.ids);
    inputs.push_back({"test_probabilities", opt.test_probs_path});
    inputs.push_back({"test_labels", opt.test_labels_path});
    result = coverset::sweep_alpha_scored(cal.probs, cal_labels, test.probs, test_labels,
                                          method, opt.alpha_grid, opt.lambda,
                                          opt.lambda_grid, opt.k_reg, opt.seed);
    mode = "test";
  } else {
    if (!opt.test_probs_path.empty() || !opt.test_labels_path.empty()) {
      throw coverset::input_error(
          "--test-probs/--test-labels are only used with --select-on-test");
    }
    result = coverset::sweep_alpha_holdout(cal.probs, cal_labels, method, opt.alpha_grid,
                                           opt.lambda, opt.lambda_grid, opt.k_reg, 0.2,
                                           opt.seed);
    mode = "calibration-holdout";
  }

  ordered_json params;
  params["method"] = opt.method_str;
  params["alpha_grid"] = opt.alpha_grid;
  if (opt.lambda.has_value()) {
    params["lambda"] = *opt.lambda;
  } else {
    params["lambda"] = nullptr;
  }
  if (method == coverset::Method::raps) {
    params["lambda_grid"] = opt.lambda_grid;
    params["k_reg"] = opt.k_reg;
  }
  params["seed"] = opt.seed;
  params["select_on_test"] = opt.select_on_test;
  ordered_json report = coverset::report_skeleton(
      coverset::manifest_json("sweep-alpha", std::move(params), inputs));

  ordered_json perf;
  perf["mode"] = mode;
  perf["selected_alpha"] = result.selected_alpha;
  ordered_json rows = ordered_json::array();
  for (const auto& e : result.table) {
    ordered_json row;
    row["alpha"] = e.alpha;
    if (method == coverset::Method::raps) row["lambda"] = e.lambda_used;
    row["coverage"] = coverset::round6(e.coverage);
    row["mean_set_size"] = coverset::round6(e.mean_set_size);
    if (e.ratio.has_value()) {
      row["ratio"] = coverset::round6(*e.ratio);
    } else {
      row["ratio"] = nullptr;
    }
    rows.push_back(std::move(row));
  }
  perf["grid"] = std::move(rows);
  report["performance"] = std::move(perf);
  coverset::write_json(opt.out_path, report);
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  coverset::SynthConfig cfg;
  std::string out_dir;
};

void run_synth(const SynthOptions& opt) {
  const coverset::SynthBundle bundle = coverset::generate(opt.cfg);
  coverset::write_bundle(opt.out_dir, bundle.data);
  ordered_json params;
  params["classes"] = opt.cfg.n_classes;
  params["n_cal"] = opt.cfg.n_cal;
  params["n_test"] = opt.cfg.n_test;
  params["concentration"] = opt.cfg.concentration;
  params["annotators"] = opt.cfg.annotators;
  params["seed"] = opt.cfg.seed;
  params["miscalibration"] = opt.cfg.miscalibration;
  params["deterministic"] = opt.cfg.deterministic;
  const ordered_json manifest = coverset::manifest_json("synth", std::move(params), {});
  coverset::write_json((std::filesystem::path(opt.out_dir) / "manifest.json").string(),
                       manifest);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformal prediction sets and annotation-ambiguity analysis", "coverset"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(coverset::kToolVersion));

  CalibrateOptions cal_opt;
  {
    auto* cmd = app.add_subcommand(
        "calibrate", "Compute a conformal threshold from calibration data");
    cmd->add_option("--cal-probs", cal_opt.cal_probs_path,
                    "Calibration probabilities CSV")->required();
    cmd->add_option("--cal-labels", cal_opt.cal_labels_path,
                    "Calibration labels CSV")->required();
    cmd->add_option("--method", cal_opt.method_str, "Score family")
        ->required()
        ->check(CLI::IsMember({"lac", "aps", "raps"}));
    cmd->add_option("--alpha", cal_opt.alpha, "Miscoverage level in (0,1)")
        ->capture_default_str();
    cmd->add_option("--lambda", cal_opt.lambda,
                    "RAPS penalty weight (omit to tune on a held-out 20% split)");
    cmd->add_option("--lambda-grid", cal_opt.lambda_grid, "Candidate RAPS penalties")
        ->delimiter(',')
        ->capture_default_str();
    cmd->add_option("--k-reg", cal_opt.k_reg, "RAPS target set size")
        ->capture_default_str();
    cmd->add_option("--seed", cal_opt.seed, "Seed for the tuning split")
        ->capture_default_str();
    cmd->add_option("--out", cal_opt.out_path, "Predictor artifact path (JSON)")
        ->required();
    cmd->callback([&cal_opt]() { run_calibrate(cal_opt); });
  }

  PredictOptions pred_opt;
  {
    auto* cmd = app.add_subcommand("predict", "Emit prediction sets for new instances");
    cmd->add_option("--predictor", pred_opt.predictor_path,
                    "Calibrated predictor artifact")->required();
    cmd->add_option("--probs", pred_opt.probs_path, "Probabilities CSV")->required();
    cmd->add_option("--out", pred_opt.out_path,
                    "Output sets CSV (a .manifest.json sidecar is written too)")
        ->required();
    cmd->callback([&pred_opt]() { run_predict(pred_opt); });
  }

  EvaluateOptions eval_opt;
  {
    auto* cmd = app.add_subcommand(
        "evaluate", "Coverage, SSC, mean set size, ECE, and size histograms");
    cmd->add_option("--probs", eval_opt.probs_path, "Probabilities CSV")->required();
    cmd->add_option("--labels", eval_opt.labels_path, "True labels CSV")->required();
    eval_opt.sets_source.attach(cmd);
    cmd->add_option("--bins", eval_opt.bins, "ECE bin count")->capture_default_str();
    cmd->add_option("--out", eval_opt.out_path, "Report path (JSON)")->required();
    cmd->callback([&eval_opt]() { run_evaluate(eval_opt); });
  }

  CorrelateOptions corr_opt;
  {
    auto* cmd = app.add_subcommand(
        "correlate",
        "Rank correlation of set size with annotation overlap and softmax entropy");
    cmd->add_option("--probs", corr_opt.probs_path, "Probabilities CSV")->required();
    cmd->add_option("--annotations", corr_opt.annotations_path,
                    "Long-format annotations CSV")->required();
    corr_opt.sets_source.attach(cmd);
    cmd->add_flag("--exclude-empty,!--no-exclude-empty", corr_opt.exclude_empty,
                  "Drop empty prediction sets from the correlations (default on)");
    cmd->add_option("--size-caps", corr_opt.size_caps,
                    "Caps for the incremental sweep (default 2..max observed size)")
        ->delimiter(',');
    cmd->add_option("--permutation-trials", corr_opt.permutation_trials,
                    "Also estimate permutation p-values with this many shuffles (slow)")
        ->capture_default_str();
    cmd->add_option("--seed", corr_opt.seed, "Seed for the permutation shuffles")
        ->capture_default_str();
    cmd->add_option("--out", corr_opt.out_path, "Report path (JSON)")->required();
    cmd->callback([&corr_opt]() { run_correlate(corr_opt); });
  }

  SimilarityOptions sim_opt;
  {
    auto* cmd = app.add_subcommand(
        "similarity",
        "Set-vs-annotation precision, recall, subset accuracy, and hamming loss");
    cmd->add_option("--probs", sim_opt.probs_path, "Probabilities CSV")->required();
    cmd->add_option("--annotations", sim_opt.annotations_path,
                    "Long-format annotations CSV")->required();
    sim_opt.sets_source.attach(cmd);
    cmd->add_flag("--exclude-empty,!--no-exclude-empty", sim_opt.exclude_empty,
                  "Drop empty prediction sets (default on)");
    cmd->add_option("--out", sim_opt.out_path, "Report path (JSON)")->required();
    cmd->callback([&sim_opt]() { run_similarity(sim_opt); });
  }

  SweepAlphaOptions sweep_opt;
  {
    auto* cmd = app.add_subcommand(
        "sweep-alpha",
        "Evaluate an alpha grid and select the ratio-minimizing alpha");
    cmd->add_option("--cal-probs", sweep_opt.cal_probs_path,
                    "Calibration probabilities CSV")->required();
    cmd->add_option("--cal-labels", sweep_opt.cal_labels_path,
                    "Calibration labels CSV")->required();
    cmd->add_option("--method", sweep_opt.method_str, "Score family")
        ->required()
        ->check(CLI::IsMember({"lac", "aps", "raps"}));
    cmd->add_option("--alpha-grid", sweep_opt.alpha_grid, "Alpha candidates")
        ->delimiter(',')
        ->capture_default_str();
    cmd->add_option("--lambda", sweep_opt.lambda,
                    "RAPS penalty weight (omit to tune per alpha)");
    cmd->add_option("--lambda-grid", sweep_opt.lambda_grid, "Candidate RAPS penalties")
        ->delimiter(',')
        ->capture_default_str();
    cmd->add_option("--k-reg", sweep_opt.k_reg, "RAPS target set size")
        ->capture_default_str();
    cmd->add_option("--seed", sweep_opt.seed, "Seed for the holdout split")
        ->capture_default_str();
    cmd->add_flag("--select-on-test", sweep_opt.select_on_test,
                  "Score the grid on supplied test data instead of a calibration "
                  "holdout (leaks test data into selection)");
    cmd->add_option("--test-probs", sweep_opt.test_probs_path,
                    "Test probabilities CSV (with --select-on-test)");
    cmd->add_option("--test-labels", sweep_opt.test_labels_path,
                    "Test labels CSV (with --select-on-test)");
    cmd->add_option("--out", sweep_opt.out_path, "Report path (JSON)")->required();
    cmd->callback([&sweep_opt]() { run_sweep_alpha(sweep_opt); });
  }

  SynthOptions synth_opt;
  {
    auto* cmd = app.add_subcommand(
        "synth", "Generate a synthetic bundle with controllable class overlap");
    cmd->add_option("--classes", synth_opt.cfg.n_classes, "Class count")
        ->capture_default_str();
    cmd->add_option("--n-cal", synth_opt.cfg.n_cal, "Calibration instances")->required();
    cmd->add_option("--n-test", synth_opt.cfg.n_test, "Test instances")->required();
    cmd->add_option("--concentration", synth_opt.cfg.concentration,
                    "Dirichlet concentration (small = heavy overlap)")
        ->capture_default_str();
    cmd->add_option("--annotators", synth_opt.cfg.annotators, "Annotator panel size")
        ->capture_default_str();
    cmd->add_option("--seed", synth_opt.cfg.seed, "Generator seed")
        ->capture_default_str();
    cmd->add_option("--miscalibration", synth_opt.cfg.miscalibration,
                    "Power distortion of emitted probabilities (0 = none)")
        ->capture_default_str();
    cmd->add_flag("--deterministic", synth_opt.cfg.deterministic,
                  "One-hot posteriors (the concentration → ∞ limit)");
    cmd->add_option("--out", synth_opt.out_dir, "Output directory")->required();
    cmd->callback([&synth_opt]() { run_synth(synth_opt); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      return app.exit(e);  // --help / --version
    }
    std::cerr << "coverset: " << e.what() << "\n";
    return 1;
  } catch (const coverset::undefined_statistic_error& e) {
    std::cerr << "coverset: " << e.what() << "\n";
    return 3;
  } catch (const coverset::input_error& e) {
    std::cerr << "coverset: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "coverset: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
