#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "coverset/conformal.hpp"
#include "coverset/dataio.hpp"
#include "coverset/errors.hpp"
#include "coverset/matrix.hpp"
#include "coverset/metrics.hpp"
#include "coverset/rng.hpp"

namespace coverset {

struct SynthConfig {
  int n_classes = 3;
  long n_cal = 0;
  long n_test = 0;
  double concentration = 1.0;  // posterior sharpness; small = heavy overlap
  int annotators = 1;
  std::uint64_t seed = 0;
  double miscalibration = 0.0;  // power distortion of emitted probabilities; 0 = none
  bool deterministic = false;   // concentration -> infinity limit: one-hot posteriors
};

inline void validate_synth_config(const SynthConfig& cfg) {
  if (cfg.n_classes < 2) throw input_error("synth needs at least 2 classes");
  if (cfg.n_cal < 1) throw input_error("synth needs a positive calibration count");
  if (cfg.n_test < 1) throw input_error("synth needs a positive test count");
  if (!(cfg.concentration > 0.0)) throw input_error("concentration must be positive");
  if (cfg.annotators < 1) throw input_error("annotator count must be positive");
  if (!(cfg.miscalibration >= 0.0)) throw input_error("miscalibration must be nonnegative");
}

/// A generated dataset plus the true per-instance posteriors behind it.
/// With miscalibration = 0 the emitted probabilities are the posteriors,
/// bit for bit.
struct SynthBundle {
  DatasetBundle data;
  ProbabilityMatrix cal_posteriors;
  ProbabilityMatrix test_posteriors;
};

namespace detail {

struct SynthSplit {
  ProbabilityMatrix posteriors;
  ProbabilityMatrix emitted;
  std::vector<int> labels;
  AnnotationTable annotations;
};

/// Per instance: posterior, then true label, then the annotator panel, all
/// from one stream so the draw sequence is identical for both splits.
inline SynthSplit draw_split(Rng& rng, long n, const SynthConfig& cfg) {
  const int k = cfg.n_classes;
  SynthSplit split;
  split.posteriors = ProbabilityMatrix(0, static_cast<std::size_t>(k));
  split.emitted = ProbabilityMatrix(0, static_cast<std::size_t>(k));
  split.labels.reserve(n);
  split.annotations.records.resize(n);
  std::vector<double> posterior(k);
  std::vector<double> emitted(k);
  for (long i = 0; i < n; ++i) {
    if (cfg.deterministic) {
      std::fill(posterior.begin(), posterior.end(), 0.0);
      posterior[rng.index(k)] = 1.0;
    } else {
      // sharpness c maps to a symmetric Dirichlet(1/c): c -> infinity gives
      // one-hot posteriors, c -> 0 gives the uniform vector
      rng.dirichlet(1.0 / cfg.concentration, posterior);
    }
    split.labels.push_back(rng.categorical(posterior));
    auto& bucket = split.annotations.records[i];
    bucket.reserve(cfg.annotators);
    for (int a = 0; a < cfg.annotators; ++a) {
      bucket.push_back({"a_" + std::to_string(a), rng.categorical(posterior)});
    }
    split.posteriors.append_row(posterior);
    if (cfg.miscalibration == 0.0) {
      split.emitted.append_row(posterior);
    } else {
      const double power = 1.0 + cfg.miscalibration;
      double sum = 0.0;
      for (int c = 0; c < k; ++c) {
        emitted[c] = std::pow(posterior[c], power);
        sum += emitted[c];
      }
      if (sum > 0.0) {
        for (double& p : emitted) p /= sum;
      } else {  // pathological underflow: collapse to the argmax
        std::fill(emitted.begin(), emitted.end(), 0.0);
        emitted[argmax_class(posterior)] = 1.0;
      }
      split.emitted.append_row(emitted);
    }
  }
  return split;
}

}  // namespace detail

inline SynthBundle generate(const SynthConfig& cfg) {
  validate_synth_config(cfg);
  Rng cal_rng = Rng::stream(cfg.seed, 0);
  Rng test_rng = Rng::stream(cfg.seed, 1);
  detail::SynthSplit cal = detail::draw_split(cal_rng, cfg.n_cal, cfg);
  detail::SynthSplit test = detail::draw_split(test_rng, cfg.n_test, cfg);

  SynthBundle bundle;
  for (int c = 0; c < cfg.n_classes; ++c) {
    bundle.data.class_names.push_back("class_" + std::to_string(c));
  }
  for (long i = 0; i < cfg.n_cal; ++i) bundle.data.cal_ids.push_back("cal-" + std::to_string(i));
  for (long i = 0; i < cfg.n_test; ++i) bundle.data.test_ids.push_back("test-" + std::to_string(i));
  bundle.data.cal_probs = std::move(cal.emitted);
  bundle.data.cal_labels = std::move(cal.labels);
  bundle.data.test_probs = std::move(test.emitted);
  bundle.data.test_labels = std::move(test.labels);
  bundle.data.annotations = std::move(test.annotations);
  bundle.cal_posteriors = std::move(cal.posteriors);
  bundle.test_posteriors = std::move(test.posteriors);
  return bundle;
}

struct CoverageCheck {
  double mean = 0.0;
  double standard_error = 0.0;
  std::vector<double> per_trial;
};

/// Regenerates the bundle `trials` times with derived seeds, calibrating
/// and measuring test coverage each time. The split-conformal guarantee
/// puts the expectation in [1-alpha, 1-alpha + 1/(n_cal+1)].
inline CoverageCheck expected_coverage_check(const SynthConfig& cfg,
                                             const MethodConfig& method, double alpha,
                                             long trials) {
  validate_synth_config(cfg);
  if (trials < 1) throw input_error("trial count must be positive");
  CoverageCheck check;
  check.per_trial.reserve(trials);
  for (long t = 0; t < trials; ++t) {
    SynthConfig trial_cfg = cfg;
    trial_cfg.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(t));
    const SynthBundle bundle = generate(trial_cfg);
    const CalibratedPredictor pred =
        calibrate(bundle.data.cal_probs, bundle.data.cal_labels, method, alpha);
    EvaluationBatch batch;
    batch.sets = build_sets(bundle.data.test_probs, pred);
    batch.labels = bundle.data.test_labels;
    check.per_trial.push_back(coverage(batch));
  }
  double sum = 0.0;
  for (double c : check.per_trial) sum += c;
  check.mean = sum / static_cast<double>(trials);
  if (trials > 1) {
    double ss = 0.0;
    for (double c : check.per_trial) ss += (c - check.mean) * (c - check.mean);
    check.standard_error =
        std::sqrt(ss / static_cast<double>(trials - 1)) / std::sqrt(static_cast<double>(trials));
  }
  return check;
}

}  // namespace coverset
