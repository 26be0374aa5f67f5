#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "coverset/conformal.hpp"
#include "coverset/errors.hpp"
#include "coverset/matrix.hpp"
#include "coverset/metrics.hpp"

namespace coverset {

/// Default alpha grid for sweep-alpha.
inline constexpr std::array<double, 4> kDefaultAlphaGrid{0.05, 0.1, 0.15, 0.2};

struct AlphaSweepEntry {
  double alpha = 0.0;
  double lambda_used = 0.0;  // resolved RAPS penalty (0 for LAC/APS)
  double coverage = 0.0;
  double mean_set_size = 0.0;
  std::optional<double> ratio;  // mean size / coverage; absent when coverage = 0
};

struct AlphaSweepResult {
  double selected_alpha = 0.0;
  std::vector<AlphaSweepEntry> table;  // ascending alpha
};

/// Calibrates at each alpha on (fit) data and scores on (eval) data,
/// selecting the alpha minimizing mean set size / coverage, ties toward
/// the smaller alpha. A missing lambda is tuned on the fit part per alpha.
inline AlphaSweepResult sweep_alpha_scored(
    const ProbabilityMatrix& fit_probs, std::span<const int> fit_labels,
    const ProbabilityMatrix& eval_probs, std::span<const int> eval_labels,
    Method method, std::span<const double> alpha_grid, std::optional<double> lambda,
    std::span<const double> lambda_grid, int k_reg, std::uint64_t seed) {
  if (alpha_grid.empty()) throw input_error("alpha grid is empty");
  std::vector<double> alphas(alpha_grid.begin(), alpha_grid.end());
  std::sort(alphas.begin(), alphas.end());
  alphas.erase(std::unique(alphas.begin(), alphas.end()), alphas.end());
  for (double a : alphas) {
    if (!(a > 0.0 && a < 1.0)) {
      throw input_error("alpha grid values must lie in (0,1)");
    }
  }
  if (eval_probs.rows() == 0) throw input_error("empty evaluation data for the sweep");

  AlphaSweepResult result;
  bool have_best = false;
  double best_ratio = 0.0;
  for (double alpha : alphas) {
    MethodConfig cfg{method, 0.0, 1};
    if (method == Method::raps) {
      cfg.k_reg = k_reg;
      cfg.lambda = lambda.has_value()
                       ? *lambda
                       : tune_raps_lambda(fit_probs, fit_labels, lambda_grid, alpha,
                                          0.2, seed, k_reg)
                             .chosen;
    }
    const CalibratedPredictor pred = calibrate(fit_probs, fit_labels, cfg, alpha);
    EvaluationBatch batch;
    batch.sets = build_sets(eval_probs, pred);
    batch.labels.assign(eval_labels.begin(), eval_labels.end());
    AlphaSweepEntry entry;
    entry.alpha = alpha;
    entry.lambda_used = cfg.lambda;
    entry.coverage = coverage(batch);
    entry.mean_set_size = mean_set_size(batch);
    if (entry.coverage > 0.0) entry.ratio = entry.mean_set_size / entry.coverage;
    if (entry.ratio.has_value() && (!have_best || *entry.ratio < best_ratio)) {
      have_best = true;
      best_ratio = *entry.ratio;
      result.selected_alpha = alpha;
    }
    result.table.push_back(entry);
  }
  if (!have_best) {
    throw undefined_statistic_error(
        "no alpha in the grid produced a defined size/coverage ratio");
  }
  return result;
}

/// Default sweep mode: scores each alpha on a seeded held-out fraction of
/// the calibration set, so no test data leaks into the selection.
inline AlphaSweepResult sweep_alpha_holdout(const ProbabilityMatrix& cal_probs,
                                            std::span<const int> cal_labels,
                                            Method method,
                                            std::span<const double> alpha_grid,
                                            std::optional<double> lambda,
                                            std::span<const double> lambda_grid,
                                            int k_reg, double split_fraction,
                                            std::uint64_t seed) {
  if (cal_probs.rows() != cal_labels.size()) {
    throw input_error("calibration rows and labels differ in length");
  }
  auto [holdout, retained] =
      detail::split_indices(cal_probs.rows(), split_fraction, seed);
  const ProbabilityMatrix fit_probs = detail::take_rows(cal_probs, retained);
  const std::vector<int> fit_labels =
      detail::take(cal_labels, std::span<const std::size_t>(retained));
  const ProbabilityMatrix eval_probs = detail::take_rows(cal_probs, holdout);
  const std::vector<int> eval_labels =
      detail::take(cal_labels, std::span<const std::size_t>(holdout));
  return sweep_alpha_scored(fit_probs, fit_labels, eval_probs, eval_labels, method,
                            alpha_grid, lambda, lambda_grid, k_reg, seed);
}

}  // namespace coverset
