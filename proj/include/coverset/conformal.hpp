#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coverset/errors.hpp"
#include "coverset/matrix.hpp"
#include "coverset/rng.hpp"

namespace coverset {

enum class Method { lac, aps, raps };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::lac: return "lac";
    case Method::aps: return "aps";
    case Method::raps: return "raps";
  }
  return "?";
}

inline Method method_from_name(const std::string& name) {
  if (name == "lac") return Method::lac;
  if (name == "aps") return Method::aps;
  if (name == "raps") return Method::raps;
  throw input_error("unknown method '" + name + "' (expected lac, aps or raps)");
}

/// Default RAPS penalty grid for lambda tuning.
inline constexpr std::array<double, 5> kDefaultLambdaGrid{0.001, 0.01, 0.1, 0.2, 0.5};

struct MethodConfig {
  Method method = Method::lac;
  double lambda = 0.0;  // RAPS penalty weight; must be 0 for LAC/APS
  int k_reg = 1;        // RAPS target set size; ignored for LAC/APS

  friend bool operator==(const MethodConfig&, const MethodConfig&) = default;
};

inline void validate_method_config(const MethodConfig& cfg) {
  if (cfg.method == Method::raps) {
    if (!(cfg.lambda >= 0.0)) throw input_error("raps lambda must be nonnegative");
    if (cfg.k_reg < 1) throw input_error("raps k_reg must be a positive integer");
  } else if (cfg.lambda != 0.0) {
    throw input_error("lambda is only meaningful for raps; set it to 0 for " +
                      std::string(method_name(cfg.method)));
  }
}

/// Class indices ordered by descending softmax probability, ties broken by
/// ascending index. May be empty only for LAC.
using PredictionSet = std::vector<int>;

/// Reusable calibration artifact. A missing q_hat is the full-set sentinel:
/// the finite-sample rank overflowed the calibration size, so every class
/// is emitted for every instance.
struct CalibratedPredictor {
  MethodConfig config;
  double alpha = 0.0;
  std::optional<double> q_hat;
  long n_cal = 0;
  int n_classes = 0;

  bool full_set() const { return !q_hat.has_value(); }
};

/// Permutation sorting `probs` descending; equal probabilities keep
/// ascending class index.
inline std::vector<int> sort_permutation(std::span<const double> probs) {
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&probs](int a, int b) {
    if (probs[a] != probs[b]) return probs[a] > probs[b];
    return a < b;
  });
  return order;
}

inline void check_label_range(std::span<const double> probs, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) {
    throw input_error("class index " + std::to_string(label) +
                      " out of range [0," + std::to_string(probs.size()) + ")");
  }
}

/// 1 - p[label].
inline double lac_score(std::span<const double> probs, int label) {
  check_label_range(probs, label);
  return 1.0 - probs[label];
}

/// Cumulative probability down the descending sort, up to and including
/// the requested class.
inline double aps_score(std::span<const double> probs, int label) {
  check_label_range(probs, label);
  const std::vector<int> order = sort_permutation(probs);
  double cum = 0.0;
  for (int idx : order) {
    cum += probs[idx];
    if (idx == label) return cum;
  }
  return cum;  // unreachable for a valid label
}

/// APS score plus lambda * (rank - k_reg), rank 1-based in the sort order.
inline double raps_score(std::span<const double> probs, int label,
                         const MethodConfig& cfg) {
  check_label_range(probs, label);
  const std::vector<int> order = sort_permutation(probs);
  double cum = 0.0;
  int rank = 0;
  for (int idx : order) {
    cum += probs[idx];
    ++rank;
    if (idx == label) return cum + cfg.lambda * (rank - cfg.k_reg);
  }
  return cum;
}

inline double conformity_score(std::span<const double> probs, int label,
                               const MethodConfig& cfg) {
  switch (cfg.method) {
    case Method::lac: return lac_score(probs, label);
    case Method::aps: return aps_score(probs, label);
    case Method::raps: return raps_score(probs, label, cfg);
  }
  throw input_error("unknown method");
}

/// Finite-sample quantile rank ceil((1-alpha)(n+1)). A 1e-9 slack absorbs
/// the binary representation error of decimal alpha before the ceiling;
/// the result is clamped to at least 1.
inline long conformal_quantile_rank(long n, double alpha) {
  const double target = (1.0 - alpha) * static_cast<double>(n + 1);
  const long rank = static_cast<long>(std::ceil(target - 1e-9));
  return rank < 1 ? 1 : rank;
}

/// r-th smallest score at r = ceil((1-alpha)(n+1)), or the full-set
/// sentinel (nullopt) when r exceeds n.
inline std::optional<double> conformal_quantile(std::span<const double> scores,
                                                double alpha) {
  if (scores.empty()) throw input_error("quantile of an empty score list");
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw input_error("alpha must lie in (0,1), got " + std::to_string(alpha));
  }
  const long n = static_cast<long>(scores.size());
  const long rank = conformal_quantile_rank(n, alpha);
  if (rank > n) return std::nullopt;
  std::vector<double> sorted(scores.begin(), scores.end());
  std::nth_element(sorted.begin(), sorted.begin() + (rank - 1), sorted.end());
  return sorted[rank - 1];
}

/// Builds the prediction set for one instance.
///
/// LAC keeps every class whose score is within the threshold (possibly no
/// class at all). APS and RAPS walk the descending sort and stop at the
/// first rank whose (penalized) cumulative mass reaches q_hat, so they
/// always emit at least the top class; if even the full prefix stays below
/// q_hat, every class is emitted. A full-set sentinel emits all classes.
inline PredictionSet build_set(std::span<const double> probs,
                               const CalibratedPredictor& pred) {
  if (static_cast<int>(probs.size()) != pred.n_classes) {
    throw input_error("instance has " + std::to_string(probs.size()) +
                      " classes but predictor was calibrated for " +
                      std::to_string(pred.n_classes));
  }
  const std::vector<int> order = sort_permutation(probs);
  if (pred.full_set()) return PredictionSet(order.begin(), order.end());
  const double q = *pred.q_hat;

  if (pred.config.method == Method::lac) {
    PredictionSet set;
    for (int idx : order) {
      if (1.0 - probs[idx] <= q) set.push_back(idx);
    }
    return set;
  }

  const double lambda = pred.config.method == Method::raps ? pred.config.lambda : 0.0;
  const int k_reg = pred.config.method == Method::raps ? pred.config.k_reg : 1;
  double cum = 0.0;
  int rank = 0;
  for (int idx : order) {
    cum += probs[idx];
    ++rank;
    if (cum + lambda * (rank - k_reg) >= q) break;
  }
  return PredictionSet(order.begin(), order.begin() + rank);
}

inline std::vector<PredictionSet> build_sets(const ProbabilityMatrix& probs,
                                             const CalibratedPredictor& pred) {
  std::vector<PredictionSet> sets;
  sets.reserve(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) sets.push_back(build_set(probs.row(i), pred));
  return sets;
}

inline void check_labels(std::span<const int> labels, std::size_t n_classes) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes) {
      throw input_error("label " + std::to_string(labels[i]) + " at instance " +
                        std::to_string(i) + " out of range [0," +
                        std::to_string(n_classes) + ")");
    }
  }
}

/// Scores every calibration instance with the configured score function and
/// thresholds at the finite-sample quantile.
inline CalibratedPredictor calibrate(const ProbabilityMatrix& cal_probs,
                                     std::span<const int> cal_labels,
                                     const MethodConfig& cfg, double alpha) {
  validate_method_config(cfg);
  if (cal_probs.rows() == 0) throw input_error("empty calibration set");
  if (cal_probs.rows() != cal_labels.size()) {
    throw input_error("calibration has " + std::to_string(cal_probs.rows()) +
                      " probability rows but " + std::to_string(cal_labels.size()) +
                      " labels");
  }
  check_labels(cal_labels, cal_probs.cols());
  std::vector<double> scores(cal_probs.rows());
  for (std::size_t i = 0; i < cal_probs.rows(); ++i) {
    scores[i] = conformity_score(cal_probs.row(i), cal_labels[i], cfg);
  }
  CalibratedPredictor pred;
  pred.config = cfg;
  pred.alpha = alpha;
  pred.q_hat = conformal_quantile(scores, alpha);
  pred.n_cal = static_cast<long>(cal_probs.rows());
  pred.n_classes = static_cast<int>(cal_probs.cols());
  return pred;
}

struct LambdaTuneEntry {
  double lambda = 0.0;
  double holdout_coverage = 0.0;
  double holdout_mean_set_size = 0.0;
};

struct LambdaTuneResult {
  double chosen = 0.0;
  std::vector<LambdaTuneEntry> table;  // ascending lambda
};

namespace detail {

/// Seeded split of 0..n-1 into (holdout, retained) index lists. The holdout
/// size is round(fraction * n); both parts must be nonempty.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw input_error("split fraction must lie in (0,1), got " + std::to_string(fraction));
  }
  std::vector<std::size_t> indices(n);
  std::iota(indices.begin(), indices.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(indices);
  const auto n_holdout =
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (n_holdout == 0 || n_holdout >= n) {
    throw input_error("split leaves an empty part (n=" + std::to_string(n) +
                      ", fraction=" + std::to_string(fraction) + ")");
  }
  std::vector<std::size_t> holdout(indices.begin(), indices.begin() + n_holdout);
  std::vector<std::size_t> retained(indices.begin() + n_holdout, indices.end());
  return {std::move(holdout), std::move(retained)};
}

inline ProbabilityMatrix take_rows(const ProbabilityMatrix& m,
                                   std::span<const std::size_t> rows) {
  ProbabilityMatrix out(0, m.cols());
  for (std::size_t r : rows) out.append_row(m.row(r));
  return out;
}

template <typename T>
std::vector<T> take(std::span<const T> values, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(values[i]);
  return out;
}

}  // namespace detail

/// Selects the RAPS penalty from a grid on a seeded held-out slice of the
/// calibration data: smallest held-out mean set size among penalties whose
/// held-out coverage reaches 1-alpha, falling back to the best coverage,
/// ties toward the smaller lambda.
inline LambdaTuneResult tune_raps_lambda(const ProbabilityMatrix& cal_probs,
                                         std::span<const int> cal_labels,
                                         std::span<const double> grid, double alpha,
                                         double split_fraction = 0.2,
                                         std::uint64_t seed = 0, int k_reg = 1) {
  if (grid.empty()) throw input_error("lambda grid is empty");
  if (cal_probs.rows() != cal_labels.size()) {
    throw input_error("calibration rows and labels differ in length");
  }
  auto [holdout, retained] = detail::split_indices(cal_probs.rows(), split_fraction, seed);
  const ProbabilityMatrix fit_probs = detail::take_rows(cal_probs, retained);
  const std::vector<int> fit_labels = detail::take(cal_labels, std::span<const std::size_t>(retained));
  const ProbabilityMatrix held_probs = detail::take_rows(cal_probs, holdout);
  const std::vector<int> held_labels = detail::take(cal_labels, std::span<const std::size_t>(holdout));

  std::vector<double> lambdas(grid.begin(), grid.end());
  std::sort(lambdas.begin(), lambdas.end());

  LambdaTuneResult result;
  const double target = 1.0 - alpha;
  bool have_feasible = false;
  double best_size = 0.0;
  double best_coverage = -1.0;
  for (double lambda : lambdas) {
    MethodConfig cfg{Method::raps, lambda, k_reg};
    const CalibratedPredictor pred = calibrate(fit_probs, fit_labels, cfg, alpha);
    long hits = 0;
    long total_size = 0;
    for (std::size_t i = 0; i < held_probs.rows(); ++i) {
      const PredictionSet set = build_set(held_probs.row(i), pred);
      total_size += static_cast<long>(set.size());
      if (std::find(set.begin(), set.end(), held_labels[i]) != set.end()) ++hits;
    }
    const double n_held = static_cast<double>(held_probs.rows());
    const double cov = static_cast<double>(hits) / n_held;
    const double mean_size = static_cast<double>(total_size) / n_held;
    result.table.push_back({lambda, cov, mean_size});

    if (cov >= target) {
      if (!have_feasible || mean_size < best_size) {
        have_feasible = true;
        best_size = mean_size;
        result.chosen = lambda;
      }
    } else if (!have_feasible && cov > best_coverage) {
      best_coverage = cov;
      result.chosen = lambda;
    }
  }
  return result;
}

/// Shannon entropy of a probability vector in nats; 0 ln 0 = 0.
inline double softmax_entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

}  // namespace coverset
