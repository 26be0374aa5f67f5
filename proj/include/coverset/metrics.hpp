#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "coverset/conformal.hpp"
#include "coverset/errors.hpp"
#include "coverset/matrix.hpp"

namespace coverset {

inline constexpr int kDefaultEceBins = 15;

/// Prediction sets with the matching true labels (and, for ECE, the softmax
/// rows they came from).
struct EvaluationBatch {
  std::vector<PredictionSet> sets;
  std::vector<int> labels;
};

inline void check_batch(const EvaluationBatch& batch) {
  if (batch.sets.empty()) throw input_error("empty evaluation batch");
  if (batch.sets.size() != batch.labels.size()) {
    throw input_error("batch has " + std::to_string(batch.sets.size()) +
                      " sets but " + std::to_string(batch.labels.size()) + " labels");
  }
}

inline bool set_contains(const PredictionSet& set, int label) {
  return std::find(set.begin(), set.end(), label) != set.end();
}

/// Fraction of instances whose set contains the true label. Empty sets
/// count as misses.
inline double coverage(const EvaluationBatch& batch) {
  check_batch(batch);
  long hits = 0;
  for (std::size_t i = 0; i < batch.sets.size(); ++i) {
    if (set_contains(batch.sets[i], batch.labels[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(batch.sets.size());
}

inline double mean_set_size(const EvaluationBatch& batch) {
  check_batch(batch);
  long total = 0;
  for (const auto& set : batch.sets) total += static_cast<long>(set.size());
  return static_cast<double>(total) / static_cast<double>(batch.sets.size());
}

struct SizeGroup {
  int size = 0;
  long count = 0;
  double coverage = 0.0;
};

/// Coverage within each observed set size, ascending by size. Every
/// observed size forms a group, including size 0 (whose coverage is 0).
inline std::vector<SizeGroup> coverage_by_size(const EvaluationBatch& batch) {
  check_batch(batch);
  std::map<int, std::pair<long, long>> groups;  // size -> {count, hits}
  for (std::size_t i = 0; i < batch.sets.size(); ++i) {
    auto& [count, hits] = groups[static_cast<int>(batch.sets[i].size())];
    ++count;
    if (set_contains(batch.sets[i], batch.labels[i])) ++hits;
  }
  std::vector<SizeGroup> out;
  out.reserve(groups.size());
  for (const auto& [size, stat] : groups) {
    out.push_back({size, stat.first,
                   static_cast<double>(stat.second) / static_cast<double>(stat.first)});
  }
  return out;
}

/// Size-stratified coverage: the worst coverage over the size groups.
inline double size_stratified_coverage(const EvaluationBatch& batch) {
  const std::vector<SizeGroup> groups = coverage_by_size(batch);
  double worst = groups.front().coverage;
  for (const auto& g : groups) worst = std::min(worst, g.coverage);
  return worst;
}

inline std::map<int, long> size_histogram(const EvaluationBatch& batch) {
  check_batch(batch);
  std::map<int, long> hist;
  for (const auto& set : batch.sets) ++hist[static_cast<int>(set.size())];
  return hist;
}

/// Index of the top-probability class, ties toward the lowest index.
inline int argmax_class(std::span<const double> probs) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(probs.size()); ++k) {
    if (probs[k] > probs[best]) best = k;
  }
  return best;
}

/// Bin index for a confidence in [0,1] over M equal-width bins
/// [b/M, (b+1)/M), with the final bin closed at 1. Boundary membership is
/// decided by comparing against the bin edges directly rather than by
/// multiply-and-floor, so a confidence exactly on an edge lands in the
/// right-hand bin.
inline int confidence_bin(double confidence, int n_bins) {
  for (int b = 0; b + 1 < n_bins; ++b) {
    if (confidence < static_cast<double>(b + 1) / static_cast<double>(n_bins)) return b;
  }
  return n_bins - 1;
}

struct BinStatistics {
  int bin_index = 0;
  long count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

/// Per-bin confidence/accuracy statistics over all M bins (empty bins keep
/// zero count, confidence and accuracy).
inline std::vector<BinStatistics> ece_bins(const ProbabilityMatrix& probs,
                                           std::span<const int> labels, int n_bins) {
  if (probs.rows() == 0) throw input_error("empty evaluation batch");
  if (probs.rows() != labels.size()) {
    throw input_error("batch has " + std::to_string(probs.rows()) +
                      " probability rows but " + std::to_string(labels.size()) + " labels");
  }
  if (n_bins < 1) throw input_error("ece bin count must be positive");
  check_labels(labels, probs.cols());
  std::vector<BinStatistics> bins(n_bins);
  for (int b = 0; b < n_bins; ++b) bins[b].bin_index = b;
  std::vector<double> conf_sum(n_bins, 0.0);
  std::vector<long> correct(n_bins, 0);
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const auto row = probs.row(i);
    const int top = argmax_class(row);
    const double conf = row[top];
    const int b = confidence_bin(conf, n_bins);
    ++bins[b].count;
    conf_sum[b] += conf;
    if (top == labels[i]) ++correct[b];
  }
  for (int b = 0; b < n_bins; ++b) {
    if (bins[b].count > 0) {
      bins[b].mean_confidence = conf_sum[b] / static_cast<double>(bins[b].count);
      bins[b].accuracy = static_cast<double>(correct[b]) / static_cast<double>(bins[b].count);
    }
  }
  return bins;
}

/// Expected calibration error: count-weighted mean absolute gap between
/// per-bin confidence and accuracy.
inline double ece(const ProbabilityMatrix& probs, std::span<const int> labels,
                  int n_bins = kDefaultEceBins) {
  const std::vector<BinStatistics> bins = ece_bins(probs, labels, n_bins);
  const double n = static_cast<double>(probs.rows());
  double total = 0.0;
  for (const auto& b : bins) {
    if (b.count > 0) {
      total += (static_cast<double>(b.count) / n) * std::abs(b.accuracy - b.mean_confidence);
    }
  }
  return total;
}

}  // namespace coverset
