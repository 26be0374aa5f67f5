// Independent brute-force recomputations used to cross-check the library.
// These deliberately take different code paths from the implementation:
// integer-rational quantile ranks, counting-based average ranks, two-pass
// Pearson, membership-driven set construction, and list-based ECE binning.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "coverset/conformal.hpp"
#include "coverset/matrix.hpp"
#include "coverset/metrics.hpp"

namespace oracle {

// quantile rank ceil((1 - num/den)(n+1)) in exact integer arithmetic
inline long quantile_rank(long n, long alpha_num, long alpha_den) {
  const long numerator = (alpha_den - alpha_num) * (n + 1);
  return (numerator + alpha_den - 1) / alpha_den;
}

// r-th smallest by full sort (1-based); caller handles r > n
inline double order_statistic(std::vector<double> scores, long r) {
  std::sort(scores.begin(), scores.end());
  return scores[r - 1];
}

// rank_i = #less + (#equal + 1)/2, 1-based average ranks by counting
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    long less = 0;
    long equal = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[j] < v[i]) ++less;
      if (v[j] == v[i]) ++equal;
    }
    r[i] = static_cast<double>(less) + 0.5 * static_cast<double>(equal + 1);
  }
  return r;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / (std::sqrt(sxx) * std::sqrt(syy));
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  return pearson(rx, ry);
}

// classical no-ties formula 1 - 6 sum d^2 / (n (n^2 - 1))
inline double spearman_classical(std::span<const double> x, std::span<const double> y) {
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  double d2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

// ---------------------------------------------------------------------------
// metric recomputations

inline double coverage(const coverset::EvaluationBatch& b) {
  long hits = 0;
  for (std::size_t i = 0; i < b.sets.size(); ++i) {
    for (int c : b.sets[i]) {
      if (c == b.labels[i]) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(b.sets.size());
}

inline double mean_set_size(const coverset::EvaluationBatch& b) {
  long total = 0;
  for (const auto& s : b.sets) total += static_cast<long>(s.size());
  return static_cast<double>(total) / static_cast<double>(b.sets.size());
}

struct SizeStat {
  long count = 0;
  long hits = 0;
};

inline std::map<int, SizeStat> size_stats(const coverset::EvaluationBatch& b) {
  std::map<int, SizeStat> stats;
  for (std::size_t i = 0; i < b.sets.size(); ++i) {
    auto& s = stats[static_cast<int>(b.sets[i].size())];
    ++s.count;
    for (int c : b.sets[i]) {
      if (c == b.labels[i]) {
        ++s.hits;
        break;
      }
    }
  }
  return stats;
}

inline double ssc(const coverset::EvaluationBatch& b) {
  double worst = 2.0;
  for (const auto& [size, s] : size_stats(b)) {
    worst = std::min(worst, static_cast<double>(s.hits) / static_cast<double>(s.count));
  }
  return worst;
}

// bin = largest b with conf >= b/M (boundary doubles computed the same way
// the implementation computes them)
inline int ece_bin(double conf, int m) {
  for (int b = m - 1; b > 0; --b) {
    if (conf >= static_cast<double>(b) / static_cast<double>(m)) return b;
  }
  return 0;
}

// re-binning oracle: per-bin instance lists in instance order, then the
// weighted-gap sum in bin order (mirrors the implementation's summation
// order so agreement is exact)
inline double ece(const coverset::ProbabilityMatrix& probs, std::span<const int> labels,
                  int m) {
  std::vector<std::vector<double>> confs(m);
  std::vector<std::vector<bool>> correct(m);
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const auto row = probs.row(i);
    int top = 0;
    for (int k = 1; k < static_cast<int>(row.size()); ++k) {
      if (row[k] > row[top]) top = k;
    }
    const int b = ece_bin(row[top], m);
    confs[b].push_back(row[top]);
    correct[b].push_back(top == labels[i]);
  }
  double total = 0.0;
  const double n = static_cast<double>(probs.rows());
  for (int b = 0; b < m; ++b) {
    if (confs[b].empty()) continue;
    double conf_sum = 0.0;
    long hits = 0;
    for (double c : confs[b]) conf_sum += c;
    for (bool ok : correct[b]) hits += ok ? 1 : 0;
    const double count = static_cast<double>(confs[b].size());
    const double acc = static_cast<double>(hits) / count;
    const double avg_conf = conf_sum / count;
    total += (count / n) * std::abs(acc - avg_conf);
  }
  return total;
}

// ---------------------------------------------------------------------------
// membership-driven set reconstruction

// LAC: iterate classes in index order, keep those with score <= q, then
// order by descending probability / ascending index
inline coverset::PredictionSet lac_set(std::span<const double> p, double q) {
  std::vector<int> kept;
  for (int y = 0; y < static_cast<int>(p.size()); ++y) {
    if (coverset::lac_score(p, y) <= q) kept.push_back(y);
  }
  std::sort(kept.begin(), kept.end(), [&p](int a, int b) {
    if (p[a] != p[b]) return p[a] > p[b];
    return a < b;
  });
  return kept;
}

// APS/RAPS: walk the sorted prefix with an independently-accumulated
// penalized cumulative sum
inline coverset::PredictionSet prefix_set(std::span<const double> p, double q,
                                          double lambda, int k_reg) {
  const std::vector<int> order = coverset::sort_permutation(p);
  double cum = 0.0;
  coverset::PredictionSet set;
  for (std::size_t j = 0; j < order.size(); ++j) {
    cum += p[order[j]];
    set.push_back(order[j]);
    const double stat = cum + lambda * (static_cast<double>(j + 1) - k_reg);
    if (stat >= q) break;
  }
  return set;
}

}  // namespace oracle
