#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "coverset/conformal.hpp"
#include "coverset/errors.hpp"
#include "coverset/rng.hpp"

namespace coverset {

struct AnnotationRecord {
  std::string annotator;
  int label = 0;
};

/// Raw multi-annotator labels, grouped per instance in instance order.
struct AnnotationTable {
  std::vector<std::vector<AnnotationRecord>> records;  // one bucket per instance

  std::size_t size() const { return records.size(); }

  double mean_annotators() const {
    if (records.empty()) throw input_error("annotation table is empty");
    long total = 0;
    for (const auto& bucket : records) total += static_cast<long>(bucket.size());
    return static_cast<double>(total) / static_cast<double>(records.size());
  }
};

struct InstanceOverlap {
  int distinct_labels = 0;
  bool overlapping = false;    // at least two distinct annotator labels
  std::vector<int> label_set;  // distinct labels, ascending
};

/// Per-instance overlap indicators derived from annotations.
struct OverlapProfile {
  std::vector<InstanceOverlap> instances;

  double overlap_fraction() const {
    if (instances.empty()) throw input_error("overlap profile is empty");
    long hits = 0;
    for (const auto& inst : instances) {
      if (inst.overlapping) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(instances.size());
  }

  double mean_distinct_labels() const {
    if (instances.empty()) throw input_error("overlap profile is empty");
    long total = 0;
    for (const auto& inst : instances) total += inst.distinct_labels;
    return static_cast<double>(total) / static_cast<double>(instances.size());
  }
};

inline OverlapProfile overlap_profile(const AnnotationTable& table) {
  OverlapProfile profile;
  profile.instances.reserve(table.records.size());
  for (std::size_t i = 0; i < table.records.size(); ++i) {
    const auto& bucket = table.records[i];
    if (bucket.empty()) {
      throw input_error("instance " + std::to_string(i) + " has no annotations");
    }
    std::set<int> labels;
    for (const auto& rec : bucket) labels.insert(rec.label);
    profile.instances.push_back({static_cast<int>(labels.size()), labels.size() >= 2,
                                 std::vector<int>(labels.begin(), labels.end())});
  }
  return profile;
}

/// Average (fractional) ranks, 1-based; ties share the mean of the ranks
/// they span.
inline std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&values](std::size_t a, std::size_t b) {
    return values[a] < values[b];
  });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double shared = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

struct CorrelationResult {
  double r_s = 0.0;
  double p_value = 1.0;
  long n_used = 0;
};

/// Spearman rank correlation: Pearson correlation of average ranks, with a
/// two-sided p-value from the t approximation t = r sqrt((n-2)/(1-r^2)).
/// A constant input (all ranks tied on either side) has no defined rank
/// correlation and raises undefined_statistic_error.
inline CorrelationResult spearman_rs(std::span<const double> x,
                                     std::span<const double> y) {
  if (x.size() != y.size()) {
    throw input_error("correlation inputs differ in length");
  }
  const std::size_t n = x.size();
  if (n < 2) {
    throw input_error("correlation needs at least two paired observations, got " +
                      std::to_string(n));
  }
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);

  const auto constant = [n](const std::vector<double>& r) {
    for (std::size_t i = 1; i < n; ++i) {
      if (r[i] != r[0]) return false;
    }
    return true;
  };
  if (constant(rx) || constant(ry)) {
    throw undefined_statistic_error(
        "rank correlation is undefined for a constant input");
  }

  // Exact +/-1 when the rank vectors agree (or mirror) elementwise; the
  // general Pearson expression would land epsilon away from the pole.
  bool identical = true;
  bool mirrored = true;
  const double mirror_sum = static_cast<double>(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (rx[i] != ry[i]) identical = false;
    if (rx[i] + ry[i] != mirror_sum) mirrored = false;
  }
  double r;
  if (identical) {
    r = 1.0;
  } else if (mirrored) {
    r = -1.0;
  } else {
    const double mean = 0.5 * static_cast<double>(n + 1);
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = rx[i] - mean;
      const double dy = ry[i] - mean;
      sxy += dx * dy;
      sxx += dx * dx;
      syy += dy * dy;
    }
    r = sxy / std::sqrt(sxx * syy);
    r = std::clamp(r, -1.0, 1.0);
  }

  CorrelationResult out;
  out.r_s = r;
  out.n_used = static_cast<long>(n);
  if (n == 2) {
    out.p_value = 1.0;  // two points are always monotone
  } else if (r == 1.0 || r == -1.0) {
    out.p_value = 0.0;  // t diverges at the pole
  } else {
    const double df = static_cast<double>(n - 2);
    const double t = r * std::sqrt(df / (1.0 - r * r));
    boost::math::students_t dist(df);
    out.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  }
  return out;
}

/// Label for |r_s|: very weak < 0.2 <= weak < 0.4 <= moderate < 0.6 <=
/// strong < 0.8 <= very strong.
inline std::string correlation_strength(double r_s) {
  const double a = std::abs(r_s);
  if (a < 0.2) return "very weak";
  if (a < 0.4) return "weak";
  if (a < 0.6) return "moderate";
  if (a < 0.8) return "strong";
  return "very strong";
}

/// Two-sided permutation p-value for the observed r_s: the fraction of
/// seeded shuffles of y whose |r_s| is at least the observed |r_s|
/// (including the identity, so the estimate is never 0).
inline double permutation_p_value(std::span<const double> x, std::span<const double> y,
                                  long n_permutations, std::uint64_t seed) {
  if (n_permutations < 1) throw input_error("permutation count must be positive");
  const double observed = std::abs(spearman_rs(x, y).r_s);
  std::vector<double> shuffled(y.begin(), y.end());
  Rng rng(seed);
  long at_least = 1;  // the identity permutation
  for (long t = 0; t < n_permutations; ++t) {
    rng.shuffle(shuffled);
    double r;
    try {
      r = std::abs(spearman_rs(x, shuffled).r_s);
    } catch (const undefined_statistic_error&) {
      continue;  // cannot happen unless inputs were constant, guarded above
    }
    if (r >= observed - 1e-12) ++at_least;
  }
  return static_cast<double>(at_least) / static_cast<double>(n_permutations + 1);
}

/// Pairs per-instance set sizes with a per-instance signal, drops empty
/// sets when asked, and correlates.
inline CorrelationResult correlate_sizes(const std::vector<PredictionSet>& sets,
                                         std::span<const double> signal,
                                         bool exclude_empty = true) {
  if (sets.size() != signal.size()) {
    throw input_error("set list and signal differ in length");
  }
  std::vector<double> sizes;
  std::vector<double> kept;
  sizes.reserve(sets.size());
  kept.reserve(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (exclude_empty && sets[i].empty()) continue;
    sizes.push_back(static_cast<double>(sets[i].size()));
    kept.push_back(signal[i]);
  }
  if (sizes.size() < 2) {
    throw input_error("fewer than two usable instances after exclusions (" +
                      std::to_string(sizes.size()) + ")");
  }
  return spearman_rs(sizes, kept);
}

inline CorrelationResult correlate_with_overlap(const std::vector<PredictionSet>& sets,
                                                const OverlapProfile& profile,
                                                bool exclude_empty = true) {
  std::vector<double> signal;
  signal.reserve(profile.instances.size());
  for (const auto& inst : profile.instances) {
    signal.push_back(static_cast<double>(inst.distinct_labels));
  }
  return correlate_sizes(sets, signal, exclude_empty);
}

struct SweepPoint {
  int cap = 0;
  std::optional<CorrelationResult> result;  // nullopt when undefined at this cap
  std::string skip_reason;                  // set when result missing
};

/// Correlation restricted to instances whose set size is at most the cap,
/// for each cap in ascending order. Caps where the statistic is undefined
/// (too few instances, or a constant side) stay in the output with the
/// reason recorded.
inline std::vector<SweepPoint> incremental_sweep(const std::vector<PredictionSet>& sets,
                                                 std::span<const double> signal,
                                                 std::span<const int> caps,
                                                 bool exclude_empty = true) {
  if (sets.size() != signal.size()) {
    throw input_error("set list and signal differ in length");
  }
  if (caps.empty()) throw input_error("cap list is empty");
  for (std::size_t i = 1; i < caps.size(); ++i) {
    if (caps[i] <= caps[i - 1]) {
      throw input_error("caps must be strictly ascending");
    }
  }
  std::vector<SweepPoint> points;
  points.reserve(caps.size());
  for (int cap : caps) {
    std::vector<double> sizes;
    std::vector<double> kept;
    for (std::size_t i = 0; i < sets.size(); ++i) {
      if (exclude_empty && sets[i].empty()) continue;
      if (static_cast<int>(sets[i].size()) > cap) continue;
      sizes.push_back(static_cast<double>(sets[i].size()));
      kept.push_back(signal[i]);
    }
    SweepPoint point;
    point.cap = cap;
    if (sizes.size() < 2) {
      point.skip_reason = "fewer than two instances at this cap";
    } else {
      try {
        point.result = spearman_rs(sizes, kept);
      } catch (const undefined_statistic_error& e) {
        point.skip_reason = e.what();
      }
    }
    points.push_back(std::move(point));
  }
  return points;
}

struct SimilarityReport {
  double precision = 0.0;       // |C ∩ H| / |C|
  double recall = 0.0;          // |C ∩ H| / |H|
  double subset_accuracy = 0.0; // 1{C == H}
  double hamming = 0.0;         // |C Δ H| / K
  long n_used = 0;
};

namespace detail {

inline std::vector<int> sorted_unique(const std::vector<int>& v) {
  std::vector<int> out(v);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace detail

/// Set-similarity between prediction sets and the human label sets of an
/// OverlapProfile (the distinct annotator labels per instance), averaged
/// over instances. Empty prediction sets are dropped when exclude_empty is
/// set; otherwise they score zero precision/recall/subset-accuracy and
/// |H|/K hamming.
inline SimilarityReport similarity(const std::vector<PredictionSet>& sets,
                                   const OverlapProfile& profile, int n_classes,
                                   bool exclude_empty = true) {
  if (sets.size() != profile.instances.size()) {
    throw input_error("prediction set list and overlap profile differ in length");
  }
  if (n_classes < 2) throw input_error("need at least two classes");
  double prec = 0.0;
  double rec = 0.0;
  double sacc = 0.0;
  double ham = 0.0;
  long used = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (exclude_empty && sets[i].empty()) continue;
    const std::vector<int> c = detail::sorted_unique(sets[i]);
    const std::vector<int>& h = profile.instances[i].label_set;
    if (h.empty()) {
      throw input_error("instance " + std::to_string(i) + " has an empty human label set");
    }
    std::vector<int> both;
    std::set_intersection(c.begin(), c.end(), h.begin(), h.end(), std::back_inserter(both));
    std::vector<int> either;
    std::set_symmetric_difference(c.begin(), c.end(), h.begin(), h.end(),
                                  std::back_inserter(either));
    if (!c.empty()) prec += static_cast<double>(both.size()) / static_cast<double>(c.size());
    rec += static_cast<double>(both.size()) / static_cast<double>(h.size());
    if (c == h) sacc += 1.0;
    ham += static_cast<double>(either.size()) / static_cast<double>(n_classes);
    ++used;
  }
  if (used == 0) {
    throw input_error("no usable instances for similarity after exclusions");
  }
  const double n = static_cast<double>(used);
  return {prec / n, rec / n, sacc / n, ham / n, used};
}

}  // namespace coverset
