#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "coverset/conformal.hpp"
#include "coverset/matrix.hpp"
#include "coverset/rng.hpp"
#include "oracles.hpp"

using namespace coverset;

namespace {

// Dirichlet(1) vector: strictly positive, sums to 1.
std::vector<double> random_probs(Rng& rng, int k) {
  std::vector<double> p(k);
  rng.dirichlet(1.0, p);
  return p;
}

// Small-integer rational probabilities: exact ties are common.
std::vector<double> gridded_probs(Rng& rng, int k) {
  std::vector<long> m(k);
  long total = 0;
  for (auto& v : m) {
    v = 1 + static_cast<long>(rng.below(5));
    total += v;
  }
  std::vector<double> p(k);
  for (int i = 0; i < k; ++i) {
    p[i] = static_cast<double>(m[i]) / static_cast<double>(total);
  }
  return p;
}

CalibratedPredictor predictor_with(Method method, double q, int k, double lambda = 0.0,
                                   int k_reg = 1) {
  CalibratedPredictor pred;
  pred.config = {method, lambda, k_reg};
  pred.alpha = 0.1;
  pred.q_hat = q;
  pred.n_cal = 100;
  pred.n_classes = k;
  return pred;
}

}  // namespace

TEST_CASE("score worked examples", "[conformal]") {
  const std::vector<double> p1{0.7, 0.2, 0.1};
  CHECK(lac_score(p1, 0) == 1.0 - 0.7);
  CHECK(lac_score({std::vector<double>{1.0, 0.0, 0.0}}, 0) == 0.0);
  CHECK(lac_score({std::vector<double>{0.2, 0.5, 0.3}}, 2) == 1.0 - 0.3);

  const std::vector<double> p2{0.5, 0.3, 0.2};
  CHECK(aps_score(p2, 0) == 0.5);
  CHECK(aps_score(p2, 2) == 0.5 + 0.3 + 0.2);
  // tie broken by ascending index: order (0, 1, 2)
  const std::vector<double> tied{0.4, 0.4, 0.2};
  CHECK(aps_score(tied, 1) == 0.4 + 0.4);

  const MethodConfig raps{Method::raps, 0.1, 1};
  CHECK(raps_score(p2, 1, raps) == (0.5 + 0.3) + 0.1 * 1);
  CHECK(raps_score(p2, 0, raps) == 0.5);
  CHECK_THROWS_AS(lac_score(p2, 3), input_error);
  CHECK_THROWS_AS(lac_score(p2, -1), input_error);
}

TEST_CASE("raps score with zero penalty is the aps score bitwise", "[conformal]") {
  Rng rng(11);
  const MethodConfig cfg{Method::raps, 0.0, 1};
  for (int t = 0; t < 200; ++t) {
    const int k = 2 + static_cast<int>(rng.below(8));
    const std::vector<double> p =
        (t % 2 == 0) ? random_probs(rng, k) : gridded_probs(rng, k);
    for (int y = 0; y < k; ++y) {
      CHECK(raps_score(p, y, cfg) == aps_score(p, y));
    }
  }
}

TEST_CASE("sort permutation is descending with index tie-break", "[conformal]") {
  const std::vector<double> p{0.2, 0.4, 0.2, 0.2};
  CHECK(sort_permutation(p) == std::vector<int>{1, 0, 2, 3});
  Rng rng(12);
  for (int t = 0; t < 100; ++t) {
    const int k = 2 + static_cast<int>(rng.below(10));
    const std::vector<double> probs = gridded_probs(rng, k);
    const std::vector<int> order = sort_permutation(probs);
    for (int i = 0; i + 1 < k; ++i) {
      CHECK(probs[order[i]] >= probs[order[i + 1]]);
      if (probs[order[i]] == probs[order[i + 1]]) CHECK(order[i] < order[i + 1]);
    }
  }
}

TEST_CASE("quantile worked examples", "[conformal]") {
  std::vector<double> scores{0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50};
  CHECK(conformal_quantile(scores, 0.5) == 0.30);

  const std::vector<double> four{0.1, 0.2, 0.3, 0.4};
  CHECK_FALSE(conformal_quantile(four, 0.05).has_value());

  std::vector<double> nine{0.3, 0.1, 0.9, 0.4, 0.2, 0.8, 0.6, 0.5, 0.7};
  CHECK(conformal_quantile(nine, 0.1) == 0.9);

  CHECK_THROWS_AS(conformal_quantile(std::vector<double>{}, 0.5), input_error);
  CHECK_THROWS_AS(conformal_quantile(four, 0.0), input_error);
  CHECK_THROWS_AS(conformal_quantile(four, 1.0), input_error);
}

TEST_CASE("quantile matches the rational-rank oracle on random cases", "[conformal]") {
  Rng rng(13);
  long overflows = 0;
  for (int t = 0; t < 10000; ++t) {
    const long n = 1 + static_cast<long>(rng.below(200));
    const long den = 3 + static_cast<long>(rng.below(398));
    const long num = 1 + static_cast<long>(rng.below(den - 1));
    const double alpha = static_cast<double>(num) / static_cast<double>(den);
    std::vector<double> scores(n);
    for (auto& s : scores) {
      // coarse grid so duplicates are common
      s = static_cast<double>(rng.below(64)) / 64.0;
    }
    const long r = oracle::quantile_rank(n, num, den);
    const auto got = conformal_quantile(scores, alpha);
    if (r > n) {
      ++overflows;
      CHECK_FALSE(got.has_value());
    } else {
      REQUIRE(got.has_value());
      CHECK(*got == oracle::order_statistic(scores, r));
    }
  }
  CHECK(overflows > 0);  // the case mix must include r > n
}

TEST_CASE("build_set worked examples", "[conformal]") {
  const std::vector<double> p{0.7, 0.2, 0.1};
  CHECK(build_set(p, predictor_with(Method::lac, 0.35, 3)) == PredictionSet{0});
  CHECK(build_set(p, predictor_with(Method::lac, 0.1, 3)).empty());

  const std::vector<double> q{0.5, 0.3, 0.2};
  CHECK(build_set(q, predictor_with(Method::aps, 0.85, 3)) == PredictionSet{0, 1, 2});
  CHECK(build_set(q, predictor_with(Method::raps, 0.85, 3, 0.1, 1)) == PredictionSet{0, 1});

  CalibratedPredictor full = predictor_with(Method::aps, 0.0, 3);
  full.q_hat = std::nullopt;
  CHECK(build_set(p, full) == PredictionSet{0, 1, 2});
  full.config.method = Method::lac;
  CHECK(build_set(p, full) == PredictionSet{0, 1, 2});

  CHECK_THROWS_AS(build_set(std::vector<double>{0.5, 0.5},
                            predictor_with(Method::lac, 0.5, 3)),
                  input_error);
}

TEST_CASE("lac membership is the exact score comparison", "[conformal]") {
  Rng rng(14);
  for (int t = 0; t < 500; ++t) {
    const int k = 2 + static_cast<int>(rng.below(8));
    const std::vector<double> p =
        (t % 2 == 0) ? random_probs(rng, k) : gridded_probs(rng, k);
    // q drawn from the scores themselves half the time: exact boundaries
    const double q = (t % 3 == 0) ? lac_score(p, static_cast<int>(rng.below(k)))
                                  : rng.uniform();
    const PredictionSet set = build_set(p, predictor_with(Method::lac, q, k));
    CHECK(set == oracle::lac_set(p, q));
    std::set<int> members(set.begin(), set.end());
    for (int y = 0; y < k; ++y) {
      CHECK(members.count(y) == (lac_score(p, y) <= q ? 1u : 0u));
    }
  }
}

TEST_CASE("aps and raps sets match the prefix oracle and are never empty",
          "[conformal]") {
  Rng rng(15);
  for (int t = 0; t < 500; ++t) {
    const int k = 2 + static_cast<int>(rng.below(8));
    const std::vector<double> p =
        (t % 2 == 0) ? random_probs(rng, k) : gridded_probs(rng, k);
    const double q = rng.uniform() * 1.4;  // above 1 exercises the full-prefix fallback
    const PredictionSet aps = build_set(p, predictor_with(Method::aps, q, k));
    REQUIRE_FALSE(aps.empty());
    CHECK(aps == oracle::prefix_set(p, q, 0.0, 1));

    const double lambda = rng.uniform() * 0.5;
    const int k_reg = 1 + static_cast<int>(rng.below(3));
    const PredictionSet raps =
        build_set(p, predictor_with(Method::raps, q, k, lambda, k_reg));
    REQUIRE_FALSE(raps.empty());
    CHECK(raps == oracle::prefix_set(p, q, lambda, k_reg));
  }
}

TEST_CASE("set membership tracks scores at exact boundaries", "[conformal]") {
  // For the prefix methods the iff that holds is: y in set <=> y is the
  // top class or the penalized cumulative mass short of y stays below q.
  // The inclusion direction score <= q => y in set holds outright for
  // strictly positive probabilities.
  Rng rng(16);
  for (int t = 0; t < 500; ++t) {
    const int k = 2 + static_cast<int>(rng.below(8));
    const std::vector<double> p = random_probs(rng, k);
    const MethodConfig cfg{Method::raps, (t % 2 == 0) ? 0.0 : 0.15, 1};
    const int boundary = static_cast<int>(rng.below(k));
    // exact boundary half the time
    const double q = (t % 3 == 0) ? raps_score(p, boundary, cfg) : rng.uniform() * 1.2;
    const Method method = cfg.lambda == 0.0 ? Method::aps : Method::raps;
    const PredictionSet set =
        build_set(p, predictor_with(method, q, k, cfg.lambda, cfg.k_reg));
    std::set<int> members(set.begin(), set.end());
    const std::vector<int> order = sort_permutation(p);
    double cum = 0.0;
    for (int rank = 1; rank <= k; ++rank) {
      const int y = order[rank - 1];
      const double exclusive_stat =
          cum + cfg.lambda * (static_cast<double>(rank - 1) - cfg.k_reg);
      const bool expected = rank == 1 || exclusive_stat < q;
      CHECK(members.count(y) == (expected ? 1u : 0u));
      if (conformity_score(p, y, cfg) <= q) CHECK(members.count(y) == 1u);
      cum += p[y];
    }
  }
}

TEST_CASE("sets are nested in the threshold", "[conformal]") {
  Rng rng(17);
  for (int t = 0; t < 300; ++t) {
    const int k = 2 + static_cast<int>(rng.below(8));
    const std::vector<double> p = random_probs(rng, k);
    double q1 = rng.uniform() * 1.2;
    double q2 = rng.uniform() * 1.2;
    if (q2 < q1) std::swap(q1, q2);
    for (Method m : {Method::lac, Method::aps, Method::raps}) {
      const double lambda = m == Method::raps ? 0.1 : 0.0;
      const PredictionSet small = build_set(p, predictor_with(m, q1, k, lambda));
      const PredictionSet big = build_set(p, predictor_with(m, q2, k, lambda));
      const std::set<int> big_members(big.begin(), big.end());
      for (int y : small) CHECK(big_members.count(y) == 1u);
    }
  }
}

TEST_CASE("calibrate worked examples", "[conformal]") {
  ProbabilityMatrix cal(0, 2);
  cal.append_row(std::vector<double>{0.9, 0.1});
  cal.append_row(std::vector<double>{0.8, 0.2});
  cal.append_row(std::vector<double>{0.6, 0.4});
  const std::vector<int> labels{0, 0, 0};
  const CalibratedPredictor pred = calibrate(cal, labels, {Method::lac, 0.0, 1}, 0.25);
  REQUIRE(pred.q_hat.has_value());
  CHECK(*pred.q_hat == 1.0 - 0.6);
  CHECK(pred.n_cal == 3);
  CHECK(pred.n_classes == 2);

  ProbabilityMatrix one(0, 2);
  one.append_row(std::vector<double>{0.7, 0.3});
  for (Method m : {Method::lac, Method::aps, Method::raps}) {
    const double lambda = m == Method::raps ? 0.1 : 0.0;
    const CalibratedPredictor p1 =
        calibrate(one, std::vector<int>{0}, {m, lambda, 1}, 0.05);
    CHECK(p1.full_set());
    CHECK(build_set(std::vector<double>{0.4, 0.6}, p1) == PredictionSet{1, 0});
  }

  CHECK_THROWS_AS(calibrate(cal, std::vector<int>{0, 0}, {Method::lac, 0.0, 1}, 0.25),
                  input_error);
  CHECK_THROWS_AS(calibrate(cal, std::vector<int>{0, 0, 2}, {Method::lac, 0.0, 1}, 0.25),
                  input_error);
  CHECK_THROWS_AS(calibrate(cal, labels, {Method::lac, 0.5, 1}, 0.25), input_error);
  CHECK_THROWS_AS(calibrate(cal, labels, {Method::raps, -0.1, 1}, 0.25), input_error);
  CHECK_THROWS_AS(calibrate(cal, labels, {Method::raps, 0.1, 0}, 0.25), input_error);
}

TEST_CASE("raps with zero lambda calibrates and predicts identically to aps",
          "[conformal]") {
  Rng rng(18);
  for (int t = 0; t < 200; ++t) {
    const int k = 2 + static_cast<int>(rng.below(5));
    const long n = 1 + static_cast<long>(rng.below(30));
    ProbabilityMatrix cal(0, k);
    std::vector<int> labels;
    for (long i = 0; i < n; ++i) {
      cal.append_row(random_probs(rng, k));
      labels.push_back(static_cast<int>(rng.below(k)));
    }
    const double alpha = 0.02 + 0.5 * rng.uniform();
    const CalibratedPredictor aps = calibrate(cal, labels, {Method::aps, 0.0, 1}, alpha);
    const CalibratedPredictor raps =
        calibrate(cal, labels, {Method::raps, 0.0, 1}, alpha);
    CHECK(aps.q_hat.has_value() == raps.q_hat.has_value());
    if (aps.q_hat.has_value()) CHECK(*aps.q_hat == *raps.q_hat);
    for (int j = 0; j < 5; ++j) {
      const std::vector<double> p = random_probs(rng, k);
      CHECK(build_set(p, aps) == build_set(p, raps));
    }
  }
}

TEST_CASE("lambda tuning follows the documented objective", "[conformal]") {
  // one-hot data: every lambda yields identical singleton sets, so the
  // tie-break picks the smallest grid value
  ProbabilityMatrix cal(0, 3);
  std::vector<int> labels;
  Rng rng(19);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> row(3, 0.0);
    const int hot = rng.index(3);
    row[hot] = 1.0;
    cal.append_row(row);
    labels.push_back(hot);
  }
  const LambdaTuneResult tuned =
      tune_raps_lambda(cal, labels, kDefaultLambdaGrid, 0.1, 0.2, 0, 1);
  CHECK(tuned.chosen == 0.001);
  REQUIRE(tuned.table.size() == 5);
  for (const auto& entry : tuned.table) {
    CHECK(entry.holdout_coverage == 1.0);
    CHECK(entry.holdout_mean_set_size == 1.0);
  }

  const std::vector<double> singleton{0.0};
  CHECK(tune_raps_lambda(cal, labels, singleton, 0.1, 0.2, 0, 1).chosen == 0.0);

  ProbabilityMatrix tiny(0, 2);
  tiny.append_row(std::vector<double>{0.6, 0.4});
  CHECK_THROWS_AS(
      tune_raps_lambda(tiny, std::vector<int>{0}, kDefaultLambdaGrid, 0.1, 0.2, 0, 1),
      input_error);
  CHECK_THROWS_AS(tune_raps_lambda(cal, labels, std::vector<double>{}, 0.1, 0.2, 0, 1),
                  input_error);
}

TEST_CASE("tuned lambda is reproducible and reports a full table", "[conformal]") {
  Rng rng(20);
  ProbabilityMatrix cal(0, 4);
  std::vector<int> labels;
  for (int i = 0; i < 120; ++i) {
    std::vector<double> p(4);
    rng.dirichlet(cal.rows() % 2 == 0 ? 0.7 : 2.0, p);
    cal.append_row(p);
    labels.push_back(rng.categorical(p));
  }
  const LambdaTuneResult a = tune_raps_lambda(cal, labels, kDefaultLambdaGrid, 0.1, 0.2, 7, 1);
  const LambdaTuneResult b = tune_raps_lambda(cal, labels, kDefaultLambdaGrid, 0.1, 0.2, 7, 1);
  CHECK(a.chosen == b.chosen);
  REQUIRE(a.table.size() == b.table.size());
  for (std::size_t i = 0; i < a.table.size(); ++i) {
    CHECK(a.table[i].lambda == b.table[i].lambda);
    CHECK(a.table[i].holdout_coverage == b.table[i].holdout_coverage);
    CHECK(a.table[i].holdout_mean_set_size == b.table[i].holdout_mean_set_size);
  }
  const bool found =
      std::find(kDefaultLambdaGrid.begin(), kDefaultLambdaGrid.end(), a.chosen) !=
      kDefaultLambdaGrid.end();
  CHECK(found);
}

TEST_CASE("softmax entropy", "[conformal]") {
  CHECK(softmax_entropy(std::vector<double>{1.0, 0.0, 0.0}) == 0.0);
  CHECK_THAT(softmax_entropy(std::vector<double>{0.25, 0.25, 0.25, 0.25}),
             Catch::Matchers::WithinAbs(std::log(4.0), 1e-12));
  CHECK_THAT(softmax_entropy(std::vector<double>{0.5, 0.5, 0.0}),
             Catch::Matchers::WithinAbs(std::log(2.0), 1e-12));
}
