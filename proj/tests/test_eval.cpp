#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "osteo/eval.hpp"
#include "testutil.hpp"

using namespace osteo;
using eval::Prediction;
using eval::PredictionSet;

namespace {

PredictionSet random_preds(int n, uint64_t seed, bool allow_ties = true) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int> bucket(0, 9);
  PredictionSet out;
  int positives = 0;
  for (int i = 0; i < n; ++i) {
    Prediction p;
    p.segment_id = "s" + std::to_string(i);
    p.label = coin(rng);
    p.score = allow_ties ? bucket(rng) / 10.0 : u(rng);
    positives += p.label;
    out.push_back(p);
  }
  // Both classes must be present.
  if (positives == 0) out[0].label = 1;
  if (positives == n) out[0].label = 0;
  return out;
}

// O(n^2) pair-counting oracle with half credit for ties.
double auc_oracle(const PredictionSet& preds) {
  double wins = 0.0;
  long pairs = 0;
  for (const auto& p : preds) {
    if (p.label != 1) continue;
    for (const auto& q : preds) {
      if (q.label != 0) continue;
      ++pairs;
      if (p.score > q.score) wins += 1.0;
      else if (p.score == q.score) wins += 0.5;
    }
  }
  return wins / pairs;
}

}  // namespace

TEST_CASE("roc_auc endpoints") {
  PredictionSet perfect = {{"a", 1, 1.0}, {"b", 0, 0.0}, {"c", 1, 0.9}, {"d", 0, 0.2}};
  CHECK(eval::roc_auc(perfect) == doctest::Approx(1.0));
  PredictionSet ties = {{"a", 1, 0.5}, {"b", 0, 0.5}, {"c", 1, 0.5}, {"d", 0, 0.5}};
  CHECK(eval::roc_auc(ties) == doctest::Approx(0.5));
  PredictionSet single = {{"a", 1, 0.5}, {"b", 1, 0.2}};
  CHECK_THROWS_AS(eval::roc_auc(single), eval::EvalError);
}

TEST_CASE("roc_auc matches the pair-counting oracle on 100 random sets") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    auto preds = random_preds(50, seed);
    CHECK(std::abs(eval::roc_auc(preds) - auc_oracle(preds)) < 1e-12);
  }
}

TEST_CASE("roc_auc is invariant under strictly monotone transforms") {
  auto preds = random_preds(80, 5);
  double base = eval::roc_auc(preds);
  auto squashed = preds;
  for (auto& p : squashed) p.score = 1.0 / (1.0 + std::exp(-7.0 * (p.score - 0.3)));
  CHECK(eval::roc_auc(squashed) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("flipping labels mirrors the AUC when scores are tie-free") {
  auto preds = random_preds(60, 6, /*allow_ties=*/false);
  double base = eval::roc_auc(preds);
  auto flipped = preds;
  for (auto& p : flipped) p.label = 1 - p.label;
  CHECK(eval::roc_auc(flipped) == doctest::Approx(1.0 - base).epsilon(1e-12));
}

TEST_CASE("constant classifiers reproduce the closed-form scores") {
  // 48 positive / 119 negative test composition.
  PredictionSet preds;
  for (int i = 0; i < 167; ++i) {
    Prediction p;
    p.segment_id = "s" + std::to_string(i);
    p.label = i < 48 ? 1 : 0;
    p.score = 1.0;  // constant positive
    preds.push_back(p);
  }
  auto cp = eval::f1_accuracy(preds, 0.5);
  CHECK(cp.accuracy == doctest::Approx(48.0 / 167.0).epsilon(1e-12));
  CHECK(cp.accuracy == doctest::Approx(0.2874).epsilon(5e-4));
  CHECK(cp.f1 == doctest::Approx(2.0 * (48.0 / 167.0) / (1.0 + 48.0 / 167.0)).epsilon(1e-12));
  CHECK(cp.f1 == doctest::Approx(0.4465).epsilon(5e-4));

  for (auto& p : preds) p.score = 0.0;  // constant negative
  auto cn = eval::f1_accuracy(preds, 0.5);
  CHECK(cn.accuracy == doctest::Approx(119.0 / 167.0).epsilon(1e-12));
  CHECK(cn.f1 == 0.0);
}

TEST_CASE("threshold edge cases match the constant-classifier forms") {
  auto preds = random_preds(40, 9);
  auto at_zero = eval::f1_accuracy(preds, 0.0);
  int pos = 0;
  for (const auto& p : preds) pos += p.label;
  CHECK(at_zero.tp == pos);
  CHECK(at_zero.fn == 0);

  auto above_one = eval::f1_accuracy(preds, 1.0 + 1e-9);
  CHECK(above_one.tp == 0);
  CHECK(above_one.fp == 0);
  CHECK(above_one.f1 == 0.0);
}

TEST_CASE("perfect predictions score 1") {
  PredictionSet preds = {{"a", 1, 0.9}, {"b", 0, 0.1}, {"c", 1, 0.8}, {"d", 0, 0.3}};
  auto s = eval::f1_accuracy(preds, 0.5);
  CHECK(s.f1 == doctest::Approx(1.0));
  CHECK(s.accuracy == doctest::Approx(1.0));
}

TEST_CASE("metrics CSV round-trips and counts rows") {
  testutil::TempDir tmp("eval");
  eval::MetricCurve curve;
  curve.run_id = "r1";
  for (int e = 0; e < 10; ++e)
    for (const char* split : {"train", "val"})
      for (const char* metric : {"loss", "auc"})
        curve.points.push_back({e, split, metric, 0.1 * e});
  const std::string path = tmp.sub("metrics.csv");
  eval::append_metrics_csv(curve, path);
  auto loaded = eval::load_metrics_csv(path);
  REQUIRE(loaded.points.size() == 40);
  CHECK(loaded.points[0].split == "train");
  CHECK(loaded.points[0].metric == "loss");
  CHECK(loaded.points.back().value == doctest::Approx(0.9));
}

TEST_CASE("write_curves rejects an empty curve set") {
  testutil::TempDir tmp("eval");
  CHECK_THROWS_AS(eval::write_curves({}, tmp.str()), eval::EvalError);
}

TEST_CASE("predictions CSV round-trips") {
  testutil::TempDir tmp("eval");
  auto preds = random_preds(25, 12);
  const std::string path = tmp.sub("preds.csv");
  eval::save_predictions_csv(preds, path);
  auto loaded = eval::load_predictions_csv(path);
  REQUIRE(loaded.size() == preds.size());
  for (size_t i = 0; i < preds.size(); ++i) {
    CHECK(loaded[i].segment_id == preds[i].segment_id);
    CHECK(loaded[i].label == preds[i].label);
    CHECK(loaded[i].score == doctest::Approx(preds[i].score).epsilon(1e-9));
  }
}
