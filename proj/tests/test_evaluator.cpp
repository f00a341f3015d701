#include <doctest.h>

#include <fstream>
#include <random>

#include <json.hpp>

#include "support/oracles.hpp"
#include "support/temp_dir.hpp"
#include "support/tiny.hpp"
#include "tdet/checkpoint.hpp"
#include "tdet/evaluator.hpp"

using namespace tdet;

namespace {

std::vector<ScoredBox> scored(const std::vector<BoxXYXY>& boxes, double s = 0.9) {
  std::vector<ScoredBox> out;
  for (const auto& b : boxes) out.push_back({b, s});
  return out;
}

MatchResult counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  MatchResult m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  return m;
}

// Scenes whose GTs sit in separate 40 px cells, so no prediction can reach
// IoU 0.5 with two of them.
struct Instance {
  std::vector<BoxXYXY> gts, preds;
  std::vector<double> scores;
};

Instance separated_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> count(0, 4), cell(0, 8), jitter(-4, 4), side(12, 20);
  std::uniform_real_distribution<double> u(0, 1);
  Instance inst;
  std::vector<int> cells;
  const int ng = count(rng);
  while (static_cast<int>(cells.size()) < ng) {
    const int c = cell(rng);
    if (std::find(cells.begin(), cells.end(), c) == cells.end()) cells.push_back(c);
  }
  for (int c : cells) {
    const double x = (c % 3) * 40.0 + 8, y = (c / 3) * 40.0 + 8, s = side(rng);
    inst.gts.push_back({x, y, x + s, y + s});
  }
  const int np = count(rng);
  for (int i = 0; i < np; ++i) {
    BoxXYXY b;
    if (!inst.gts.empty() && u(rng) < 0.75) {
      b = inst.gts[std::uniform_int_distribution<std::size_t>(0, inst.gts.size() - 1)(rng)];
    } else {
      const int c = cell(rng);
      b = {(c % 3) * 40.0 + 8, (c / 3) * 40.0 + 8, (c % 3) * 40.0 + 24, (c / 3) * 40.0 + 24};
    }
    b.x1 += jitter(rng);
    b.y1 += jitter(rng);
    b.x2 += jitter(rng);
    b.y2 += jitter(rng);
    inst.preds.push_back(b);
    inst.scores.push_back(u(rng));
  }
  return inst;
}

}  // namespace

TEST_SUITE("evaluator") {
  TEST_CASE("identical predictions match every GT") {
    const std::vector<BoxXYXY> gts{{0, 0, 10, 10}, {20, 20, 30, 30}, {40, 0, 50, 12}};
    const auto m = match_detections(scored(gts), gts);
    CHECK(m.tp == 3);
    CHECK(m.fp == 0);
    CHECK(m.fn == 0);
    REQUIRE(m.pairs.size() == 3);
    for (const auto& p : m.pairs) {
      CHECK(p.prediction == p.gt);
      CHECK(p.iou == 1.0);
    }
    CHECK(image_precision(m) == 1.0);
    CHECK(image_recall(m) == 1.0);
  }

  TEST_CASE("no predictions leave every GT missed") {
    const std::vector<BoxXYXY> gts{{0, 0, 10, 10}, {20, 20, 30, 30}, {40, 0, 50, 12}};
    const auto m = match_detections({}, gts);
    CHECK(m.tp == 0);
    CHECK(m.fp == 0);
    CHECK(m.fn == 3);
    CHECK(image_precision(m) == 0.0);
    CHECK(image_recall(m) == 0.0);
  }

  TEST_CASE("two predictions on one GT give one hit and one false positive") {
    const std::vector<BoxXYXY> gts{{0, 0, 10, 10}};
    const std::vector<ScoredBox> preds{{{0, 0, 10, 10}, 0.6}, {{0, 0, 10, 11}, 0.9}};
    const auto m = match_detections(preds, gts);
    CHECK(m.tp == 1);
    CHECK(m.fp == 1);
    CHECK(m.fn == 0);
    REQUIRE(m.pairs.size() == 1);
    // The higher-scored prediction claims the GT.
    CHECK(m.pairs[0].prediction == 1);
    CHECK(m.pairs[0].iou == doctest::Approx(10.0 / 11.0));
  }

  TEST_CASE("the IoU threshold is inclusive") {
    // Intersection 50, union 100.
    const std::vector<BoxXYXY> gts{{0, 0, 10, 7.5}};
    const std::vector<ScoredBox> preds{{{0, 2.5, 10, 10}, 0.9}};
    CHECK(oracle::box_iou(preds[0].box, gts[0]) == 0.5);
    CHECK(match_detections(preds, gts).tp == 1);
    CHECK(match_detections(preds, gts, 0.51).tp == 0);
  }

  TEST_CASE("a prediction takes the unmatched GT it overlaps most") {
    const std::vector<BoxXYXY> gts{{0, 0, 10, 10}, {2, 0, 12, 10}};
    const std::vector<ScoredBox> preds{{{1, 0, 11, 10}, 0.9}, {{2, 0, 12, 10}, 0.5}};
    const auto m = match_detections(preds, gts);
    REQUIRE(m.pairs.size() == 2);
    // Equal IoU with both GTs goes to the lower index; the second prediction
    // then finds its exact GT still free.
    CHECK(m.pairs[0].gt == 0);
    CHECK(m.pairs[1].gt == 1);
    CHECK(m.tp == 2);
  }

  TEST_CASE("precision and recall conventions for empty sets") {
    CHECK(image_precision(counts(0, 0, 0)) == 1.0);
    CHECK(image_recall(counts(0, 0, 0)) == 1.0);
    CHECK(image_precision(counts(0, 0, 2)) == 0.0);
    CHECK(image_recall(counts(0, 3, 0)) == 1.0);
    CHECK(image_precision(counts(0, 3, 0)) == 0.0);
    CHECK(image_precision(counts(3, 1, 0)) == 0.75);
    CHECK(image_recall(counts(3, 0, 1)) == 0.75);
  }

  TEST_CASE("detection metrics macro-average per image and pool IoU") {
    MatchResult a = counts(1, 1, 0);
    a.pairs = {{0, 0, 0.8}};
    MatchResult b = counts(2, 0, 2);
    b.pairs = {{0, 0, 0.6}, {1, 1, 0.7}};
    const std::vector<MatchResult> rs{a, b, counts(0, 0, 0)};
    const auto m = detection_metrics(rs);
    CHECK(m.images == 3);
    CHECK(m.matched_pairs == 3);
    CHECK(m.mean_precision == doctest::Approx((0.5 + 1.0 + 1.0) / 3));
    CHECK(m.mean_recall == doctest::Approx((1.0 + 0.5 + 1.0) / 3));
    CHECK(m.mean_iou == doctest::Approx(0.7));
    const std::vector<MatchResult> none{counts(0, 2, 0)};
    CHECK(detection_metrics(none).mean_iou == 0.0);
    CHECK_THROWS_AS(detection_metrics({}), std::invalid_argument);
  }

  TEST_CASE("alignment accuracy counts agreement at the threshold") {
    std::vector<double> s(10, 0.9);
    std::vector<int> y(10, 1);
    y[4] = 0;
    CHECK(alignment_accuracy(s, y) == doctest::Approx(0.9));
    // 0.5 is not above the threshold, so it reads as "not aligned".
    const std::vector<double> half(6, 0.5);
    const std::vector<int> zeros(6, 0);
    CHECK(alignment_accuracy(half, zeros) == 1.0);
    CHECK_THROWS_AS(alignment_accuracy({}, {}), std::invalid_argument);
    const std::vector<int> short_labels(5, 0);
    CHECK_THROWS_AS(alignment_accuracy(half, short_labels), std::invalid_argument);
  }

  TEST_CASE("IoU histogram has uniform edges and keeps IoU 1 in the last bin") {
    MatchResult m = counts(4, 0, 0);
    m.pairs = {{0, 0, 1.0}, {1, 1, 0.5}, {2, 2, 0.5499}, {3, 3, 0.97}};
    const std::vector<MatchResult> rs{m};
    const auto h = iou_histogram(rs);
    REQUIRE(h.edges.size() == 21);
    REQUIRE(h.counts.size() == 20);
    for (std::size_t i = 0; i <= 20; ++i) CHECK(h.edges[i] == doctest::Approx(i / 20.0));
    CHECK(h.counts[19] == 2);
    CHECK(h.counts[10] == 2);
    std::size_t total = 0;
    for (auto c : h.counts) total += c;
    CHECK(total == m.pairs.size());
    CHECK_THROWS_AS(iou_histogram(rs, 0), std::invalid_argument);
  }

  TEST_CASE("greedy matching reaches the maximum on separated scenes") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 2000; ++trial) {
      const auto inst = separated_instance(rng);
      std::vector<ScoredBox> preds;
      for (std::size_t i = 0; i < inst.preds.size(); ++i) preds.push_back({inst.preds[i], inst.scores[i]});
      const auto m = match_detections(preds, inst.gts);
      const std::size_t best = oracle::max_matching(inst.preds, inst.gts, 0.5);
      CHECK(m.tp == best);
      CHECK(m.fp == inst.preds.size() - best);
      CHECK(m.fn == inst.gts.size() - best);
      std::vector<bool> pred_used(inst.preds.size()), gt_used(inst.gts.size());
      for (const auto& p : m.pairs) {
        CHECK_FALSE(pred_used[p.prediction]);
        CHECK_FALSE(gt_used[p.gt]);
        pred_used[p.prediction] = gt_used[p.gt] = true;
        CHECK(p.iou == doctest::Approx(oracle::box_iou(inst.preds[p.prediction], inst.gts[p.gt])));
        CHECK(p.iou >= 0.5);
      }
    }
  }

  TEST_CASE("with an always-aligned head at threshold 0, group two equals group one") {
    const auto model = make_align_one_stub(Detector<float>::init(testing::tiny_model(), 5));
    auto examples = testing::tiny_examples(6, 300);
    for (auto& ex : examples) {
      ex.query = *parse_query("shapes");
      ex.aligned = label_alignment(ex.objects, ex.query);
    }
    const auto report = evaluate_examples(model, examples, {0.0, 1000});
    const auto& g1 = report.all_proposals;
    const auto& g2 = report.aligned;
    REQUIRE(g1.per_image.size() == examples.size());
    REQUIRE(g2.per_image.size() == examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i) {
      CHECK(g1.per_image[i].tp == g2.per_image[i].tp);
      CHECK(g1.per_image[i].fp == g2.per_image[i].fp);
      CHECK(g1.per_image[i].fn == g2.per_image[i].fn);
    }
    CHECK(g1.metrics.mean_precision == g2.metrics.mean_precision);
    CHECK(g1.metrics.mean_recall == g2.metrics.mean_recall);
    CHECK(g1.metrics.mean_iou == g2.metrics.mean_iou);
    CHECK(g1.histogram.counts == g2.histogram.counts);
    std::size_t predictions = 0;
    for (const auto& r : g1.per_image) predictions += r.tp + r.fp;
    CHECK(predictions > 0);
    if (report.alignment_accuracy) CHECK(*report.alignment_accuracy == 1.0);
  }

  TEST_CASE("aligned group scores only the query-aligned GTs") {
    const auto model = make_align_one_stub(Detector<float>::init(testing::tiny_model(), 5));
    auto examples = testing::tiny_examples(4, 400);
    const auto report = evaluate_examples(model, examples, {0.0, 1000});
    for (std::size_t i = 0; i < examples.size(); ++i) {
      std::size_t aligned = 0;
      for (bool a : examples[i].aligned) aligned += a;
      const auto& r2 = report.aligned.per_image[i];
      const auto& r1 = report.all_proposals.per_image[i];
      CHECK(r2.tp + r2.fn == aligned);
      CHECK(r1.tp + r1.fn == examples[i].objects.size());
    }
    CHECK_THROWS_AS(evaluate_examples(model, {}, {}), std::invalid_argument);
  }

  TEST_CASE("report serializations") {
    const auto model = make_align_one_stub(Detector<float>::init(testing::tiny_model(), 5));
    const auto examples = testing::tiny_examples(2, 500);
    const auto report = evaluate_examples(model, examples, {0.25, 7});
    const auto j = nlohmann::json::parse(report_json(report));
    for (const char* key : {"all_proposals", "aligned_proposals", "alignment_accuracy",
                            "alignment_population", "score_threshold", "top_k"}) {
      CHECK(j.contains(key));
    }
    CHECK(j["top_k"] == 7);
    CHECK(j["score_threshold"] == 0.25);
    const auto csv = histogram_csv(report.all_proposals.histogram);
    CHECK(csv.rfind("bin_low,bin_high,count\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 21);
  }

  TEST_CASE("evaluate_testset reports missing inputs") {
    testing::TempDir dir("eval");
    CHECK_THROWS_AS(evaluate_testset(dir / "none.ckpt", dir.path()), CheckpointError);
    save_checkpoint(dir / "m.ckpt", make_checkpoint(Detector<float>::init(testing::tiny_model(), 1), {}));
    CHECK_THROWS_AS(evaluate_testset(dir / "m.ckpt", dir / "nowhere"), DatasetError);
  }
}
