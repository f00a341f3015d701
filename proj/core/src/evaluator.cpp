#include "tdet/evaluator.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "tdet/checkpoint.hpp"
#include "tdet/inference.hpp"
#include "tdet/trainer.hpp"

namespace tdet {

MatchResult match_detections(std::span<const ScoredBox> predictions, std::span<const BoxXYXY> gts,
                             double iou_threshold) {
  std::vector<std::size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return predictions[a].score > predictions[b].score;
  });
  MatchResult out;
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t p : order) {
    std::optional<std::size_t> best;
    double best_iou = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double v = iou(predictions[p].box, gts[g]);
      if (v > best_iou) {
        best_iou = v;
        best = g;
      }
    }
    if (best && best_iou >= iou_threshold) {
      taken[*best] = true;
      out.pairs.push_back({p, *best, best_iou});
      ++out.tp;
    } else {
      ++out.fp;
    }
  }
  out.fn = gts.size() - out.tp;
  return out;
}

double image_precision(const MatchResult& m) {
  if (m.tp + m.fp == 0) return m.fn == 0 ? 1.0 : 0.0;
  return static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
}

double image_recall(const MatchResult& m) {
  if (m.tp + m.fn == 0) return 1.0;
  return static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
}

DetectionMetrics detection_metrics(std::span<const MatchResult> results) {
  if (results.empty()) throw std::invalid_argument("detection_metrics: no images");
  DetectionMetrics out;
  double iou_sum = 0;
  for (const auto& r : results) {
    out.mean_precision += image_precision(r);
    out.mean_recall += image_recall(r);
    for (const auto& p : r.pairs) iou_sum += p.iou;
    out.matched_pairs += r.pairs.size();
  }
  out.images = results.size();
  out.mean_precision /= static_cast<double>(out.images);
  out.mean_recall /= static_cast<double>(out.images);
  out.mean_iou = out.matched_pairs ? iou_sum / static_cast<double>(out.matched_pairs) : 0.0;
  return out;
}

double alignment_accuracy(std::span<const double> scores, std::span<const int> labels,
                          double threshold) {
  if (scores.empty()) throw std::invalid_argument("alignment_accuracy: empty input");
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("alignment_accuracy: scores and labels differ in length");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if ((scores[i] > threshold) == (labels[i] != 0)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

IouHistogram iou_histogram(std::span<const MatchResult> results, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("iou_histogram: need at least one bin");
  IouHistogram h;
  for (std::size_t i = 0; i <= bins; ++i) h.edges.push_back(static_cast<double>(i) / static_cast<double>(bins));
  h.counts.assign(bins, 0);
  for (const auto& r : results) {
    for (const auto& p : r.pairs) {
      const auto b = static_cast<std::size_t>(std::clamp(p.iou, 0.0, 1.0) * static_cast<double>(bins));
      ++h.counts[std::min(b, bins - 1)];
    }
  }
  return h;
}

namespace {

GroupReport make_group(std::vector<MatchResult> per_image) {
  GroupReport g;
  g.metrics = detection_metrics(per_image);
  g.histogram = iou_histogram(per_image);
  g.per_image = std::move(per_image);
  return g;
}

nlohmann::json group_json(const GroupReport& g) {
  auto images = nlohmann::json::array();
  for (const auto& m : g.per_image) {
    images.push_back({{"tp", m.tp},
                      {"fp", m.fp},
                      {"fn", m.fn},
                      {"precision", image_precision(m)},
                      {"recall", image_recall(m)}});
  }
  return {{"mean_precision", g.metrics.mean_precision},
          {"mean_recall", g.metrics.mean_recall},
          {"mean_iou", g.metrics.mean_iou},
          {"images", g.metrics.images},
          {"matched_pairs", g.metrics.matched_pairs},
          {"iou_histogram", {{"edges", g.histogram.edges}, {"counts", g.histogram.counts}}},
          {"per_image", images}};
}

}  // namespace

EvaluationReport evaluate_examples(const Detector<float>& model,
                                   std::span<const SceneExample> examples,
                                   const InferenceConfig& config) {
  if (examples.empty()) throw std::invalid_argument("evaluate: empty test split");
  std::vector<MatchResult> group1, group2;
  std::vector<double> align_scores;
  std::vector<int> align_labels;
  for (const auto& ex : examples) {
    const Analysis analysis = analyze(model, ex.image, ex.query.text);
    std::vector<BoxXYXY> all_gt, aligned_gt;
    for (std::size_t i = 0; i < ex.objects.size(); ++i) {
      all_gt.push_back(ex.objects[i].box);
      if (ex.aligned.at(i)) aligned_gt.push_back(ex.objects[i].box);
    }

    std::vector<ScoredBox> proposals;
    for (std::size_t i = 0; i < analysis.proposals.size(); ++i) {
      const auto& p = analysis.proposals[i];
      proposals.push_back({p.box, p.confidence});
      std::optional<std::size_t> best;
      double best_iou = -1;
      for (std::size_t g = 0; g < all_gt.size(); ++g) {
        const double v = iou(p.box, all_gt[g]);
        if (v > best_iou) {
          best_iou = v;
          best = g;
        }
      }
      if (best && best_iou >= 0.5) {
        align_scores.push_back(analysis.alignment[i]);
        align_labels.push_back(ex.aligned[*best] ? 1 : 0);
      }
    }
    group1.push_back(match_detections(proposals, all_gt));

    std::vector<ScoredBox> detections;
    for (const auto& d : select_topk(analysis.detections(), config)) detections.push_back({d.box, d.score});
    group2.push_back(match_detections(detections, aligned_gt));
  }
  EvaluationReport report;
  report.all_proposals = make_group(std::move(group1));
  report.aligned = make_group(std::move(group2));
  report.alignment_population = align_scores.size();
  if (!align_scores.empty()) report.alignment_accuracy = alignment_accuracy(align_scores, align_labels);
  report.inference = config;
  return report;
}

EvaluationReport evaluate_testset(const std::filesystem::path& checkpoint,
                                  const std::filesystem::path& dataset_root,
                                  const InferenceConfig& config) {
  const auto model = load_detector(checkpoint);
  const auto manifest = load_manifest(dataset_root);
  const auto test = load_split(manifest, "test");
  return evaluate_examples(model, test, config);
}

std::string report_json(const EvaluationReport& report) {
  nlohmann::json j = {
      {"all_proposals", group_json(report.all_proposals)},
      {"aligned_proposals", group_json(report.aligned)},
      {"alignment_accuracy", report.alignment_accuracy ? nlohmann::json(*report.alignment_accuracy)
                                                       : nlohmann::json(nullptr)},
      {"alignment_population", report.alignment_population},
      {"score_threshold", report.inference.score_threshold},
      {"top_k", report.inference.top_k},
  };
  return j.dump(2);
}

std::string histogram_csv(const IouHistogram& histogram) {
  std::ostringstream out;
  out << "bin_low,bin_high,count\n";
  for (std::size_t i = 0; i < histogram.counts.size(); ++i) {
    out << histogram.edges[i] << ',' << histogram.edges[i + 1] << ',' << histogram.counts[i] << '\n';
  }
  return out.str();
}

}  // namespace tdet
