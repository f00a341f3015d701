#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tdet/alignment.hpp"
#include "tdet/detector.hpp"
#include "tdet/geometry.hpp"
#include "tdet/shapegen.hpp"

namespace tdet {

struct ScoredBox {
  BoxXYXY box;
  double score = 0;
};

struct MatchedPair {
  std::size_t prediction = 0;
  std::size_t gt = 0;
  double iou = 0;
};

struct MatchResult {
  std::size_t tp = 0, fp = 0, fn = 0;
  std::vector<MatchedPair> pairs;
};

// Predictions in score-descending order (ties by input order) each take the
// unmatched GT of highest IoU (lowest index on ties) when that IoU >= threshold.
MatchResult match_detections(std::span<const ScoredBox> predictions, std::span<const BoxXYXY> gts,
                             double iou_threshold = 0.5);

double image_precision(const MatchResult& m);
double image_recall(const MatchResult& m);

struct DetectionMetrics {
  double mean_precision = 0;
  double mean_recall = 0;
  double mean_iou = 0;  // pooled over matched pairs; 0 when there are none
  std::size_t images = 0;
  std::size_t matched_pairs = 0;
};

// Macro-averaged precision and recall, pooled IoU. Throws on an empty input.
DetectionMetrics detection_metrics(std::span<const MatchResult> results);

// Fraction of items with (score > threshold) == label. Throws on empty or
// mismatched input.
double alignment_accuracy(std::span<const double> scores, std::span<const int> labels,
                          double threshold = 0.5);

struct IouHistogram {
  std::vector<double> edges;  // bins + 1 uniform edges on [0,1]
  std::vector<std::size_t> counts;
};

// IoU 1 falls in the last bin.
IouHistogram iou_histogram(std::span<const MatchResult> results, std::size_t bins = 20);

struct GroupReport {
  DetectionMetrics metrics;
  IouHistogram histogram;
  std::vector<MatchResult> per_image;
};

struct EvaluationReport {
  GroupReport all_proposals;
  GroupReport aligned;
  std::optional<double> alignment_accuracy;  // empty when no proposal matched a GT
  std::size_t alignment_population = 0;
  InferenceConfig inference;
};

// Group 1: every RPN proposal against every GT. Group 2: select_topk output
// against the query-aligned GTs only. Alignment accuracy over group-1
// proposals whose best-IoU GT reaches 0.5, labeled by that GT's flag.
EvaluationReport evaluate_examples(const Detector<float>& model,
                                   std::span<const SceneExample> examples,
                                   const InferenceConfig& config = {});

// Loads the checkpoint (CheckpointError) and the manifest's test split
// (DatasetError) and evaluates.
EvaluationReport evaluate_testset(const std::filesystem::path& checkpoint,
                                  const std::filesystem::path& dataset_root,
                                  const InferenceConfig& config = {});

std::string report_json(const EvaluationReport& report);
// Header `bin_low,bin_high,count`.
std::string histogram_csv(const IouHistogram& histogram);

}  // namespace tdet
