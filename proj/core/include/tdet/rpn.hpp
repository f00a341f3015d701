#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tdet/backbone.hpp"
#include "tdet/config.hpp"
#include "tdet/geometry.hpp"
#include "tdet/layers.hpp"

namespace tdet {

template <typename T>
struct RpnPrediction {
  BasicTensor<T> objectness;  // [A], post-sigmoid
  BasicTensor<T> regression;  // [A,4] as (tx, ty, tw, th)

  std::size_t anchor_count() const { return objectness.numel(); }
};

// Shared 3x3 conv + relu, then sibling 1x1 objectness and regression convs.
template <typename T>
class RpnHead {
 public:
  RpnHead() = default;

  static RpnHead init(std::size_t in_channels, const RpnConfig& config, std::mt19937_64& rng) {
    RpnHead h;
    h.shared_ = Conv2dLayer<T>::init(in_channels, config.hidden_channels, 3, 1, 1, rng);
    h.cls_ = Conv2dLayer<T>::init(config.hidden_channels, 1, 1, 1, 0, rng);
    h.reg_ = Conv2dLayer<T>::init(config.hidden_channels, 4, 1, 1, 0, rng);
    return h;
  }

  // Outputs follow the anchor grid's row-major order. expected_cells, when
  // non-zero, is the anchor grid side length the feature map must match.
  RpnPrediction<T> forward(const FeatureMap<T>& fm, std::size_t expected_cells = 0) const {
    const std::size_t c = fm.channels(), h = fm.height(), w = fm.width();
    if (expected_cells != 0 && (h != expected_cells || w != expected_cells)) {
      throw ShapeError("rpn: feature map " + std::to_string(h) + "x" + std::to_string(w) +
                       " does not match the " + std::to_string(expected_cells) + "x" +
                       std::to_string(expected_cells) + " anchor grid");
    }
    const auto x = reshape(fm.tensor, {1, c, h, w});
    const auto hidden = relu(shared_(x));
    auto objectness = reshape(sigmoid(cls_(hidden)), {h * w});
    auto regression = transpose(reshape(reg_(hidden), {4, h * w}));
    return {std::move(objectness), std::move(regression)};
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    shared_.collect(prefix + ".shared", out);
    cls_.collect(prefix + ".cls", out);
    reg_.collect(prefix + ".reg", out);
  }

  Conv2dLayer<T>& shared() { return shared_; }
  Conv2dLayer<T>& cls() { return cls_; }
  Conv2dLayer<T>& reg() { return reg_; }

 private:
  Conv2dLayer<T> shared_;
  Conv2dLayer<T> cls_;
  Conv2dLayer<T> reg_;
};

enum class AnchorLabelKind { negative, ignore, positive };

struct AnchorLabel {
  AnchorLabelKind kind = AnchorLabelKind::ignore;
  std::optional<std::size_t> matched_gt;  // set iff positive
  std::optional<RegressionTarget> target;  // set iff positive
};

// Positive: the highest-IoU anchor of some ground truth (every anchor tying
// that maximum, provided it is > 0), or max IoU over all ground truths above
// iou_pos. Negative: max IoU below iou_neg. Everything else is ignored.
// Positives match their own argmax-IoU ground truth (lowest index on ties).
std::vector<AnchorLabel> assign_anchor_labels(const AnchorGrid& anchors,
                                              std::span<const BoxXYXY> gt,
                                              const RpnLossConfig& config);
std::vector<AnchorLabel> assign_anchor_labels(std::span<const BoxCXCYWH> anchors,
                                              std::span<const BoxXYXY> gt,
                                              const RpnLossConfig& config);

// All positives plus min(|P|, available) uniformly sampled negatives, sorted
// ascending. Deterministic for a seed.
std::vector<std::size_t> sample_minibatch(std::span<const AnchorLabel> labels, std::uint64_t seed);

template <typename T>
struct RpnLoss {
  BasicTensor<T> total;
  T classification = T(0);
  T regression = T(0);
};

// (1/N_cls) sum BCE over the selected anchors
//   + lambda (1/N_reg) sum smoothL1 over the selected positives.
template <typename T>
RpnLoss<T> rpn_loss(const RpnPrediction<T>& pred, std::span<const AnchorLabel> labels,
                    std::span<const std::size_t> selected, const RpnLossConfig& config) {
  if (selected.empty()) throw std::invalid_argument("rpn_loss: empty anchor sample");
  if (labels.size() != pred.anchor_count()) {
    throw ShapeError("rpn_loss: label count does not match prediction count");
  }
  std::vector<T> cls_targets;
  std::vector<std::size_t> positives;
  std::vector<T> reg_targets;
  cls_targets.reserve(selected.size());
  for (std::size_t i : selected) {
    const auto& label = labels[i];
    if (label.kind == AnchorLabelKind::ignore) {
      throw std::invalid_argument("rpn_loss: ignored anchor in the sample");
    }
    const bool pos = label.kind == AnchorLabelKind::positive;
    cls_targets.push_back(pos ? T(1) : T(0));
    if (pos) {
      positives.push_back(i);
      const auto& t = *label.target;
      reg_targets.insert(reg_targets.end(), {static_cast<T>(t.tx), static_cast<T>(t.ty),
                                             static_cast<T>(t.tw), static_cast<T>(t.th)});
    }
  }
  RpnLoss<T> out;
  auto cls = binary_cross_entropy(select_rows(pred.objectness, selected),
                                  std::span<const T>(cls_targets));
  out.classification = cls.item();
  if (positives.empty()) {
    out.total = cls;
    return out;
  }
  const T norm = static_cast<T>(config.lambda) / static_cast<T>(positives.size());
  auto reg = scale(smooth_l1_loss(select_rows(pred.regression, std::span<const std::size_t>(positives)),
                                  std::span<const T>(reg_targets)),
                   norm);
  out.regression = reg.item();
  out.total = add(cls, reg);
  return out;
}

struct Proposal {
  BoxXYXY box;
  double confidence = 0;  // objectness of the source anchor
  std::size_t source_anchor = 0;
};

// Regression offsets are applied to every anchor, decoded boxes clipped to
// the image, low-confidence and zero-area boxes dropped, NMS applied, and the
// result truncated. Output is confidence-descending.
std::vector<Proposal> extract_proposals(std::span<const float> objectness,
                                        std::span<const float> regression,
                                        const AnchorGrid& anchors, double image_size,
                                        double conf_threshold, double nms_iou,
                                        std::size_t max_proposals);

template <typename T>
std::vector<Proposal> extract_proposals(const RpnPrediction<T>& pred, const AnchorGrid& anchors,
                                        double image_size, const RpnConfig& config) {
  std::vector<float> obj(pred.objectness.values().begin(), pred.objectness.values().end());
  std::vector<float> reg(pred.regression.values().begin(), pred.regression.values().end());
  return extract_proposals(obj, reg, anchors, image_size, config.conf_threshold, config.nms_iou,
                           config.max_proposals);
}

}  // namespace tdet
