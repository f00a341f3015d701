#include "tdet/rpn.hpp"

#include <algorithm>
#include <cmath>

#include "tdet/rng.hpp"

namespace tdet {

namespace {

// Caps exp() in box decoding; a proposal can grow to at most ~62x its anchor.
constexpr double kMaxLogScale = 4.135166556742356;  // log(1000 / 16)

}  // namespace

std::vector<AnchorLabel> assign_anchor_labels(const AnchorGrid& anchors,
                                              std::span<const BoxXYXY> gt,
                                              const RpnLossConfig& config) {
  return assign_anchor_labels(std::span<const BoxCXCYWH>(anchors.anchors), gt, config);
}

std::vector<AnchorLabel> assign_anchor_labels(std::span<const BoxCXCYWH> anchors,
                                              std::span<const BoxXYXY> gt,
                                              const RpnLossConfig& config) {
  if (anchors.empty()) throw std::invalid_argument("assign_anchor_labels: no anchors");
  const std::size_t na = anchors.size(), ng = gt.size();
  std::vector<AnchorLabel> labels(na);
  if (ng == 0) {
    for (auto& l : labels) l.kind = AnchorLabelKind::negative;
    return labels;
  }

  std::vector<BoxXYXY> corner(na);
  for (std::size_t a = 0; a < na; ++a) corner[a] = to_xyxy(anchors[a]);
  std::vector<double> overlaps(na * ng);
  for (std::size_t a = 0; a < na; ++a) {
    for (std::size_t g = 0; g < ng; ++g) overlaps[a * ng + g] = iou(corner[a], gt[g]);
  }

  std::vector<double> anchor_max(na, 0.0);
  std::vector<std::size_t> anchor_arg(na, 0);
  for (std::size_t a = 0; a < na; ++a) {
    for (std::size_t g = 0; g < ng; ++g) {
      if (overlaps[a * ng + g] > anchor_max[a]) {
        anchor_max[a] = overlaps[a * ng + g];
        anchor_arg[a] = g;
      }
    }
  }

  std::vector<char> positive(na, 0);
  for (std::size_t g = 0; g < ng; ++g) {
    double best = 0.0;
    for (std::size_t a = 0; a < na; ++a) best = std::max(best, overlaps[a * ng + g]);
    if (best <= 0.0) continue;
    for (std::size_t a = 0; a < na; ++a) {
      if (overlaps[a * ng + g] == best) positive[a] = 1;
    }
  }
  for (std::size_t a = 0; a < na; ++a) {
    if (anchor_max[a] > config.iou_pos) positive[a] = 1;
  }

  for (std::size_t a = 0; a < na; ++a) {
    auto& l = labels[a];
    if (positive[a]) {
      l.kind = AnchorLabelKind::positive;
      l.matched_gt = anchor_arg[a];
      l.target = encode_box(to_cxcywh(gt[anchor_arg[a]]), anchors[a]);
    } else if (anchor_max[a] < config.iou_neg) {
      l.kind = AnchorLabelKind::negative;
    }
  }
  return labels;
}

std::vector<std::size_t> sample_minibatch(std::span<const AnchorLabel> labels, std::uint64_t seed) {
  std::vector<std::size_t> positives, negatives;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].kind == AnchorLabelKind::positive) positives.push_back(i);
    if (labels[i].kind == AnchorLabelKind::negative) negatives.push_back(i);
  }
  const std::size_t take = std::min(positives.size(), negatives.size());
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + uniform_index(rng, negatives.size() - i);
    std::swap(negatives[i], negatives[j]);
  }
  std::vector<std::size_t> selected = std::move(positives);
  selected.insert(selected.end(), negatives.begin(), negatives.begin() + static_cast<std::ptrdiff_t>(take));
  std::sort(selected.begin(), selected.end());
  return selected;
}

std::vector<Proposal> extract_proposals(std::span<const float> objectness,
                                        std::span<const float> regression,
                                        const AnchorGrid& anchors, double image_size,
                                        double conf_threshold, double nms_iou,
                                        std::size_t max_proposals) {
  const std::size_t na = anchors.anchors.size();
  if (objectness.size() != na || regression.size() != na * 4) {
    throw ShapeError("extract_proposals: prediction size does not match the anchor grid");
  }
  std::vector<Proposal> candidates;
  for (std::size_t a = 0; a < na; ++a) {
    const double conf = objectness[a];
    if (conf < conf_threshold) continue;
    RegressionTarget t{regression[a * 4], regression[a * 4 + 1],
                       std::min<double>(regression[a * 4 + 2], kMaxLogScale),
                       std::min<double>(regression[a * 4 + 3], kMaxLogScale)};
    const BoxXYXY box = clip_box(to_xyxy(decode_box(t, anchors.anchors[a])), image_size);
    if (!(box.width() > 0.0 && box.height() > 0.0)) continue;
    candidates.push_back({box, conf, a});
  }
  std::vector<BoxXYXY> boxes;
  std::vector<double> scores;
  for (const auto& p : candidates) {
    boxes.push_back(p.box);
    scores.push_back(p.confidence);
  }
  const auto keep = nms(boxes, scores, nms_iou);
  std::vector<Proposal> out;
  for (std::size_t i = 0; i < keep.size() && out.size() < max_proposals; ++i) {
    out.push_back(candidates[keep[i]]);
  }
  return out;
}

}  // namespace tdet
