#include "tdet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace tdet {

BoxCXCYWH to_cxcywh(const BoxXYXY& b) {
  return {(b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0, b.x2 - b.x1, b.y2 - b.y1};
}

BoxXYXY to_xyxy(const BoxCXCYWH& b) {
  return {b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0};
}

double iou(const BoxXYXY& a, const BoxXYXY& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

RegressionTarget encode_box(const BoxCXCYWH& gt, const BoxCXCYWH& anchor) {
  if (!(anchor.w > 0 && anchor.h > 0)) throw std::invalid_argument("encode_box: anchor w/h <= 0");
  if (!(gt.w > 0 && gt.h > 0)) throw std::invalid_argument("encode_box: ground-truth w/h <= 0");
  return {(gt.cx - anchor.cx) / anchor.w, (gt.cy - anchor.cy) / anchor.h,
          std::log(gt.w / anchor.w), std::log(gt.h / anchor.h)};
}

BoxCXCYWH decode_box(const RegressionTarget& t, const BoxCXCYWH& anchor) {
  return {t.tx * anchor.w + anchor.cx, t.ty * anchor.h + anchor.cy, anchor.w * std::exp(t.tw),
          anchor.h * std::exp(t.th)};
}

AnchorGrid build_anchor_grid(std::size_t image_size, std::size_t feature_stride,
                             double anchor_size) {
  if (feature_stride == 0 || image_size == 0 || image_size % feature_stride != 0) {
    throw std::invalid_argument("build_anchor_grid: image size " + std::to_string(image_size) +
                                " is not a positive multiple of stride " +
                                std::to_string(feature_stride));
  }
  AnchorGrid grid;
  grid.cells_per_side = image_size / feature_stride;
  grid.feature_stride = feature_stride;
  grid.anchor_size = anchor_size;
  grid.anchors.reserve(grid.cells_per_side * grid.cells_per_side);
  const double s = static_cast<double>(feature_stride);
  for (std::size_t r = 0; r < grid.cells_per_side; ++r) {
    for (std::size_t c = 0; c < grid.cells_per_side; ++c) {
      grid.anchors.push_back({(static_cast<double>(c) + 0.5) * s,
                              (static_cast<double>(r) + 0.5) * s, anchor_size, anchor_size});
    }
  }
  return grid;
}

BoxXYXY clip_box(const BoxXYXY& b, double image_size) {
  auto clamp = [image_size](double v) { return std::clamp(v, 0.0, image_size); };
  return {clamp(b.x1), clamp(b.y1), clamp(b.x2), clamp(b.y2)};
}

std::vector<std::size_t> nms(std::span<const BoxXYXY> boxes, std::span<const double> scores,
                             double iou_threshold) {
  if (boxes.size() != scores.size()) throw std::invalid_argument("nms: size mismatch");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<std::size_t> keep;
  std::vector<char> suppressed(boxes.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t cur = order[i];
    if (suppressed[cur]) continue;
    keep.push_back(cur);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const std::size_t other = order[j];
      if (!suppressed[other] && iou(boxes[cur], boxes[other]) > iou_threshold) {
        suppressed[other] = 1;
      }
    }
  }
  return keep;
}

}  // namespace tdet
