#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tdet {

// Corner form, image pixels, origin top-left.
struct BoxXYXY {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool operator==(const BoxXYXY&) const = default;
};

struct BoxCXCYWH {
  double cx = 0, cy = 0, w = 0, h = 0;
  bool operator==(const BoxCXCYWH&) const = default;
};

// Anchor-relative box regression coefficients.
struct RegressionTarget {
  double tx = 0, ty = 0, tw = 0, th = 0;
};

struct AnchorGrid {
  std::vector<BoxCXCYWH> anchors;  // row-major over (row, col) of the feature map
  std::size_t cells_per_side = 0;
  std::size_t feature_stride = 0;
  double anchor_size = 0;
};

BoxCXCYWH to_cxcywh(const BoxXYXY& b);
BoxXYXY to_xyxy(const BoxCXCYWH& b);

// 0 when the union is empty.
double iou(const BoxXYXY& a, const BoxXYXY& b);

// Throws std::invalid_argument on non-positive gt or anchor dimensions.
RegressionTarget encode_box(const BoxCXCYWH& gt, const BoxCXCYWH& anchor);
BoxCXCYWH decode_box(const RegressionTarget& t, const BoxCXCYWH& anchor);

// Throws std::invalid_argument when image_size is not a multiple of feature_stride.
AnchorGrid build_anchor_grid(std::size_t image_size, std::size_t feature_stride,
                             double anchor_size);

BoxXYXY clip_box(const BoxXYXY& b, double image_size);

// Greedy suppression. Returns kept indices in score-descending order, equal
// scores ordered by lower index. Boxes with IoU strictly above the threshold
// against a kept box are dropped.
std::vector<std::size_t> nms(std::span<const BoxXYXY> boxes, std::span<const double> scores,
                             double iou_threshold);

}  // namespace tdet
