#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdet/backbone.hpp"
#include "tdet/config.hpp"
#include "tdet/geometry.hpp"
#include "tdet/layers.hpp"

namespace tdet {

class DegenerateRegionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Feature-cell window [y0,y1) x [x0,x1) covering a pixel box.
struct FeatureWindow {
  std::size_t y0 = 0, y1 = 0, x0 = 0, x1 = 0;
};

// Divides by the stride, rounds outward (floor start, ceil end), clamps to the
// map, and widens to at least one cell per side.
inline FeatureWindow map_to_feature_window(const BoxXYXY& box, std::size_t stride,
                                           std::size_t fm_height, std::size_t fm_width) {
  if (!(box.x2 > box.x1 && box.y2 > box.y1)) {
    throw DegenerateRegionError("roi_pool: zero-area region");
  }
  const double s = static_cast<double>(stride);
  auto span = [s](double lo, double hi, std::size_t limit) {
    const double flo = std::floor(lo / s), fhi = std::ceil(hi / s);
    const auto a = static_cast<std::size_t>(std::clamp(flo, 0.0, static_cast<double>(limit - 1)));
    auto b = static_cast<std::size_t>(std::clamp(fhi, 0.0, static_cast<double>(limit)));
    if (b <= a) b = a + 1;
    return std::pair{a, b};
  };
  const auto [y0, y1] = span(box.y1, box.y2, fm_height);
  const auto [x0, x1] = span(box.x1, box.x2, fm_width);
  return {y0, y1, x0, x1};
}

// [C_f, S_R, S_R] max-pooled crop of the feature map under the box.
template <typename T>
BasicTensor<T> roi_pool(const FeatureMap<T>& fm, const BoxXYXY& box, std::size_t output_size) {
  const auto w = map_to_feature_window(box, fm.stride, fm.height(), fm.width());
  return adaptive_max_pool2d(crop2d(fm.tensor, w.y0, w.y1, w.x0, w.x1), output_size, output_size);
}

// ROI features -> conv3x3 -> relu -> fc -> relu -> fc -> L2 normalize.
template <typename T>
class ProposalEncoder {
 public:
  ProposalEncoder() = default;

  static ProposalEncoder init(std::size_t feature_channels, const ProposalEncoderConfig& config,
                              std::mt19937_64& rng) {
    ProposalEncoder e;
    e.config_ = config;
    e.feature_channels_ = feature_channels;
    const std::size_t s = config.roi_output;
    e.conv_ = Conv2dLayer<T>::init(feature_channels, config.conv_channels, 3, 1, 1, rng);
    e.fc1_ = LinearLayer<T>::init(config.conv_channels * s * s, config.embed_dim, rng);
    e.fc2_ = LinearLayer<T>::init(config.embed_dim, config.embed_dim, rng);
    return e;
  }

  // rois [P, C_f, S_R, S_R] -> [P, d_r], unit rows.
  BasicTensor<T> encode(const BasicTensor<T>& rois) const {
    const std::size_t s = config_.roi_output;
    if (rois.rank() != 4 || rois.dim(1) != feature_channels_ || rois.dim(2) != s ||
        rois.dim(3) != s) {
      throw ShapeError("proposal encoder: expected rois [P," + std::to_string(feature_channels_) +
                       "," + std::to_string(s) + "," + std::to_string(s) + "], got " +
                       shape_str(rois.shape()));
    }
    const std::size_t p = rois.dim(0);
    auto h = relu(conv_(rois));
    h = reshape(h, {p, config_.conv_channels * s * s});
    h = relu(fc1_(h));
    return l2_normalize(fc2_(h));
  }

  // Single roi [C_f, S_R, S_R] -> [d_r].
  BasicTensor<T> encode_proposal(const BasicTensor<T>& roi) const {
    auto out = encode(stack(std::vector<BasicTensor<T>>{roi}));
    return reshape(out, {config_.embed_dim});
  }

  BasicTensor<T> encode_boxes(const FeatureMap<T>& fm, const std::vector<BoxXYXY>& boxes) const {
    std::vector<BasicTensor<T>> rois;
    rois.reserve(boxes.size());
    for (const auto& b : boxes) rois.push_back(roi_pool(fm, b, config_.roi_output));
    return encode(stack(rois));
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    conv_.collect(prefix + ".conv", out);
    fc1_.collect(prefix + ".fc1", out);
    fc2_.collect(prefix + ".fc2", out);
  }

  const ProposalEncoderConfig& config() const { return config_; }

 private:
  ProposalEncoderConfig config_;
  std::size_t feature_channels_ = 0;
  Conv2dLayer<T> conv_;
  LinearLayer<T> fc1_;
  LinearLayer<T> fc2_;
};

}  // namespace tdet
