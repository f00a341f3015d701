#pragma once

#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdet/config.hpp"
#include "tdet/image.hpp"
#include "tdet/layers.hpp"

namespace tdet {

template <typename T>
struct FeatureMap {
  BasicTensor<T> tensor;  // [C_f, W_f, W_f]
  std::size_t stride = 1;

  std::size_t channels() const { return tensor.dim(0); }
  std::size_t height() const { return tensor.dim(1); }
  std::size_t width() const { return tensor.dim(2); }
};

// [3,H,W] with channels scaled to [0,1].
template <typename T>
BasicTensor<T> image_to_tensor(const Image& image) {
  const std::size_t hw = image.width * image.height;
  std::vector<T> values(3 * hw);
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      values[c * hw + i] = static_cast<T>(image.pixels[i * 3 + c]) / T(255);
    }
  }
  return BasicTensor<T>({3, image.height, image.width}, std::move(values));
}

// Strided conv3x3 + relu stack shared by the RPN and the proposal encoder.
template <typename T>
class Backbone {
 public:
  Backbone() = default;

  static Backbone init(const BackboneConfig& config, std::mt19937_64& rng) {
    Backbone b;
    b.config_ = config;
    std::size_t c_in = 3;
    for (std::size_t c_out : config.channels) {
      b.blocks_.push_back(Conv2dLayer<T>::init(c_in, c_out, 3, 2, 1, rng));
      c_in = c_out;
    }
    return b;
  }

  FeatureMap<T> forward(const BasicTensor<T>& image) const {
    if (image.rank() != 3 || image.dim(0) != 3) {
      throw ShapeError("backbone: expected image tensor [3,S,S], got " + shape_str(image.shape()));
    }
    const std::size_t stride = config_.feature_stride();
    if (image.dim(1) % stride != 0 || image.dim(2) % stride != 0) {
      throw ShapeError("backbone: image size " + std::to_string(image.dim(1)) +
                       " not divisible by feature stride " + std::to_string(stride));
    }
    BasicTensor<T> x = reshape(image, {1, 3, image.dim(1), image.dim(2)});
    for (const auto& block : blocks_) x = relu(block(x));
    return {reshape(x, {x.dim(1), x.dim(2), x.dim(3)}), stride};
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
    }
  }

  const BackboneConfig& config() const { return config_; }
  const std::vector<Conv2dLayer<T>>& blocks() const { return blocks_; }

 private:
  BackboneConfig config_;
  std::vector<Conv2dLayer<T>> blocks_;
};

}  // namespace tdet
