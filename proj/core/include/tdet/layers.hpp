#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "tdet/ops.hpp"

namespace tdet {

template <typename T>
struct NamedParameter {
  std::string name;
  BasicTensor<T> tensor;
  bool decay = true;  // false for biases and layer-norm affine terms
};

template <typename T>
using ParameterList = std::vector<NamedParameter<T>>;

// He fan-in normal initialization.
template <typename T>
BasicTensor<T> he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<T> values(shape_numel(shape));
  for (T& v : values) v = static_cast<T>(dist(rng));
  return BasicTensor<T>(std::move(shape), std::move(values), true);
}

template <typename T>
BasicTensor<T> zeros_param(Shape shape) {
  return BasicTensor<T>(std::move(shape), true);
}

template <typename T>
BasicTensor<T> full_param(Shape shape, T value) {
  BasicTensor<T> t = BasicTensor<T>::full(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

template <typename T>
struct Conv2dLayer {
  BasicTensor<T> weight;  // [C_out, C_in, k, k]
  BasicTensor<T> bias;    // [C_out]
  std::size_t stride = 1;
  std::size_t padding = 0;

  static Conv2dLayer init(std::size_t c_in, std::size_t c_out, std::size_t kernel,
                          std::size_t stride, std::size_t padding, std::mt19937_64& rng) {
    return {he_normal<T>({c_out, c_in, kernel, kernel}, c_in * kernel * kernel, rng),
            zeros_param<T>({c_out}), stride, padding};
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const {
    return conv2d(x, weight, bias, stride, padding);
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".weight", weight, true});
    out.push_back({prefix + ".bias", bias, false});
  }
};

template <typename T>
struct LinearLayer {
  BasicTensor<T> weight;  // [d_in, d_out]
  BasicTensor<T> bias;    // [d_out]

  static LinearLayer init(std::size_t d_in, std::size_t d_out, std::mt19937_64& rng) {
    return {he_normal<T>({d_in, d_out}, d_in, rng), zeros_param<T>({d_out})};
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return linear(x, weight, bias); }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".weight", weight, true});
    out.push_back({prefix + ".bias", bias, false});
  }
};

template <typename T>
struct LayerNormLayer {
  BasicTensor<T> gamma;
  BasicTensor<T> beta;

  static LayerNormLayer init(std::size_t d) {
    return {full_param<T>({d}, T(1)), zeros_param<T>({d})};
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return layer_norm(x, gamma, beta); }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".gamma", gamma, false});
    out.push_back({prefix + ".beta", beta, false});
  }
};

}  // namespace tdet
