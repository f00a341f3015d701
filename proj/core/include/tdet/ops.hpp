#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tdet/tensor.hpp"

// Differentiable kernels. Every op records a backward node when grad mode is
// on and at least one input requires grad. Templates are instantiated for
// float (training, inference) and double (gradient checks).
namespace tdet {

enum class Activation { relu, sigmoid, softmax_lastdim };

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kL2NormalizeEps = 1e-12;
inline constexpr double kProbabilityClamp = 1e-7;

// Elementwise, identical shapes.
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, T factor);

template <typename T> BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& a);

// Copies values into a new shape with the same element count.
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);

// [M,K] x [K,N] -> [M,N]
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> transpose(const BasicTensor<T>& a);

// input [N,d_in], weight [d_in,d_out], bias [d_out] -> [N,d_out]
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias);

// input [N,C_in,H,W], weight [C_out,C_in,kH,kW], bias [C_out]
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, std::size_t stride, std::size_t padding);

template <typename T> BasicTensor<T> relu(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& a);
// Normalized over the last dimension, max-subtracted.
template <typename T> BasicTensor<T> softmax_lastdim(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> activation(const BasicTensor<T>& a, Activation kind);

// Normalizes over the last dimension (population variance), then gamma * x + beta.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps = T(kLayerNormEps));

// input [C,h,w]. Output cell (i,j) is the max over rows
// [floor(i*h/out_h), ceil((i+1)*h/out_h)) and the analogous columns. Gradient
// goes to the first maximum in row-major order.
template <typename T>
BasicTensor<T> adaptive_max_pool2d(const BasicTensor<T>& input, std::size_t out_h,
                                   std::size_t out_w);

// input [C,H,W] -> [C, y1-y0, x1-x0]
template <typename T>
BasicTensor<T> crop2d(const BasicTensor<T>& input, std::size_t y0, std::size_t y1, std::size_t x0,
                      std::size_t x1);

// v / max(||v||, eps) along the last dimension. Inputs with norm below eps
// come out shorter than unit length.
template <typename T>
BasicTensor<T> l2_normalize(const BasicTensor<T>& v, T eps = T(kL2NormalizeEps));

// Row ops treat dimension 0 as rows and the remaining dimensions as one row.
// Indices may repeat; gradients scatter-add.
template <typename T>
BasicTensor<T> select_rows(const BasicTensor<T>& a, std::span<const std::size_t> rows);
// [N,p] ++ [N,q] -> [N,p+q]
template <typename T>
BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>& parts);
// [N,d] -> [N,len]
template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& a, std::size_t start, std::size_t len);
// k tensors of identical shape S -> [k, S...]
template <typename T> BasicTensor<T> stack(const std::vector<BasicTensor<T>>& parts);

// Mean binary cross-entropy over probabilities in [N] (or any shape) against
// 0/1 labels. Probabilities are clamped to [kProbabilityClamp, 1 - kProbabilityClamp];
// the gradient is evaluated at the clamped value.
template <typename T>
BasicTensor<T> binary_cross_entropy(const BasicTensor<T>& probs, std::span<const T> labels);

template <typename T> T smooth_l1(T x);
// Sum over all elements of smooth_l1(pred - target).
template <typename T>
BasicTensor<T> smooth_l1_loss(const BasicTensor<T>& pred, std::span<const T> target);

}  // namespace tdet
