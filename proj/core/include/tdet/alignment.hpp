#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tdet/config.hpp"
#include "tdet/geometry.hpp"
#include "tdet/layers.hpp"

namespace tdet {

// sigmoid(relu([proposal; text] W1 + b1) W2 + b2). W2 and b2 start at zero so
// every pair scores exactly 0.5 before training.
template <typename T>
class AlignmentHead {
 public:
  AlignmentHead() = default;

  static AlignmentHead init(std::size_t proposal_dim, std::size_t text_dim,
                            const AlignmentConfig& config, std::mt19937_64& rng) {
    AlignmentHead a;
    a.proposal_dim_ = proposal_dim;
    a.text_dim_ = text_dim;
    a.fc1_ = LinearLayer<T>::init(proposal_dim + text_dim, config.hidden_dim, rng);
    a.fc2_ = {zeros_param<T>({config.hidden_dim, 1}), zeros_param<T>({1})};
    return a;
  }

  // proposals [P, d_r], text [1, d_t] -> [P] scores in (0,1).
  BasicTensor<T> forward(const BasicTensor<T>& proposals, const BasicTensor<T>& text) const {
    if (proposals.rank() != 2 || proposals.dim(1) != proposal_dim_) {
      throw ShapeError("alignment: proposal embeddings must be [P," + std::to_string(proposal_dim_) +
                       "], got " + shape_str(proposals.shape()));
    }
    if (text.numel() != text_dim_) {
      throw ShapeError("alignment: text embedding must have " + std::to_string(text_dim_) +
                       " elements, got " + shape_str(text.shape()));
    }
    const std::size_t p = proposals.dim(0);
    const auto t = text.rank() == 2 ? text : reshape(text, {1, text_dim_});
    const std::vector<std::size_t> rows(p, 0);
    const auto z = concat_cols(std::vector<BasicTensor<T>>{proposals, select_rows(t, std::span<const std::size_t>(rows))});
    return reshape(sigmoid(fc2_(relu(fc1_(z)))), {p});
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    fc1_.collect(prefix + ".fc1", out);
    fc2_.collect(prefix + ".fc2", out);
  }

  LinearLayer<T>& fc1() { return fc1_; }
  LinearLayer<T>& fc2() { return fc2_; }

 private:
  std::size_t proposal_dim_ = 0;
  std::size_t text_dim_ = 0;
  LinearLayer<T> fc1_;
  LinearLayer<T> fc2_;
};

// Mean binary cross-entropy; throws on an empty batch.
template <typename T>
BasicTensor<T> align_loss(const BasicTensor<T>& predictions, std::span<const T> labels) {
  if (labels.empty()) throw std::invalid_argument("align_loss: empty batch");
  return binary_cross_entropy(predictions, labels);
}

inline double score(double confidence, double alignment) { return confidence * alignment; }

struct AlignedDetection {
  BoxXYXY box;
  double confidence = 0;
  double alignment = 0;
  double score = 0;
};

struct InferenceConfig {
  double score_threshold = 0.5;
  std::size_t top_k = 20;
};

// Keeps score > threshold, sorts score-descending (ties by input order), truncates to k.
std::vector<AlignedDetection> select_topk(const std::vector<AlignedDetection>& detections,
                                          const InferenceConfig& config);

}  // namespace tdet
