#include "tdet/detector.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace tdet {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.preset = "paper";
  c.image_size = 512;
  c.backbone.channels = {16, 32, 64, 128, 128};
  c.rpn.anchor_size = 64;
  return c;
}

ModelConfig ModelConfig::for_preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw std::invalid_argument("unknown preset '" + name + "' (expected desk or paper)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (backbone.channels.empty()) fail("backbone needs at least one block");
  if (image_size == 0 || image_size % backbone.feature_stride() != 0) {
    fail("image_size must be a multiple of the feature stride");
  }
  if (!(rpn.anchor_size > 0)) fail("anchor_size must be positive");
  if (!(rpn.loss.iou_neg >= 0 && rpn.loss.iou_neg < rpn.loss.iou_pos && rpn.loss.iou_pos <= 1)) {
    fail("need 0 <= iou_neg < iou_pos <= 1");
  }
  if (!(rpn.loss.lambda > 0)) fail("lambda must be positive");
  if (rpn.hidden_channels == 0 || rpn.max_proposals == 0) fail("rpn sizes must be positive");
  if (proposal.roi_output == 0 || proposal.embed_dim == 0 || proposal.conv_channels == 0) {
    fail("proposal encoder sizes must be positive");
  }
  if (text.heads == 0 || text.embed_dim % text.heads != 0) {
    fail("text embed_dim must be divisible by heads");
  }
  if (text.max_len == 0 || text.ffn_dim == 0) fail("text encoder sizes must be positive");
  if (alignment.hidden_dim == 0) fail("alignment hidden_dim must be positive");
}

std::vector<AlignedDetection> select_topk(const std::vector<AlignedDetection>& detections,
                                          const InferenceConfig& config) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    if (detections[i].score > config.score_threshold) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].score > detections[b].score;
  });
  if (order.size() > config.top_k) order.resize(config.top_k);
  std::vector<AlignedDetection> out;
  out.reserve(order.size());
  for (std::size_t i : order) out.push_back(detections[i]);
  return out;
}

}  // namespace tdet
