#include "config_json.hpp"

#include <stdexcept>
#include <string>

namespace tdet {

namespace {

template <typename V>
V field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    throw std::invalid_argument(std::string("config: missing field '") + key + "'");
  }
  try {
    return j.at(key).get<V>();
  } catch (const json::exception&) {
    throw std::invalid_argument(std::string("config: field '") + key + "' has the wrong type");
  }
}

}  // namespace

json to_json(const ModelConfig& c) {
  return {
      {"preset", c.preset},
      {"image_size", c.image_size},
      {"backbone", {{"channels", c.backbone.channels}, {"feature_stride", c.backbone.feature_stride()}}},
      {"rpn",
       {{"hidden_channels", c.rpn.hidden_channels},
        {"anchor_size", c.rpn.anchor_size},
        {"lambda", c.rpn.loss.lambda},
        {"iou_pos", c.rpn.loss.iou_pos},
        {"iou_neg", c.rpn.loss.iou_neg},
        {"nms_iou", c.rpn.nms_iou},
        {"conf_threshold", c.rpn.conf_threshold},
        {"max_proposals", c.rpn.max_proposals}}},
      {"proposal",
       {{"roi_output", c.proposal.roi_output},
        {"conv_channels", c.proposal.conv_channels},
        {"embed_dim", c.proposal.embed_dim}}},
      {"text",
       {{"embed_dim", c.text.embed_dim},
        {"heads", c.text.heads},
        {"layers", c.text.layers},
        {"ffn_dim", c.text.ffn_dim},
        {"max_len", c.text.max_len}}},
      {"alignment", {{"hidden_dim", c.alignment.hidden_dim}}},
  };
}

json to_json(const TrainConfig& c) {
  return {{"preset", c.preset},     {"epochs", c.epochs},
          {"batch_size", c.batch_size}, {"lr", c.lr},
          {"momentum", c.momentum}, {"weight_decay", c.weight_decay},
          {"lr_step", c.lr_step},   {"lr_gamma", c.lr_gamma},
          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.preset = field<std::string>(j, "preset");
  c.image_size = field<std::size_t>(j, "image_size");
  const json b = field<json>(j, "backbone");
  c.backbone.channels = field<std::vector<std::size_t>>(b, "channels");
  const json r = field<json>(j, "rpn");
  c.rpn.hidden_channels = field<std::size_t>(r, "hidden_channels");
  c.rpn.anchor_size = field<double>(r, "anchor_size");
  c.rpn.loss.lambda = field<double>(r, "lambda");
  c.rpn.loss.iou_pos = field<double>(r, "iou_pos");
  c.rpn.loss.iou_neg = field<double>(r, "iou_neg");
  c.rpn.nms_iou = field<double>(r, "nms_iou");
  c.rpn.conf_threshold = field<double>(r, "conf_threshold");
  c.rpn.max_proposals = field<std::size_t>(r, "max_proposals");
  const json p = field<json>(j, "proposal");
  c.proposal.roi_output = field<std::size_t>(p, "roi_output");
  c.proposal.conv_channels = field<std::size_t>(p, "conv_channels");
  c.proposal.embed_dim = field<std::size_t>(p, "embed_dim");
  const json t = field<json>(j, "text");
  c.text.embed_dim = field<std::size_t>(t, "embed_dim");
  c.text.heads = field<std::size_t>(t, "heads");
  c.text.layers = field<std::size_t>(t, "layers");
  c.text.ffn_dim = field<std::size_t>(t, "ffn_dim");
  c.text.max_len = field<std::size_t>(t, "max_len");
  c.alignment.hidden_dim = field<std::size_t>(field<json>(j, "alignment"), "hidden_dim");
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.preset = field<std::string>(j, "preset");
  c.epochs = field<std::size_t>(j, "epochs");
  c.batch_size = field<std::size_t>(j, "batch_size");
  c.lr = field<double>(j, "lr");
  c.momentum = field<double>(j, "momentum");
  c.weight_decay = field<double>(j, "weight_decay");
  c.lr_step = field<std::size_t>(j, "lr_step");
  c.lr_gamma = field<double>(j, "lr_gamma");
  c.seed = field<std::uint64_t>(j, "seed");
  return c;
}

}  // namespace tdet
