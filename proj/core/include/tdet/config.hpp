#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace tdet {

struct BackboneConfig {
  // One conv3x3/stride-2 + relu block per entry.
  std::vector<std::size_t> channels{16, 32, 64};

  std::size_t feature_stride() const { return std::size_t{1} << channels.size(); }
  std::size_t out_channels() const { return channels.empty() ? 3 : channels.back(); }

  bool operator==(const BackboneConfig&) const = default;
};

struct RpnLossConfig {
  double lambda = 1.0;
  double iou_pos = 0.6;
  double iou_neg = 0.1;

  bool operator==(const RpnLossConfig&) const = default;
};

struct RpnConfig {
  std::size_t hidden_channels = 256;
  double anchor_size = 16;
  RpnLossConfig loss;
  double nms_iou = 0.5;
  double conf_threshold = 0.5;
  std::size_t max_proposals = 100;

  bool operator==(const RpnConfig&) const = default;
};

struct ProposalEncoderConfig {
  std::size_t roi_output = 2;      // S_R
  std::size_t conv_channels = 128;  // C_h
  std::size_t embed_dim = 64;       // d_r

  bool operator==(const ProposalEncoderConfig&) const = default;
};

struct TextEncoderConfig {
  std::size_t embed_dim = 64;  // d_t
  std::size_t heads = 2;
  std::size_t layers = 1;
  std::size_t ffn_dim = 128;
  std::size_t max_len = 8;

  bool operator==(const TextEncoderConfig&) const = default;
};

struct AlignmentConfig {
  std::size_t hidden_dim = 64;  // d_j

  bool operator==(const AlignmentConfig&) const = default;
};

struct ModelConfig {
  std::string preset = "desk";
  std::size_t image_size = 128;
  BackboneConfig backbone;
  RpnConfig rpn;
  ProposalEncoderConfig proposal;
  TextEncoderConfig text;
  AlignmentConfig alignment;

  static ModelConfig desk();
  static ModelConfig paper();
  static ModelConfig for_preset(const std::string& name);

  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
  std::string preset = "desk";
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  std::size_t lr_step = 3;
  double lr_gamma = 0.9;
  std::uint64_t seed = 0;

  static TrainConfig desk();   // batch 16
  static TrainConfig paper();  // batch 32
  static TrainConfig for_preset(const std::string& name);

  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

}  // namespace tdet
