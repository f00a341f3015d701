#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "tdet/alignment.hpp"
#include "tdet/backbone.hpp"
#include "tdet/config.hpp"
#include "tdet/geometry.hpp"
#include "tdet/proposal_encoder.hpp"
#include "tdet/rpn.hpp"
#include "tdet/text_encoder.hpp"

namespace tdet {

// The full model: backbone, RPN, proposal and text encoders, alignment head,
// and the anchor grid they share.
template <typename T>
struct Detector {
  ModelConfig config;
  Vocabulary vocab = Vocabulary::standard();
  AnchorGrid anchors;
  Backbone<T> backbone;
  RpnHead<T> rpn;
  ProposalEncoder<T> proposal_encoder;
  TextEncoder<T> text_encoder;
  AlignmentHead<T> alignment;

  static Detector init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    Detector d;
    d.config = config;
    d.anchors = build_anchor_grid(config.image_size, config.backbone.feature_stride(),
                                  config.rpn.anchor_size);
    const std::size_t cf = config.backbone.out_channels();
    d.backbone = Backbone<T>::init(config.backbone, rng);
    d.rpn = RpnHead<T>::init(cf, config.rpn, rng);
    d.proposal_encoder = ProposalEncoder<T>::init(cf, config.proposal, rng);
    d.text_encoder = TextEncoder<T>::init(d.vocab.size(), config.text, rng);
    d.alignment = AlignmentHead<T>::init(config.proposal.embed_dim, config.text.embed_dim,
                                         config.alignment, rng);
    return d;
  }

  // Stable order; names are the checkpoint tensor keys.
  ParameterList<T> parameters() const {
    ParameterList<T> out;
    backbone.collect("backbone", out);
    rpn.collect("rpn", out);
    proposal_encoder.collect("proposal_encoder", out);
    text_encoder.collect("text_encoder", out);
    alignment.collect("alignment", out);
    return out;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.tensor.zero_grad();
  }
};

}  // namespace tdet
