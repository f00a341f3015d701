#include "tdet/inference.hpp"

#include <algorithm>
#include <cstdio>

#include <json.hpp>

namespace tdet {

std::vector<AlignedDetection> Analysis::detections() const {
  std::vector<AlignedDetection> out;
  out.reserve(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const double c = proposals[i].confidence, a = alignment[i];
    out.push_back({proposals[i].box, c, a, score(c, a)});
  }
  return out;
}

Analysis analyze(const Detector<float>& model, const Image& image, std::string_view query) {
  const std::size_t size = model.config.image_size;
  if (image.width != size || image.height != size) {
    throw ImageSizeError("image is " + std::to_string(image.width) + "x" +
                         std::to_string(image.height) + ", model expects " + std::to_string(size) +
                         "x" + std::to_string(size));
  }
  NoGradGuard no_grad;
  Analysis out;
  const auto fm = model.backbone.forward(image_to_tensor<float>(image));
  const auto pred = model.rpn.forward(fm, model.anchors.cells_per_side);
  out.proposals = extract_proposals(pred, model.anchors, static_cast<double>(size), model.config.rpn);
  if (out.proposals.empty()) return out;

  std::vector<BoxXYXY> boxes;
  boxes.reserve(out.proposals.size());
  for (const auto& p : out.proposals) boxes.push_back(p.box);
  const auto text = model.text_encoder.encode(tokenize(query, model.vocab, model.config.text.max_len));
  const auto scores = model.alignment.forward(model.proposal_encoder.encode_boxes(fm, boxes), text);
  out.alignment.assign(scores.values().begin(), scores.values().end());
  return out;
}

std::vector<AlignedDetection> detect(const Detector<float>& model, const Image& image,
                                     std::string_view query, const InferenceConfig& config) {
  return select_topk(analyze(model, image, query).detections(), config);
}

namespace {

nlohmann::json detections_array(const std::vector<AlignedDetection>& detections) {
  auto arr = nlohmann::json::array();
  for (const auto& d : detections) {
    arr.push_back({{"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}},
                   {"confidence", d.confidence},
                   {"alignment", d.alignment},
                   {"score", d.score}});
  }
  return arr;
}

}  // namespace

std::string detections_json(const std::vector<AlignedDetection>& detections) {
  return detections_array(detections).dump();
}

std::string inference_response_json(const std::vector<AlignedDetection>& detections,
                                    std::size_t image_size, double timing_ms) {
  return nlohmann::json{{"detections", detections_array(detections)},
                        {"image_size", image_size},
                        {"timing_ms", timing_ms}}
      .dump();
}

Image render_detections(const Image& image, const std::vector<AlignedDetection>& detections) {
  Image out = image;
  const Rgb outline{255, 255, 0};
  for (const auto& d : detections) {
    draw_box(out, d.box, outline, 2);
    char label[16];
    std::snprintf(label, sizeof(label), "%.2f", d.score);
    const int y = std::max(0, static_cast<int>(d.box.y1) - 7);
    draw_label(out, label, static_cast<int>(d.box.x1), y, outline);
  }
  return out;
}

}  // namespace tdet
