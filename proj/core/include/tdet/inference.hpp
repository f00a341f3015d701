#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tdet/alignment.hpp"
#include "tdet/detector.hpp"
#include "tdet/image.hpp"
#include "tdet/rpn.hpp"

namespace tdet {

class InferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The image does not have the checkpoint's configured size. Images are never resized.
class ImageSizeError : public InferenceError {
 public:
  using InferenceError::InferenceError;
};

// Every RPN proposal with its alignment score against the query.
struct Analysis {
  std::vector<Proposal> proposals;
  std::vector<double> alignment;  // one per proposal

  // Proposals as scored detections, in proposal order.
  std::vector<AlignedDetection> detections() const;
};

// backbone -> extract_proposals -> roi_pool + encode the regressed boxes ->
// encode the query -> alignment. Runs without recording a graph.
Analysis analyze(const Detector<float>& model, const Image& image, std::string_view query);

// analyze followed by select_topk.
std::vector<AlignedDetection> detect(const Detector<float>& model, const Image& image,
                                     std::string_view query, const InferenceConfig& config);

// {"box":[x1,y1,x2,y2],"confidence":c,"alignment":a,"score":s} objects.
std::string detections_json(const std::vector<AlignedDetection>& detections);
// {"detections":[...],"image_size":S,"timing_ms":t}
std::string inference_response_json(const std::vector<AlignedDetection>& detections,
                                    std::size_t image_size, double timing_ms);

// 2 px outlines with the score printed above each box.
Image render_detections(const Image& image, const std::vector<AlignedDetection>& detections);

}  // namespace tdet
