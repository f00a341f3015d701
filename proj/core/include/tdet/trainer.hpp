#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdet/checkpoint.hpp"
#include "tdet/config.hpp"
#include "tdet/detector.hpp"
#include "tdet/shapegen.hpp"

namespace tdet {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// base_lr * gamma^floor(epoch / step), rounded to 15 significant digits so
// decimal rates come out exact (step_lr(3, 1e-2, 3, 0.9) == 9e-3).
double step_lr(std::size_t epoch, double base_lr, std::size_t step, double gamma);

// g = grad + weight_decay * w;  v = momentum * v + g;  w -= lr * v.
template <typename T>
void sgd_update(std::span<T> weights, std::span<const T> grads, std::span<T> velocity, double lr,
                double momentum, double weight_decay) {
  if (weights.size() != grads.size() || weights.size() != velocity.size()) {
    throw ShapeError("sgd_update: weight, gradient and velocity sizes differ");
  }
  const T lr_t = static_cast<T>(lr), mom = static_cast<T>(momentum), wd = static_cast<T>(weight_decay);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const T g = grads[i] + wd * weights[i];
    velocity[i] = mom * velocity[i] + g;
    weights[i] -= lr_t * velocity[i];
  }
}

// SGD with momentum over a fixed parameter list. Velocity starts at zero and
// lives only as long as the optimizer (it is not checkpointed).
class SgdOptimizer {
 public:
  SgdOptimizer(ParameterList<float> params, double momentum, double weight_decay);

  // Applies one update using each parameter's accumulated gradient times
  // grad_scale, then clears the gradients.
  void step(double lr, double grad_scale);

  const ParameterList<float>& parameters() const { return params_; }

 private:
  ParameterList<float> params_;
  std::vector<std::vector<float>> velocity_;
  std::vector<float> scratch_;
  double momentum_;
  double weight_decay_;
};

struct StepResult {
  double rpn_loss = 0;
  double rpn_classification = 0;
  double rpn_regression = 0;
  double align_loss = 0;
  std::size_t sampled = 0;
  std::size_t positives = 0;
  // True when no anchor was positive, so the alignment term was skipped.
  bool align_skipped = false;
  // True when the anchor sample was empty and nothing was computed.
  bool skipped = false;
  // Alignment scores and labels for the positive anchors, in sample order.
  std::vector<float> align_scores;
  std::vector<float> align_labels;
};

// Joint forward over one example: RPN loss on the sampled anchors plus
// alignment loss on the positive anchors' own boxes. Gradients are
// accumulated into the model when `backward` is set; parameters are untouched.
StepResult train_step(const Detector<float>& model, const SceneExample& example,
                      std::uint64_t sample_seed, bool backward = true);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_rpn = 0;
  double train_align = 0;
  double val_rpn = 0;
  double val_align = 0;
  bool operator==(const EpochRecord&) const = default;
};

struct LossLog {
  std::vector<EpochRecord> records;

  // Header `epoch,train_rpn,train_align,val_rpn,val_align`, one row per epoch.
  std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainOptions {
  // When set, rewritten after every epoch.
  std::filesystem::path checkpoint_path;
  std::filesystem::path loss_log_path;
  std::function<void(const std::string&)> log;
  // Overrides the preset model config (tests use smaller models).
  const ModelConfig* model_config = nullptr;
};

struct TrainResult {
  Detector<float> model;
  LossLog losses;
  TrainingMetadata metadata;
  std::size_t align_skipped = 0;
  std::size_t optimizer_steps = 0;
};

// Reads every record of a split into memory.
std::vector<SceneExample> load_split(const DatasetManifest& manifest, std::string_view split);

TrainResult train(const std::vector<SceneExample>& train_set, const std::vector<SceneExample>& val_set,
                  const TrainConfig& config, const TrainOptions& options = {});
TrainResult train(const DatasetManifest& manifest, const TrainConfig& config,
                  const TrainOptions& options = {});

}  // namespace tdet
