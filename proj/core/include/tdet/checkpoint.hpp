#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdet/config.hpp"
#include "tdet/detector.hpp"

namespace tdet {

// Every load failure derives from CheckpointError; the subclasses let callers
// tell a damaged file from an incompatible one.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable file, bad magic, truncated data, malformed header.
class CheckpointFormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// Tensor missing, unexpected, or shaped differently from the model config.
class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr char kCheckpointMagic[] = "TDCK1\n";
inline constexpr int kCheckpointVersion = 1;

struct TrainingMetadata {
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  double train_rpn = 0;
  double train_align = 0;
  double val_rpn = 0;
  double val_align = 0;

  bool operator==(const TrainingMetadata&) const = default;
};

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  int version = kCheckpointVersion;
  ModelConfig model;
  std::optional<TrainConfig> training;
  std::vector<std::string> vocabulary;
  TrainingMetadata metadata;
  std::vector<CheckpointTensor> tensors;
};

Checkpoint make_checkpoint(const Detector<float>& model, const TrainingMetadata& metadata,
                           const std::optional<TrainConfig>& training = std::nullopt);

// Layout: magic, u64 LE header length, JSON header, LE float32 blob.
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

// Writes to a sibling temp file then renames, so readers never see a partial file.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Builds a model from the checkpoint's own config (or `expected`, when given)
// and copies the tensors in, checking names and shapes.
Detector<float> restore_detector(const Checkpoint& ckpt, const ModelConfig* expected = nullptr);
Detector<float> load_detector(const std::filesystem::path& path,
                              const ModelConfig* expected = nullptr);

// Copy of `model` whose alignment head outputs exactly 1 for every input.
Detector<float> make_align_one_stub(const Detector<float>& model);

}  // namespace tdet
