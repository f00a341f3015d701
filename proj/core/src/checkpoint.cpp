#include "tdet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "config_json.hpp"

namespace tdet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::size_t kMagicSize = sizeof(kCheckpointMagic) - 1;

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

Checkpoint make_checkpoint(const Detector<float>& model, const TrainingMetadata& metadata,
                           const std::optional<TrainConfig>& training) {
  Checkpoint c;
  c.model = model.config;
  c.training = training;
  c.vocabulary = model.vocab.tokens();
  c.metadata = metadata;
  for (const auto& p : model.parameters()) {
    const auto v = p.tensor.values();
    c.tensors.push_back({p.name, p.tensor.shape(), std::vector<float>(v.begin(), v.end())});
  }
  return c;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  json directory = json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    if (shape_numel(t.shape) != t.values.size()) {
      throw CheckpointShapeError("checkpoint: tensor '" + t.name + "' has " +
                                 std::to_string(t.values.size()) + " values for shape " +
                                 shape_str(t.shape));
    }
    const std::uint64_t length = t.values.size() * sizeof(float);
    directory.push_back(
        {{"name", t.name}, {"dtype", "f32"}, {"shape", t.shape}, {"offset", offset}, {"length", length}});
    offset += length;
  }
  const auto& m = ckpt.metadata;
  json header = {
      {"version", ckpt.version},
      {"config", to_json(ckpt.model)},
      {"vocabulary", ckpt.vocabulary},
      {"metadata",
       {{"epoch", m.epoch},
        {"seed", m.seed},
        {"train_rpn", m.train_rpn},
        {"train_align", m.train_align},
        {"val_rpn", m.val_rpn},
        {"val_align", m.val_align}}},
      {"tensors", directory},
  };
  if (ckpt.training) header["training"] = to_json(*ckpt.training);
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + kMagicSize);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  const std::size_t blob_start = out.size();
  out.resize(blob_start + offset);
  std::uint8_t* dst = out.data() + blob_start;
  for (const auto& t : ckpt.tensors) {
    std::memcpy(dst, t.values.data(), t.values.size() * sizeof(float));
    dst += t.values.size() * sizeof(float);
  }
  return out;
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagicSize || std::memcmp(bytes.data(), kCheckpointMagic, kMagicSize) != 0) {
    throw CheckpointFormatError("checkpoint: bad magic (not a TDCK1 file)");
  }
  if (bytes.size() < kMagicSize + 8) throw CheckpointFormatError("checkpoint: truncated header length");
  const std::uint64_t header_len = get_u64(bytes.data() + kMagicSize);
  const std::size_t blob_start = kMagicSize + 8 + header_len;
  if (header_len > bytes.size() || blob_start > bytes.size()) {
    throw CheckpointFormatError("checkpoint: header length " + std::to_string(header_len) +
                                " exceeds file size " + std::to_string(bytes.size()));
  }
  json header;
  try {
    header = json::parse(bytes.begin() + kMagicSize + 8, bytes.begin() + blob_start);
  } catch (const json::exception& e) {
    throw CheckpointFormatError(std::string("checkpoint: corrupt header: ") + e.what());
  }

  Checkpoint c;
  try {
    c.version = header.at("version").get<int>();
  } catch (const json::exception&) {
    throw CheckpointFormatError("checkpoint: header has no version");
  }
  if (c.version != kCheckpointVersion) {
    throw CheckpointVersionError("checkpoint: unsupported version " + std::to_string(c.version) +
                                 " (this build reads version " +
                                 std::to_string(kCheckpointVersion) + ")");
  }

  const std::span<const std::uint8_t> blob = bytes.subspan(blob_start);
  try {
    c.model = model_config_from_json(header.at("config"));
    if (header.contains("training")) c.training = train_config_from_json(header.at("training"));
    c.vocabulary = header.at("vocabulary").get<std::vector<std::string>>();
    const json& m = header.at("metadata");
    c.metadata = {m.at("epoch").get<std::size_t>(),  m.at("seed").get<std::uint64_t>(),
                  m.at("train_rpn").get<double>(),   m.at("train_align").get<double>(),
                  m.at("val_rpn").get<double>(),     m.at("val_align").get<double>()};
    for (const json& entry : header.at("tensors")) {
      CheckpointTensor t;
      t.name = entry.at("name").get<std::string>();
      if (entry.at("dtype").get<std::string>() != "f32") {
        throw CheckpointFormatError("checkpoint: tensor '" + t.name + "' has unsupported dtype");
      }
      t.shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto length = entry.at("length").get<std::uint64_t>();
      if (length != shape_numel(t.shape) * sizeof(float)) {
        throw CheckpointFormatError("checkpoint: tensor '" + t.name +
                                    "' byte length does not match its shape");
      }
      if (offset > blob.size() || length > blob.size() - offset) {
        throw CheckpointFormatError("checkpoint: tensor '" + t.name + "' extends past end of file");
      }
      t.values.resize(length / sizeof(float));
      std::memcpy(t.values.data(), blob.data() + offset, length);
      c.tensors.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw CheckpointFormatError(std::string("checkpoint: corrupt header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointFormatError(std::string("checkpoint: corrupt header: ") + e.what());
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointFormatError("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

Detector<float> restore_detector(const Checkpoint& ckpt, const ModelConfig* expected) {
  const ModelConfig& config = expected ? *expected : ckpt.model;
  Detector<float> model;
  try {
    model = Detector<float>::init(config, 0);
  } catch (const std::invalid_argument& e) {
    throw CheckpointFormatError(std::string("checkpoint: invalid model config: ") + e.what());
  }
  if (ckpt.vocabulary != model.vocab.tokens()) {
    try {
      model.vocab = Vocabulary(ckpt.vocabulary);
    } catch (const std::invalid_argument& e) {
      throw CheckpointFormatError(std::string("checkpoint: ") + e.what());
    }
  }
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : ckpt.tensors) {
    if (!by_name.emplace(t.name, &t).second) {
      throw CheckpointFormatError("checkpoint: duplicate tensor '" + t.name + "'");
    }
  }
  auto params = model.parameters();
  if (params.size() != by_name.size()) {
    throw CheckpointShapeError("checkpoint: holds " + std::to_string(by_name.size()) +
                               " tensors, model expects " + std::to_string(params.size()));
  }
  for (auto& p : params) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointShapeError("checkpoint: missing tensor '" + p.name + "'");
    if (it->second->shape != p.tensor.shape()) {
      throw CheckpointShapeError("checkpoint: tensor '" + p.name + "' has shape " +
                                 shape_str(it->second->shape) + ", model expects " +
                                 shape_str(p.tensor.shape()));
    }
    std::copy(it->second->values.begin(), it->second->values.end(), p.tensor.values().begin());
  }
  return model;
}

Detector<float> load_detector(const std::filesystem::path& path, const ModelConfig* expected) {
  return restore_detector(read_checkpoint(path), expected);
}

Detector<float> make_align_one_stub(const Detector<float>& model) {
  Detector<float> stub = restore_detector(make_checkpoint(model, {}));
  auto& fc2 = stub.alignment.fc2();
  std::fill(fc2.weight.values().begin(), fc2.weight.values().end(), 0.0f);
  // sigmoid(40) rounds to exactly 1 in single precision.
  std::fill(fc2.bias.values().begin(), fc2.bias.values().end(), 40.0f);
  return stub;
}

}  // namespace tdet
