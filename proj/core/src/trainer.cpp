#include "tdet/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "tdet/rng.hpp"

namespace tdet {

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.preset = "paper";
  c.batch_size = 32;
  return c;
}

TrainConfig TrainConfig::for_preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw std::invalid_argument("unknown preset '" + name + "' (expected desk or paper)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (epochs == 0 || batch_size == 0 || lr_step == 0) fail("epochs, batch_size and lr_step must be positive");
  if (!(lr > 0)) fail("lr must be positive");
  if (!(momentum >= 0 && momentum < 1)) fail("momentum must be in [0,1)");
  if (!(weight_decay >= 0)) fail("weight_decay must be non-negative");
  if (!(lr_gamma > 0 && lr_gamma <= 1)) fail("lr_gamma must be in (0,1]");
}

double step_lr(std::size_t epoch, double base_lr, std::size_t step, double gamma) {
  if (step == 0) throw std::invalid_argument("step_lr: step must be positive");
  const long double k = static_cast<long double>(epoch / step);
  const long double exact = static_cast<long double>(base_lr) * std::pow(static_cast<long double>(gamma), k);
  // Rates are configured as short decimals (1e-2, 0.9). Rounding the product
  // to 15 significant digits recovers that decimal, so 1e-2 * 0.9 is exactly
  // the double 9e-3 rather than the binary product's neighbour.
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.15Lg", exact);
  return std::strtod(buf, nullptr);
}

SgdOptimizer::SgdOptimizer(ParameterList<float> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.tensor.numel(), 0.0f);
}

void SgdOptimizer::step(double lr, double grad_scale) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    const auto w = p.tensor.values();
    scratch_.assign(w.size(), 0.0f);
    if (p.tensor.has_grad()) {
      const auto g = p.tensor.grad_mut();
      const float s = static_cast<float>(grad_scale);
      for (std::size_t j = 0; j < g.size(); ++j) scratch_[j] = g[j] * s;
    }
    sgd_update<float>(w, scratch_, velocity_[i], lr, momentum_, p.decay ? weight_decay_ : 0.0);
    p.tensor.zero_grad();
  }
}

StepResult train_step(const Detector<float>& model, const SceneExample& example,
                      std::uint64_t sample_seed, bool backward) {
  if (example.objects.empty()) throw std::invalid_argument("train_step: example has no objects");
  StepResult out;
  const auto& cfg = model.config;
  const auto fm = model.backbone.forward(image_to_tensor<float>(example.image));
  const auto pred = model.rpn.forward(fm, model.anchors.cells_per_side);

  std::vector<BoxXYXY> gt;
  gt.reserve(example.objects.size());
  for (const auto& o : example.objects) gt.push_back(o.box);
  const auto labels = assign_anchor_labels(model.anchors, gt, cfg.rpn.loss);
  const auto selected = sample_minibatch(labels, sample_seed);
  if (selected.empty()) {
    out.skipped = out.align_skipped = true;
    return out;
  }
  out.sampled = selected.size();
  const auto rpn = rpn_loss(pred, std::span<const AnchorLabel>(labels), selected, cfg.rpn.loss);
  out.rpn_loss = rpn.total.item();
  out.rpn_classification = rpn.classification;
  out.rpn_regression = rpn.regression;

  std::vector<BoxXYXY> boxes;
  for (std::size_t i : selected) {
    if (labels[i].kind != AnchorLabelKind::positive) continue;
    boxes.push_back(to_xyxy(model.anchors.anchors[i]));
    out.align_labels.push_back(example.aligned.at(*labels[i].matched_gt) ? 1.0f : 0.0f);
  }
  out.positives = boxes.size();

  BasicTensor<float> total = rpn.total;
  if (boxes.empty()) {
    out.align_skipped = true;
  } else {
    const auto text = model.text_encoder.encode(
        tokenize(example.query.text, model.vocab, cfg.text.max_len));
    const auto scores = model.alignment.forward(model.proposal_encoder.encode_boxes(fm, boxes), text);
    const auto al = align_loss(scores, std::span<const float>(out.align_labels));
    out.align_loss = al.item();
    out.align_scores.assign(scores.values().begin(), scores.values().end());
    total = add(total, al);
  }
  if (backward) total.backward();
  return out;
}

std::string LossLog::csv() const {
  std::ostringstream out;
  out << "epoch,train_rpn,train_align,val_rpn,val_align\n";
  out << std::setprecision(17);
  for (const auto& r : records) {
    out << r.epoch << ',' << r.train_rpn << ',' << r.train_align << ',' << r.val_rpn << ','
        << r.val_align << '\n';
  }
  return out.str();
}

void LossLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write loss log " + path.string());
  out << csv();
}

std::vector<SceneExample> load_split(const DatasetManifest& manifest, std::string_view split) {
  std::vector<SceneExample> out;
  for (const auto* record : manifest.split(split)) out.push_back(load_example(manifest, *record));
  return out;
}

namespace {

constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kTrainSampleStream = 2;
constexpr std::uint64_t kValSampleStream = 3;

struct Means {
  double rpn_sum = 0, align_sum = 0;
  std::size_t rpn_n = 0, align_n = 0;
  std::size_t align_skipped = 0;

  void add(const StepResult& r) {
    if (r.skipped) return;
    rpn_sum += r.rpn_loss;
    ++rpn_n;
    if (r.align_skipped) {
      ++align_skipped;
    } else {
      align_sum += r.align_loss;
      ++align_n;
    }
  }
  double rpn() const { return rpn_n ? rpn_sum / static_cast<double>(rpn_n) : 0.0; }
  double align() const { return align_n ? align_sum / static_cast<double>(align_n) : 0.0; }
};

std::string format_losses(double a, double b) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << a << " / " << b;
  return s.str();
}

}  // namespace

TrainResult train(const std::vector<SceneExample>& train_set, const std::vector<SceneExample>& val_set,
                  const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty train split");
  if (val_set.empty()) throw std::invalid_argument("train: empty val split");
  auto log = [&](const std::string& msg) {
    if (options.log) options.log(msg);
  };

  const ModelConfig model_config =
      options.model_config ? *options.model_config : ModelConfig::for_preset(config.preset);
  TrainResult result{Detector<float>::init(model_config, config.seed), {}, {}, 0, 0};
  auto& model = result.model;
  for (const auto& ex : train_set) {
    if (ex.image.width != model_config.image_size || ex.image.height != model_config.image_size) {
      throw std::invalid_argument("train: example image is " + std::to_string(ex.image.width) + "x" +
                                  std::to_string(ex.image.height) + ", model expects " +
                                  std::to_string(model_config.image_size));
    }
  }
  SgdOptimizer optimizer(model.parameters(), config.momentum, config.weight_decay);

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = step_lr(epoch, config.lr, config.lr_step, config.lr_gamma);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 shuffle_rng(mix_seed(mix_seed(config.seed, kShuffleStream), epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);
    }
    const std::uint64_t sample_base = mix_seed(mix_seed(config.seed, kTrainSampleStream), epoch);

    Means train_means;
    const std::size_t batches = (order.size() + config.batch_size - 1) / config.batch_size;
    for (std::size_t b = 0; b < batches; ++b) {
      std::size_t contributing = 0;
      const std::size_t end = std::min(order.size(), (b + 1) * config.batch_size);
      for (std::size_t pos = b * config.batch_size; pos < end; ++pos) {
        const std::size_t idx = order[pos];
        const auto r = train_step(model, train_set[idx], mix_seed(sample_base, idx));
        if (r.skipped) {
          log("epoch " + std::to_string(epoch + 1) + ": example " + std::to_string(idx) +
              " has no trainable anchors; skipped");
          continue;
        }
        if (!std::isfinite(r.rpn_loss) || !std::isfinite(r.align_loss)) {
          throw TrainingError("train: non-finite loss at epoch " + std::to_string(epoch + 1) +
                              ", batch " + std::to_string(b + 1));
        }
        train_means.add(r);
        ++contributing;
      }
      if (contributing == 0) continue;
      optimizer.step(lr, 1.0 / static_cast<double>(contributing));
      ++result.optimizer_steps;
    }
    result.align_skipped += train_means.align_skipped;

    Means val_means;
    {
      NoGradGuard no_grad;
      const std::uint64_t val_base = mix_seed(config.seed, kValSampleStream);
      for (std::size_t i = 0; i < val_set.size(); ++i) {
        val_means.add(train_step(model, val_set[i], mix_seed(val_base, i), false));
      }
    }

    const EpochRecord record{epoch + 1, train_means.rpn(), train_means.align(), val_means.rpn(),
                             val_means.align()};
    if (!std::isfinite(record.val_rpn) || !std::isfinite(record.val_align)) {
      throw TrainingError("train: non-finite validation loss at epoch " + std::to_string(epoch + 1));
    }
    result.losses.records.push_back(record);
    result.metadata = {record.epoch,   config.seed,    record.train_rpn,
                       record.train_align, record.val_rpn, record.val_align};
    log("epoch " + std::to_string(record.epoch) + "/" + std::to_string(config.epochs) +
        " lr " + std::to_string(lr) + " train rpn/align " +
        format_losses(record.train_rpn, record.train_align) + " val rpn/align " +
        format_losses(record.val_rpn, record.val_align) +
        (train_means.align_skipped ? " (" + std::to_string(train_means.align_skipped) +
                                         " examples without positive anchors)"
                                   : ""));
    if (!options.checkpoint_path.empty()) {
      save_checkpoint(options.checkpoint_path, make_checkpoint(model, result.metadata, config));
    }
    if (!options.loss_log_path.empty()) result.losses.write_csv(options.loss_log_path);
  }
  return result;
}

TrainResult train(const DatasetManifest& manifest, const TrainConfig& config,
                  const TrainOptions& options) {
  return train(load_split(manifest, "train"), load_split(manifest, "val"), config, options);
}

}  // namespace tdet
