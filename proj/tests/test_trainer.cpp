#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "support/temp_dir.hpp"
#include "support/tiny.hpp"
#include "tdet/checkpoint.hpp"
#include "tdet/image.hpp"
#include "tdet/trainer.hpp"

using namespace tdet;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

TrainConfig tiny_train(std::size_t epochs = 2, std::size_t batch = 4) {
  TrainConfig c = TrainConfig::desk();
  c.epochs = epochs;
  c.batch_size = batch;
  c.seed = 17;
  return c;
}

Detector<float> tiny_detector(std::uint64_t seed) {
  return Detector<float>::init(testing::tiny_model(), seed);
}

std::vector<float> flat_parameters(const Detector<float>& m) {
  std::vector<float> out;
  for (const auto& p : m.parameters()) {
    const auto v = p.tensor.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("step_lr follows the step schedule exactly") {
    CHECK(step_lr(0, 1e-2, 3, 0.9) == 1e-2);
    CHECK(step_lr(2, 1e-2, 3, 0.9) == 1e-2);
    CHECK(step_lr(3, 1e-2, 3, 0.9) == 9e-3);
    CHECK(step_lr(5, 1e-2, 3, 0.9) == 9e-3);
    CHECK(step_lr(9, 1e-2, 3, 0.9) == 7.29e-3);
    CHECK(step_lr(7, 1.0, 1, 1.0) == 1.0);
  }

  TEST_CASE("sgd_update degenerate cases and momentum recurrence") {
    std::vector<double> w{1.0, -2.0}, v{0, 0};
    const std::vector<double> g{0.5, 0.25};
    sgd_update<double>(w, g, v, 0.1, 0.0, 0.0);
    CHECK(w[0] == doctest::Approx(1.0 - 0.05).epsilon(1e-15));
    CHECK(w[1] == doctest::Approx(-2.0 - 0.025).epsilon(1e-15));

    std::vector<double> w0{3.0}, v0{0};
    const std::vector<double> zero{0.0};
    sgd_update<double>(w0, zero, v0, 0.1, 0.9, 0.0);
    CHECK(w0[0] == 3.0);

    // Two steps with a constant gradient move by lr*g*(1 + 1.9).
    std::vector<double> w2{0.0}, v2{0.0};
    const std::vector<double> g2{2.0};
    sgd_update<double>(w2, g2, v2, 0.01, 0.9, 0.0);
    sgd_update<double>(w2, g2, v2, 0.01, 0.9, 0.0);
    CHECK(w2[0] == doctest::Approx(-0.01 * 2.0 * 2.9).epsilon(1e-14));

    // Weight decay adds wd * w to the gradient.
    std::vector<double> w3{2.0}, v3{0.0};
    sgd_update<double>(w3, zero, v3, 0.5, 0.0, 0.1);
    CHECK(w3[0] == doctest::Approx(2.0 - 0.5 * 0.2).epsilon(1e-15));

    std::vector<double> bad{1, 2};
    CHECK_THROWS_AS(sgd_update<double>(bad, zero, v3, 0.1, 0.9, 0.0), ShapeError);
  }

  TEST_CASE("optimizer skips decay for bias-like parameters and clears gradients") {
    BasicTensor<float> w({2}, std::vector<float>{1.0f, 1.0f}, true);
    BasicTensor<float> b({2}, std::vector<float>{1.0f, 1.0f}, true);
    SgdOptimizer opt({{"w", w, true}, {"b", b, false}}, 0.0, 0.5);
    opt.step(0.1, 1.0);
    CHECK(w.values()[0] == doctest::Approx(0.95));
    CHECK(b.values()[0] == 1.0f);

    sum(mul(w, w)).backward();
    CHECK(w.grad()[0] != 0.0f);
    opt.step(0.0, 1.0);
    CHECK(w.grad()[0] == 0.0f);
  }

  TEST_CASE("a batch of identical examples gives the single-example update") {
    const auto ex = testing::tiny_examples(1, 40).front();
    for (std::size_t batch : {2u, 5u}) {
      auto one = tiny_detector(3);
      auto many = tiny_detector(3);
      SgdOptimizer opt_one(one.parameters(), 0.9, 1e-5);
      SgdOptimizer opt_many(many.parameters(), 0.9, 1e-5);
      for (int step = 0; step < 3; ++step) {
        train_step(one, ex, 77);
        opt_one.step(0.01, 1.0);
        for (std::size_t i = 0; i < batch; ++i) train_step(many, ex, 77);
        opt_many.step(0.01, 1.0 / static_cast<double>(batch));
      }
      const auto a = flat_parameters(one), b = flat_parameters(many);
      REQUIRE(a.size() == b.size());
      double worst = 0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(double(a[i]) - double(b[i])) / (1e-3 + std::abs(double(a[i]))));
      }
      CHECK(worst < 1e-4);
    }
  }

  TEST_CASE("alignment loss reaches the first backbone block through ROI pooling") {
    auto model = tiny_detector(5);
    std::mt19937_64 rng(9);
    std::normal_distribution<double> d(0, 0.5);
    for (auto& w : model.alignment.fc2().weight.values()) w = static_cast<float>(d(rng));
    const auto ex = testing::tiny_examples(1, 8).front();
    const auto fm = model.backbone.forward(image_to_tensor<float>(ex.image));
    std::vector<BoxXYXY> boxes;
    std::vector<float> labels;
    for (std::size_t i = 0; i < ex.objects.size(); ++i) {
      boxes.push_back(ex.objects[i].box);
      labels.push_back(ex.aligned[i] ? 1.0f : 0.0f);
    }
    const auto text = model.text_encoder.encode(tokenize(ex.query.text, model.vocab));
    const auto scores = model.alignment.forward(model.proposal_encoder.encode_boxes(fm, boxes), text);
    align_loss(scores, std::span<const float>(labels)).backward();
    const auto params = model.parameters();
    const auto it = std::find_if(params.begin(), params.end(),
                                 [](const auto& p) { return p.name == "backbone.block0.weight"; });
    REQUIRE(it != params.end());
    double mag = 0;
    for (float g : it->tensor.grad()) mag += std::abs(g);
    CHECK(mag > 0);
  }

  TEST_CASE("a joint step yields non-zero gradients on block 0") {
    auto model = tiny_detector(6);
    const auto ex = testing::tiny_examples(1, 9).front();
    const auto r = train_step(model, ex, 3);
    CHECK_FALSE(r.skipped);
    CHECK(std::isfinite(r.rpn_loss));
    double mag = 0;
    for (const auto& p : model.parameters()) {
      if (p.name == "backbone.block0.weight") {
        for (float g : p.tensor.grad()) mag += std::abs(g);
      }
    }
    CHECK(mag > 0);
  }

  TEST_CASE("fresh model: alignment loss is ln 2 and labels follow the matched object") {
    auto model = tiny_detector(2);
    for (const auto& ex : testing::tiny_examples(5, 60)) {
      const auto r = train_step(model, ex, 1, false);
      if (r.align_skipped) continue;
      CHECK(std::abs(r.align_loss - std::log(2.0)) <= 1e-6);
      CHECK(r.align_labels.size() == r.positives);
      for (float s : r.align_scores) CHECK(s == 0.5f);
    }
    // Every object matches "shapes", so every label is 1.
    auto ex = testing::tiny_examples(1, 61).front();
    ex.query = *parse_query("all shapes");
    ex.aligned = label_alignment(ex.objects, ex.query);
    const auto r = train_step(model, ex, 4, false);
    for (float y : r.align_labels) CHECK(y == 1.0f);
  }

  TEST_CASE("training is deterministic and logs one record per epoch") {
    testing::TempDir dir("tdet-train");
    const auto train_set = testing::tiny_examples(12, 100);
    const auto val_set = testing::tiny_examples(4, 200);
    const auto model_config = testing::tiny_model();
    auto run = [&](const std::string& tag) {
      TrainOptions o;
      o.checkpoint_path = dir / (tag + ".ckpt");
      o.loss_log_path = dir / (tag + ".csv");
      o.model_config = &model_config;
      return train(train_set, val_set, tiny_train(), o);
    };
    const auto a = run("a");
    const auto b = run("b");
    CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
    CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
    REQUIRE(a.losses.records.size() == 2);
    CHECK(a.losses.records == b.losses.records);
    CHECK(a.optimizer_steps == 6);
    CHECK(a.metadata.epoch == 2);
    CHECK(a.metadata.seed == 17);
    for (const auto& r : a.losses.records) {
      CHECK(std::isfinite(r.train_rpn));
      CHECK(std::isfinite(r.val_align));
    }

    const auto csv = slurp(dir / "a.csv");
    CHECK(csv.rfind("epoch,train_rpn,train_align,val_rpn,val_align\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

    // The checkpoint written after the last epoch holds the returned model.
    const auto loaded = load_detector(dir / "a.ckpt");
    CHECK(flat_parameters(loaded) == flat_parameters(a.model));
    const auto ckpt = read_checkpoint(dir / "a.ckpt");
    REQUIRE(ckpt.training.has_value());
    CHECK(*ckpt.training == tiny_train());

    // A different seed gives different weights.
    TrainConfig other = tiny_train();
    other.seed = 18;
    TrainOptions o;
    o.model_config = &model_config;
    CHECK(flat_parameters(train(train_set, val_set, other, o).model) != flat_parameters(a.model));
  }

  TEST_CASE("train rejects empty splits, bad configs and mis-sized images") {
    const auto model_config = testing::tiny_model();
    TrainOptions o;
    o.model_config = &model_config;
    const auto some = testing::tiny_examples(2, 5);
    CHECK_THROWS_AS(train({}, some, tiny_train(), o), std::invalid_argument);
    CHECK_THROWS_AS(train(some, {}, tiny_train(), o), std::invalid_argument);
    TrainConfig bad = tiny_train();
    bad.batch_size = 0;
    CHECK_THROWS_AS(train(some, some, bad, o), std::invalid_argument);
    bad = tiny_train();
    bad.lr_gamma = 1.5;
    CHECK_THROWS_AS(train(some, some, bad, o), std::invalid_argument);
    const std::vector<SceneExample> desk{generate_example(1, GenerationConfig::desk())};
    CHECK_THROWS_AS(train(desk, some, tiny_train(), o), std::invalid_argument);
  }

  TEST_CASE("a diverging run stops with a TrainingError") {
    const auto model_config = testing::tiny_model();
    TrainOptions o;
    o.model_config = &model_config;
    TrainConfig c = tiny_train(3, 1);
    c.lr = 1e12;
    const auto data = testing::tiny_examples(6, 300);
    CHECK_THROWS_AS(train(data, data, c, o), TrainingError);
  }

  TEST_CASE("presets carry the documented regime") {
    const auto desk = TrainConfig::desk();
    CHECK(desk.epochs == 10);
    CHECK(desk.batch_size == 16);
    CHECK(desk.lr == 1e-2);
    CHECK(desk.momentum == 0.9);
    CHECK(desk.weight_decay == 1e-5);
    CHECK(desk.lr_step == 3);
    CHECK(desk.lr_gamma == 0.9);
    CHECK(TrainConfig::paper().batch_size == 32);
    CHECK_THROWS_AS(TrainConfig::for_preset("huge"), std::invalid_argument);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("save and load reproduce every tensor bit-exactly") {
    testing::TempDir dir("tdet-ckpt");
    const auto model = tiny_detector(21);
    const TrainingMetadata meta{3, 99, 0.5, 0.25, 0.125, 0.0625};
    save_checkpoint(dir / "m.ckpt", make_checkpoint(model, meta, tiny_train()));
    CHECK_FALSE(std::filesystem::exists(dir / "m.ckpt.tmp"));
    const auto ckpt = read_checkpoint(dir / "m.ckpt");
    CHECK(ckpt.metadata == meta);
    CHECK(ckpt.model == model.config);
    CHECK(ckpt.vocabulary == model.vocab.tokens());
    const auto back = restore_detector(ckpt);
    const auto a = flat_parameters(model), b = flat_parameters(back);
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
    // Re-serializing yields the same bytes.
    CHECK(serialize_checkpoint(make_checkpoint(back, meta, tiny_train())) ==
          serialize_checkpoint(make_checkpoint(model, meta, tiny_train())));
  }

  TEST_CASE("damaged files raise format errors") {
    const auto bytes = serialize_checkpoint(make_checkpoint(tiny_detector(1), {}));
    CHECK_THROWS_AS(parse_checkpoint(std::span<const std::uint8_t>(bytes.data(), 3)),
                    CheckpointFormatError);
    CHECK_THROWS_AS(parse_checkpoint(std::span<const std::uint8_t>(bytes.data(), 10)),
                    CheckpointFormatError);
    CHECK_THROWS_AS(parse_checkpoint(std::span<const std::uint8_t>(bytes.data(), bytes.size() - 4)),
                    CheckpointFormatError);
    auto magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_AS(parse_checkpoint(magic), CheckpointFormatError);
    auto header = bytes;
    header[14] = '#';
    CHECK_THROWS_AS(parse_checkpoint(header), CheckpointFormatError);
    CHECK_THROWS_AS(read_checkpoint("/nonexistent/x.ckpt"), CheckpointFormatError);
    CHECK_THROWS_AS(parse_checkpoint(std::vector<std::uint8_t>{}), CheckpointError);
  }

  TEST_CASE("unknown version is rejected with a version error") {
    auto bytes = serialize_checkpoint(make_checkpoint(tiny_detector(1), {}));
    const std::string key = "\"version\":1";
    const auto it = std::search(bytes.begin(), bytes.end(), key.begin(), key.end());
    REQUIRE(it != bytes.end());
    *(it + static_cast<std::ptrdiff_t>(key.size()) - 1) = '7';
    CHECK_THROWS_AS(parse_checkpoint(bytes), CheckpointVersionError);
  }

  TEST_CASE("embedding width mismatch is rejected with a shape error") {
    auto big = testing::tiny_model();
    big.proposal.embed_dim = 64;
    auto small = big;
    small.proposal.embed_dim = 32;
    const auto ckpt = make_checkpoint(Detector<float>::init(big, 1), {});
    CHECK_THROWS_AS(restore_detector(ckpt, &small), CheckpointShapeError);
    CHECK_NOTHROW(restore_detector(ckpt, &big));

    auto missing = ckpt;
    missing.tensors.pop_back();
    CHECK_THROWS_AS(restore_detector(missing), CheckpointShapeError);
    auto renamed = ckpt;
    renamed.tensors.front().name = "backbone.block9.weight";
    CHECK_THROWS_AS(restore_detector(renamed), CheckpointShapeError);
    auto dup = ckpt;
    dup.tensors.back().name = dup.tensors.front().name;
    CHECK_THROWS_AS(restore_detector(dup), CheckpointFormatError);
  }

  TEST_CASE("stub head outputs exactly one") {
    const auto stub = make_align_one_stub(tiny_detector(4));
    const auto ex = testing::tiny_examples(1, 5).front();
    NoGradGuard g;
    const auto fm = stub.backbone.forward(image_to_tensor<float>(ex.image));
    std::vector<BoxXYXY> boxes;
    for (const auto& o : ex.objects) boxes.push_back(o.box);
    for (const char* q : {"shapes", "red circles", "blue triangle"}) {
      const auto s = stub.alignment.forward(stub.proposal_encoder.encode_boxes(fm, boxes),
                                            stub.text_encoder.encode(tokenize(q, stub.vocab)));
      for (float v : s.values()) CHECK(v == 1.0f);
    }
  }
}
