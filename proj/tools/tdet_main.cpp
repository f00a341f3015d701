// tdet: dataset generation, training, evaluation, inference and serving.

#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "tdet/checkpoint.hpp"
#include "tdet/evaluator.hpp"
#include "tdet/inference.hpp"
#include "tdet/service.hpp"
#include "tdet/shapegen.hpp"
#include "tdet/trainer.hpp"

namespace {

using namespace tdet;

SplitCounts parse_counts(const std::string& text) {
  std::vector<std::size_t> parts;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(item, &used);
    if (used != item.size()) throw std::invalid_argument("bad --counts value '" + text + "'");
    parts.push_back(static_cast<std::size_t>(v));
  }
  if (parts.size() != 3) throw std::invalid_argument("--counts expects TRAIN,VAL,TEST");
  return {parts[0], parts[1], parts[2]};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::filesystem::path with_suffix(const std::filesystem::path& path, const std::string& suffix) {
  auto out = path;
  out.replace_extension();
  out += suffix;
  return out;
}

int cmd_gen_data(const std::string& preset, const std::filesystem::path& out, std::uint64_t seed,
                 const std::string& counts_text) {
  const auto config = preset == "paper" ? GenerationConfig::paper() : GenerationConfig::desk();
  const SplitCounts counts = counts_text.empty()
                                 ? (preset == "paper" ? SplitCounts{4000, 500, 500} : SplitCounts{1500, 250, 250})
                                 : parse_counts(counts_text);
  const auto manifest = generate_dataset(out, seed, counts, config);
  std::cout << "wrote " << manifest.records.size() << " examples to " << out.string() << "\n";
  return 0;
}

int cmd_train(const std::filesystem::path& data, const std::string& preset,
              const std::filesystem::path& out, std::uint64_t seed, std::size_t epochs,
              std::filesystem::path loss_log) {
  TrainConfig config = TrainConfig::for_preset(preset);
  config.seed = seed;
  if (epochs) config.epochs = epochs;
  if (loss_log.empty()) loss_log = with_suffix(out, ".losses.csv");
  TrainOptions options;
  options.checkpoint_path = out;
  options.loss_log_path = loss_log;
  options.log = [](const std::string& msg) { std::cerr << msg << std::endl; };
  const auto result = train(load_manifest(data), config, options);
  std::cout << "checkpoint " << out.string() << ", loss log " << loss_log.string() << ", "
            << result.optimizer_steps << " optimizer steps\n";
  return 0;
}

int cmd_eval(const std::filesystem::path& data, const std::filesystem::path& ckpt,
             const std::filesystem::path& report_path, const InferenceConfig& config) {
  const auto report = evaluate_testset(ckpt, data, config);
  write_text(report_path, report_json(report) + "\n");
  write_text(with_suffix(report_path, ".all_proposals_hist.csv"), histogram_csv(report.all_proposals.histogram));
  write_text(with_suffix(report_path, ".aligned_hist.csv"), histogram_csv(report.aligned.histogram));
  auto line = [](const char* name, const DetectionMetrics& m) {
    std::printf("%-18s precision %.4f  recall %.4f  mean IoU %.4f\n", name, m.mean_precision,
                m.mean_recall, m.mean_iou);
  };
  line("all proposals", report.all_proposals.metrics);
  line("aligned proposals", report.aligned.metrics);
  if (report.alignment_accuracy) {
    std::printf("alignment accuracy %.4f over %zu proposals\n", *report.alignment_accuracy,
                report.alignment_population);
  } else {
    std::printf("alignment accuracy n/a (no proposal matched a ground truth)\n");
  }
  return 0;
}

int cmd_infer(const std::filesystem::path& ckpt, const std::filesystem::path& image_path,
              const std::string& query, const InferenceConfig& config, const std::filesystem::path& draw) {
  if (query.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw std::invalid_argument("--query must not be empty");
  }
  const auto model = load_detector(ckpt);
  const Image image = read_png(image_path);
  const auto start = std::chrono::steady_clock::now();
  const auto detections = detect(model, image, query, config);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  std::cout << inference_response_json(detections, model.config.image_size, ms) << "\n";
  if (!draw.empty()) write_png(draw, render_detections(image, detections));
  return 0;
}

int cmd_make_stub(const std::filesystem::path& ckpt, const std::filesystem::path& out) {
  const auto source = read_checkpoint(ckpt);
  const auto stub = make_align_one_stub(restore_detector(source));
  save_checkpoint(out, make_checkpoint(stub, source.metadata, source.training));
  return 0;
}

int cmd_serve(const std::filesystem::path& ckpt, const std::filesystem::path& data,
              const std::string& host, int port, const std::filesystem::path& static_dir) {
  // Block termination signals before the server spawns worker threads so
  // only the waiter below receives them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  auto service = std::make_shared<const InferenceService>(load_detector(ckpt), data);
  HttpServer server(service, static_dir);
  const int bound = server.bind(host, port);
  std::cerr << "serving on http://" << host << ":" << bound << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  server.run();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-conditioned object detection: data, training, evaluation, inference"};
  app.require_subcommand(1);

  std::string preset = "desk", counts, query, host = "127.0.0.1";
  std::filesystem::path out, data, ckpt, report, image, draw, loss_log, static_dir;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  int port = 8080;
  InferenceConfig infer_config;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic shapes dataset");
  gen->add_option("--preset", preset, "paper or desk")->check(CLI::IsMember({"paper", "desk"}));
  gen->add_option("--out", out, "Dataset root")->required();
  gen->add_option("--seed", seed, "Root seed");
  gen->add_option("--counts", counts, "TRAIN,VAL,TEST (default from preset)");

  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  tr->add_option("--data", data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--preset", preset, "paper or desk")->check(CLI::IsMember({"paper", "desk"}));
  tr->add_option("--out", out, "Checkpoint path")->required();
  tr->add_option("--seed", seed, "Training seed");
  tr->add_option("--epochs", epochs, "Override the preset epoch count");
  tr->add_option("--loss-log", loss_log, "Loss CSV path (default <out>.losses.csv)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  ev->add_option("--data", data, "Dataset root")->required();
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ev->add_option("--report", report, "Report JSON path")->required();
  ev->add_option("--threshold", infer_config.score_threshold, "Score threshold")->check(CLI::Range(0.0, 1.0));
  ev->add_option("--top-k", infer_config.top_k, "Detections kept per image")->check(CLI::PositiveNumber);

  auto* inf = app.add_subcommand("infer", "Detect the objects a query refers to");
  inf->add_option("--ckpt", ckpt, "Checkpoint")->required();
  inf->add_option("--image", image, "PNG image")->required();
  inf->add_option("--query", query, "Text query")->required();
  inf->add_option("--threshold", infer_config.score_threshold, "Score threshold")->check(CLI::Range(0.0, 1.0));
  inf->add_option("--top-k", infer_config.top_k, "Maximum detections")->check(CLI::PositiveNumber);
  inf->add_option("--draw", draw, "Write the image with boxes drawn");

  auto* sv = app.add_subcommand("serve", "Serve the HTTP inference API");
  sv->add_option("--ckpt", ckpt, "Checkpoint")->required();
  sv->add_option("--data", data, "Dataset root for /examples");
  sv->add_option("--port", port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
  sv->add_option("--host", host, "Bind address");
  sv->add_option("--static", static_dir, "Directory served under /ui/");

  auto* stub = app.add_subcommand("make-stub", "Copy a checkpoint with the alignment head fixed at 1");
  stub->add_option("--ckpt", ckpt, "Source checkpoint")->required();
  stub->add_option("--out", out, "Output checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) return cmd_gen_data(preset, out, seed, counts);
    if (tr->parsed()) return cmd_train(data, preset, out, seed, epochs, loss_log);
    if (ev->parsed()) return cmd_eval(data, ckpt, report, infer_config);
    if (inf->parsed()) return cmd_infer(ckpt, image, query, infer_config, draw);
    if (sv->parsed()) return cmd_serve(ckpt, data, host, port, static_dir);
    if (stub->parsed()) return cmd_make_stub(ckpt, out);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "error: " << msg << std::endl;
    return 1;
  }
  return 1;
}
