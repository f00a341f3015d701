#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tdet/checkpoint.hpp"
#include "tdet/detector.hpp"
#include "tdet/shapegen.hpp"

namespace tdet {

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

// Decodes standard base64 (optionally behind a data: URL prefix). nullopt on
// malformed input.
std::optional<std::vector<std::uint8_t>> decode_base64(std::string_view text);
std::string encode_base64(std::span<const std::uint8_t> bytes);

// Request handling over a frozen model. Every handler is const and safe to
// call from several threads at once.
class InferenceService {
 public:
  // `dataset_root` may be empty; the /examples endpoints then answer 404.
  InferenceService(Detector<float> model, const std::filesystem::path& dataset_root);

  HttpResponse health() const;
  HttpResponse infer(std::string_view body) const;
  HttpResponse examples() const;
  HttpResponse example_image(std::string_view id) const;

  const Detector<float>& model() const { return model_; }

 private:
  Detector<float> model_;
  std::optional<DatasetManifest> manifest_;
  std::vector<const ManifestRecord*> test_records_;
};

// Binds the handlers to HTTP routes. When static_dir is non-empty its files
// are served under /ui/.
class HttpServer {
 public:
  HttpServer(std::shared_ptr<const InferenceService> service, std::filesystem::path static_dir = {});
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Port 0 picks a free port. Returns the bound port; throws on failure.
  int bind(const std::string& host, int port);
  // Blocks until stop(); in-flight requests finish first.
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace tdet
