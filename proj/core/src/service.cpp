#include "tdet/service.hpp"

#include <chrono>
#include <charconv>

#include <boost/beast/core/detail/base64.hpp>
#include <httplib.h>
#include <json.hpp>

#include "tdet/inference.hpp"

namespace tdet {

namespace b64 = boost::beast::detail::base64;
using nlohmann::json;

std::optional<std::vector<std::uint8_t>> decode_base64(std::string_view text) {
  if (text.starts_with("data:")) {
    const auto comma = text.find(',');
    if (comma == std::string_view::npos || text.substr(0, comma).find(";base64") == std::string_view::npos) {
      return std::nullopt;
    }
    text.remove_prefix(comma + 1);
  }
  if (text.empty() || text.size() % 4 != 0) return std::nullopt;
  std::size_t padding = 0;
  while (padding < 2 && text[text.size() - 1 - padding] == '=') ++padding;
  std::vector<std::uint8_t> out(b64::decoded_size(text.size()));
  const auto [written, consumed] = b64::decode(out.data(), text.data(), text.size());
  if (consumed + padding != text.size()) return std::nullopt;
  out.resize(written);
  return out;
}

std::string encode_base64(std::span<const std::uint8_t> bytes) {
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

namespace {

HttpResponse error_response(int status, const std::string& message) {
  return {status, "application/json", json{{"error", message}}.dump()};
}

const std::vector<std::string>& allowed_request_fields() {
  static const std::vector<std::string> fields{"image", "image_id", "query", "score_threshold", "top_k"};
  return fields;
}

}  // namespace

InferenceService::InferenceService(Detector<float> model, const std::filesystem::path& dataset_root)
    : model_(std::move(model)) {
  if (!dataset_root.empty()) {
    manifest_ = load_manifest(dataset_root);
    test_records_ = manifest_->split("test");
  }
}

HttpResponse InferenceService::health() const {
  const auto& c = model_.config;
  json model = {{"preset", c.preset},
                {"image_size", c.image_size},
                {"feature_stride", c.backbone.feature_stride()},
                {"anchor_size", c.rpn.anchor_size},
                {"max_proposals", c.rpn.max_proposals},
                {"proposal_embed_dim", c.proposal.embed_dim},
                {"text_embed_dim", c.text.embed_dim},
                {"max_query_tokens", c.text.max_len}};
  return {200, "application/json", json{{"status", "ok"}, {"model", model}}.dump()};
}

HttpResponse InferenceService::infer(std::string_view body) const {
  const auto start = std::chrono::steady_clock::now();
  json req;
  try {
    req = json::parse(body);
  } catch (const json::exception&) {
    return error_response(400, "request body is not valid JSON");
  }
  if (!req.is_object()) return error_response(400, "request body must be a JSON object");
  const auto& allowed = allowed_request_fields();
  for (const auto& [key, value] : req.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      return error_response(400, "unknown field '" + key + "'");
    }
  }
  const bool has_image = req.contains("image"), has_id = req.contains("image_id");
  if (has_image == has_id) return error_response(400, "exactly one of 'image' and 'image_id' is required");
  if (!req.contains("query") || !req["query"].is_string()) {
    return error_response(400, "'query' must be a string");
  }
  const std::string query = req["query"].get<std::string>();
  if (query.find_first_not_of(" \t\r\n") == std::string::npos) {
    return error_response(400, "'query' must not be empty");
  }

  InferenceConfig config;
  if (req.contains("score_threshold")) {
    const auto& t = req["score_threshold"];
    if (!t.is_number()) return error_response(400, "'score_threshold' must be a number");
    config.score_threshold = t.get<double>();
    if (!(config.score_threshold >= 0 && config.score_threshold <= 1)) {
      return error_response(400, "'score_threshold' must be in [0,1]");
    }
  }
  if (req.contains("top_k")) {
    const auto& k = req["top_k"];
    if (!k.is_number_unsigned() || k.get<std::uint64_t>() == 0) {
      return error_response(400, "'top_k' must be a positive integer");
    }
    config.top_k = k.get<std::size_t>();
  }

  Image image;
  if (has_image) {
    if (!req["image"].is_string()) return error_response(400, "'image' must be a base64 string");
    const auto bytes = decode_base64(req["image"].get<std::string>());
    if (!bytes) return error_response(400, "'image' is not valid base64");
    try {
      image = decode_png(*bytes);
    } catch (const ImageError& e) {
      return error_response(400, std::string("cannot decode image: ") + e.what());
    }
  } else {
    if (!manifest_) return error_response(404, "no dataset loaded; 'image_id' is unavailable");
    const auto& id = req["image_id"];
    if (!id.is_number_unsigned()) return error_response(400, "'image_id' must be a non-negative integer");
    const auto index = id.get<std::uint64_t>();
    if (index >= test_records_.size()) return error_response(404, "unknown image_id " + std::to_string(index));
    try {
      image = read_png(manifest_->root / test_records_[index]->image);
    } catch (const ImageError& e) {
      return error_response(500, e.what());
    }
  }

  std::vector<AlignedDetection> detections;
  try {
    detections = detect(model_, image, query, config);
  } catch (const ImageSizeError& e) {
    return error_response(400, e.what());
  }
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return {200, "application/json", inference_response_json(detections, model_.config.image_size, ms)};
}

HttpResponse InferenceService::examples() const {
  if (!manifest_) return error_response(404, "no dataset loaded");
  auto list = json::array();
  for (std::size_t i = 0; i < test_records_.size(); ++i) {
    list.push_back({{"id", i},
                    {"query", test_records_[i]->query},
                    {"objects", test_records_[i]->objects.size()},
                    {"image", "/examples/" + std::to_string(i) + "/image"}});
  }
  return {200, "application/json", json{{"examples", list}}.dump()};
}

HttpResponse InferenceService::example_image(std::string_view id) const {
  if (!manifest_) return error_response(404, "no dataset loaded");
  std::size_t index = 0;
  const auto [ptr, ec] = std::from_chars(id.data(), id.data() + id.size(), index);
  if (ec != std::errc() || ptr != id.data() + id.size() || index >= test_records_.size()) {
    return error_response(404, "unknown example id '" + std::string(id) + "'");
  }
  try {
    const auto bytes = read_file_bytes(manifest_->root / test_records_[index]->image);
    return {200, "image/png", std::string(bytes.begin(), bytes.end())};
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

struct HttpServer::Impl {
  std::shared_ptr<const InferenceService> service;
  httplib::Server server;
};

namespace {

void reply(httplib::Response& res, const HttpResponse& r) {
  res.status = r.status;
  res.set_content(r.body, r.content_type);
}

}  // namespace

HttpServer::HttpServer(std::shared_ptr<const InferenceService> service, std::filesystem::path static_dir)
    : impl_(std::make_unique<Impl>()) {
  impl_->service = std::move(service);
  auto svc = impl_->service;
  auto& s = impl_->server;
  // SO_REUSEADDR only; httplib's default SO_REUSEPORT would let two servers share a port.
  s.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  s.Get("/health", [svc](const httplib::Request&, httplib::Response& res) { reply(res, svc->health()); });
  s.Post("/infer", [svc](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc->infer(req.body));
  });
  s.Get("/examples", [svc](const httplib::Request&, httplib::Response& res) { reply(res, svc->examples()); });
  s.Get(R"(/examples/([^/]+)/image)", [svc](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc->example_image(req.matches[1].str()));
  });
  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string message = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      message = e.what();
    } catch (...) {
    }
    reply(res, error_response(500, message));
  });
  if (!static_dir.empty() && !s.set_mount_point("/ui", static_dir.string())) {
    throw std::runtime_error("cannot serve static files from " + static_dir.string());
  }
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw std::runtime_error("cannot bind " + host + " to a free port");
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::run() {
  if (!impl_->server.listen_after_bind()) {
    if (impl_->server.is_running()) throw std::runtime_error("http server stopped unexpectedly");
  }
}

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace tdet
