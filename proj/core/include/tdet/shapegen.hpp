#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tdet/geometry.hpp"
#include "tdet/image.hpp"

namespace tdet {

enum class ShapeKind { circle, square, triangle };
enum class ShapeColor { red, green, blue };

std::string_view to_string(ShapeKind kind);
std::string_view to_string(ShapeColor color);
std::optional<ShapeKind> parse_shape_kind(std::string_view s);
std::optional<ShapeColor> parse_shape_color(std::string_view s);
Rgb color_rgb(ShapeColor color);

struct ShapeObject {
  ShapeKind kind = ShapeKind::circle;
  ShapeColor color = ShapeColor::red;
  BoxXYXY box;
  bool operator==(const ShapeObject&) const = default;
};

struct Query {
  std::string text;
  std::optional<ShapeColor> color_filter;
  std::optional<ShapeKind> shape_filter;
  bool operator==(const Query&) const = default;
};

struct SceneExample {
  Image image;
  std::vector<ShapeObject> objects;
  Query query;
  std::vector<bool> aligned;
  // Set when query resampling ran out of attempts and the query was taken
  // from an object in the scene.
  bool query_fallback = false;
};

struct GenerationConfig {
  std::size_t image_size = 128;
  double anchor_size = 16;
  double side_min_factor = 0.75;
  double side_max_factor = 1.5;
  std::size_t min_objects = 10;
  std::size_t max_objects = 20;
  double max_pair_iou = 0.3;
  std::size_t placement_attempts = 1000;
  std::size_t query_attempts = 20;

  static GenerationConfig desk();   // 128 px, anchor 16, sides 12..24
  static GenerationConfig paper();  // 512 px, anchor 64, sides 48..96
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Template grammar: [the|all|-] [red|green|blue|-] (circle|square|triangle|shape)[s]
// "shape(s)" carries no shape filter, an absent color carries no color filter.
std::string render_query(std::optional<ShapeColor> color, std::optional<ShapeKind> kind,
                         std::string_view article, bool plural);
// Inverse of render_query. nullopt for text outside the grammar.
std::optional<Query> parse_query(std::string_view text);

Query generate_query(std::uint64_t seed);
std::vector<bool> label_alignment(const std::vector<ShapeObject>& objects, const Query& query);
void rasterize(Image& image, const ShapeObject& object);

SceneExample generate_example(std::uint64_t seed, const GenerationConfig& config);

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
  std::size_t total() const { return train + val + test; }
};

struct ManifestRecord {
  std::string image;  // relative to the dataset root
  std::string split;
  std::vector<ShapeObject> objects;
  std::string query;
  std::vector<bool> aligned;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestRecord> records;

  std::vector<const ManifestRecord*> split(std::string_view name) const;
};

std::string manifest_line(const ManifestRecord& record);
ManifestRecord parse_manifest_line(std::string_view line);

// Writes <root>/images/<split>/<index>.png and <root>/manifest.jsonl. Example
// i (train first, then val, then test) uses seed root_seed + i.
DatasetManifest generate_dataset(const std::filesystem::path& root, std::uint64_t root_seed,
                                 const SplitCounts& counts, const GenerationConfig& config);
DatasetManifest load_manifest(const std::filesystem::path& root);

// Reads the record's image and re-derives the query filters from its text.
SceneExample load_example(const DatasetManifest& manifest, const ManifestRecord& record);

}  // namespace tdet
