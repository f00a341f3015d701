#include "tdet/shapegen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <random>
#include <sstream>

#include "tdet/rng.hpp"

namespace tdet {

using json = nlohmann::json;

namespace {

constexpr std::array<std::string_view, 3> kKindNames = {"circle", "square", "triangle"};
constexpr std::array<std::string_view, 3> kColorNames = {"red", "green", "blue"};
constexpr std::array<std::string_view, 3> kArticles = {"the", "all", ""};

}  // namespace

std::string_view to_string(ShapeKind kind) { return kKindNames[static_cast<std::size_t>(kind)]; }
std::string_view to_string(ShapeColor color) {
  return kColorNames[static_cast<std::size_t>(color)];
}

std::optional<ShapeKind> parse_shape_kind(std::string_view s) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (kKindNames[i] == s) return static_cast<ShapeKind>(i);
  }
  return std::nullopt;
}

std::optional<ShapeColor> parse_shape_color(std::string_view s) {
  for (std::size_t i = 0; i < kColorNames.size(); ++i) {
    if (kColorNames[i] == s) return static_cast<ShapeColor>(i);
  }
  return std::nullopt;
}

Rgb color_rgb(ShapeColor color) {
  switch (color) {
    case ShapeColor::red:
      return {255, 0, 0};
    case ShapeColor::green:
      return {0, 255, 0};
    case ShapeColor::blue:
      return {0, 0, 255};
  }
  return {255, 255, 255};
}

GenerationConfig GenerationConfig::desk() { return GenerationConfig{}; }

GenerationConfig GenerationConfig::paper() {
  GenerationConfig c;
  c.image_size = 512;
  c.anchor_size = 64;
  return c;
}

std::string render_query(std::optional<ShapeColor> color, std::optional<ShapeKind> kind,
                         std::string_view article, bool plural) {
  std::string text;
  auto append = [&text](std::string_view word) {
    if (word.empty()) return;
    if (!text.empty()) text += ' ';
    text += word;
  };
  append(article);
  if (color) append(to_string(*color));
  std::string noun(kind ? to_string(*kind) : "shape");
  if (plural) noun += 's';
  append(noun);
  return text;
}

std::optional<Query> parse_query(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) {
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
    words.push_back(std::move(w));
  }
  if (words.empty() || words.size() > 3) return std::nullopt;

  Query q;
  q.text = text;
  std::string noun = words.back();
  if (noun.size() > 1 && noun.back() == 's') noun.pop_back();
  if (noun != "shape") {
    q.shape_filter = parse_shape_kind(noun);
    if (!q.shape_filter) return std::nullopt;
  }
  std::size_t i = 0;
  if (i + 1 < words.size() && (words[i] == "the" || words[i] == "all")) ++i;
  if (i + 1 < words.size()) {
    q.color_filter = parse_shape_color(words[i]);
    if (!q.color_filter) return std::nullopt;
    ++i;
  }
  if (i + 1 != words.size()) return std::nullopt;
  return q;
}

Query generate_query(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto article = kArticles[uniform_index(rng, kArticles.size())];
  const std::size_t color = uniform_index(rng, 4);
  const std::size_t kind = uniform_index(rng, 4);
  const bool plural = uniform_index(rng, 2) == 1;
  Query q;
  if (color < 3) q.color_filter = static_cast<ShapeColor>(color);
  if (kind < 3) q.shape_filter = static_cast<ShapeKind>(kind);
  q.text = render_query(q.color_filter, q.shape_filter, article, plural);
  return q;
}

std::vector<bool> label_alignment(const std::vector<ShapeObject>& objects, const Query& query) {
  std::vector<bool> aligned;
  aligned.reserve(objects.size());
  for (const auto& o : objects) {
    aligned.push_back((!query.color_filter || *query.color_filter == o.color) &&
                      (!query.shape_filter || *query.shape_filter == o.kind));
  }
  return aligned;
}

void rasterize(Image& image, const ShapeObject& object) {
  const auto& b = object.box;
  const Rgb rgb = color_rgb(object.color);
  const double cx = (b.x1 + b.x2) / 2.0, cy = (b.y1 + b.y2) / 2.0;
  const double r = std::min(b.width(), b.height()) / 2.0;
  const auto x_lo = static_cast<std::size_t>(std::max(0.0, std::floor(b.x1)));
  const auto y_lo = static_cast<std::size_t>(std::max(0.0, std::floor(b.y1)));
  const auto x_hi = std::min(image.width, static_cast<std::size_t>(std::ceil(b.x2)));
  const auto y_hi = std::min(image.height, static_cast<std::size_t>(std::ceil(b.y2)));
  for (std::size_t y = y_lo; y < y_hi; ++y) {
    const double pyc = static_cast<double>(y) + 0.5;
    for (std::size_t x = x_lo; x < x_hi; ++x) {
      const double pxc = static_cast<double>(x) + 0.5;
      bool inside = false;
      switch (object.kind) {
        case ShapeKind::square:
          inside = pxc >= b.x1 && pxc <= b.x2 && pyc >= b.y1 && pyc <= b.y2;
          break;
        case ShapeKind::circle:
          inside = (pxc - cx) * (pxc - cx) + (pyc - cy) * (pyc - cy) <= r * r;
          break;
        case ShapeKind::triangle: {
          // Upright isosceles: apex at the top-center, base along the bottom edge.
          if (pyc < b.y1 || pyc > b.y2) break;
          const double half = (pyc - b.y1) / b.height() * b.width() / 2.0;
          inside = std::abs(pxc - cx) <= half;
          break;
        }
      }
      if (inside) std::copy(rgb.begin(), rgb.end(), image.at(x, y));
    }
  }
}

SceneExample generate_example(std::uint64_t seed, const GenerationConfig& config) {
  std::mt19937_64 rng(seed);
  const auto side_lo = static_cast<std::size_t>(std::ceil(config.side_min_factor * config.anchor_size));
  const auto side_hi = static_cast<std::size_t>(std::floor(config.side_max_factor * config.anchor_size));
  if (side_lo == 0 || side_lo > side_hi || side_hi > config.image_size) {
    throw GenerationError("generate_example: shape size range does not fit the image");
  }
  const std::size_t target =
      config.min_objects + uniform_index(rng, config.max_objects - config.min_objects + 1);

  SceneExample ex;
  ex.image = Image(config.image_size, config.image_size);
  for (std::size_t n = 0; n < target; ++n) {
    for (std::size_t attempt = 0; attempt < config.placement_attempts; ++attempt) {
      const std::size_t side = side_lo + uniform_index(rng, side_hi - side_lo + 1);
      const std::size_t x = uniform_index(rng, config.image_size - side + 1);
      const std::size_t y = uniform_index(rng, config.image_size - side + 1);
      const BoxXYXY box{static_cast<double>(x), static_cast<double>(y),
                        static_cast<double>(x + side), static_cast<double>(y + side)};
      const bool clear = std::all_of(ex.objects.begin(), ex.objects.end(), [&](const ShapeObject& o) {
        return iou(o.box, box) <= config.max_pair_iou;
      });
      if (!clear) continue;
      ShapeObject obj;
      obj.kind = static_cast<ShapeKind>(uniform_index(rng, 3));
      obj.color = static_cast<ShapeColor>(uniform_index(rng, 3));
      obj.box = box;
      ex.objects.push_back(obj);
      break;
    }
  }
  if (ex.objects.size() < config.min_objects) {
    throw GenerationError("generate_example: placed only " + std::to_string(ex.objects.size()) +
                          " shapes for seed " + std::to_string(seed));
  }
  for (const auto& o : ex.objects) rasterize(ex.image, o);

  const std::uint64_t query_base = mix_seed(seed, 0x9e3779b97f4a7c15ULL);
  for (std::size_t attempt = 0; attempt < config.query_attempts; ++attempt) {
    ex.query = generate_query(mix_seed(query_base, attempt));
    ex.aligned = label_alignment(ex.objects, ex.query);
    if (std::find(ex.aligned.begin(), ex.aligned.end(), true) != ex.aligned.end()) return ex;
  }
  const auto& first = ex.objects.front();
  ex.query.color_filter = first.color;
  ex.query.shape_filter = first.kind;
  ex.query.text = render_query(first.color, first.kind, "the", true);
  ex.aligned = label_alignment(ex.objects, ex.query);
  ex.query_fallback = true;
  return ex;
}

std::vector<const ManifestRecord*> DatasetManifest::split(std::string_view name) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records) {
    if (r.split == name) out.push_back(&r);
  }
  return out;
}

std::string manifest_line(const ManifestRecord& record) {
  json objects = json::array();
  for (const auto& o : record.objects) {
    objects.push_back({{"kind", to_string(o.kind)},
                       {"color", to_string(o.color)},
                       {"box", {o.box.x1, o.box.y1, o.box.x2, o.box.y2}}});
  }
  json j = {{"image", record.image},
            {"split", record.split},
            {"objects", std::move(objects)},
            {"query", record.query},
            {"aligned", record.aligned}};
  return j.dump();
}

ManifestRecord parse_manifest_line(std::string_view line) {
  ManifestRecord r;
  try {
    const json j = json::parse(line);
    r.image = j.at("image").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.query = j.at("query").get<std::string>();
    r.aligned = j.at("aligned").get<std::vector<bool>>();
    for (const auto& o : j.at("objects")) {
      ShapeObject obj;
      const auto kind = parse_shape_kind(o.at("kind").get<std::string>());
      const auto color = parse_shape_color(o.at("color").get<std::string>());
      if (!kind || !color) throw DatasetError("unknown shape kind or color");
      obj.kind = *kind;
      obj.color = *color;
      const auto box = o.at("box").get<std::vector<double>>();
      if (box.size() != 4) throw DatasetError("box must have 4 coordinates");
      obj.box = {box[0], box[1], box[2], box[3]};
      r.objects.push_back(obj);
    }
  } catch (const json::exception& e) {
    throw DatasetError(std::string("malformed manifest line: ") + e.what());
  }
  if (r.aligned.size() != r.objects.size()) {
    throw DatasetError("manifest line: aligned/objects length mismatch");
  }
  return r;
}

DatasetManifest generate_dataset(const std::filesystem::path& root, std::uint64_t root_seed,
                                 const SplitCounts& counts, const GenerationConfig& config) {
  namespace fs = std::filesystem;
  DatasetManifest manifest;
  manifest.root = root;
  const std::array<std::pair<const char*, std::size_t>, 3> splits = {
      {{"train", counts.train}, {"val", counts.val}, {"test", counts.test}}};
  std::uint64_t global = 0;
  for (const auto& [name, count] : splits) {
    const fs::path dir = root / "images" / name;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DatasetError("cannot create " + dir.string() + ": " + ec.message());
    for (std::size_t i = 0; i < count; ++i, ++global) {
      SceneExample ex = generate_example(root_seed + global, config);
      ManifestRecord rec;
      rec.image = "images/" + std::string(name) + "/" + std::to_string(i) + ".png";
      rec.split = name;
      rec.objects = ex.objects;
      rec.query = ex.query.text;
      rec.aligned = ex.aligned;
      try {
        write_png(root / rec.image, ex.image);
      } catch (const ImageError& e) {
        throw DatasetError(e.what());
      }
      manifest.records.push_back(std::move(rec));
    }
  }
  const fs::path path = root / "manifest.jsonl";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  for (const auto& rec : manifest.records) out << manifest_line(rec) << '\n';
  if (!out) throw DatasetError("write failed for " + path.string());
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& root) {
  const auto path = root / "manifest.jsonl";
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open " + path.string());
  DatasetManifest manifest;
  manifest.root = root;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      manifest.records.push_back(parse_manifest_line(line));
    } catch (const DatasetError& e) {
      throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return manifest;
}

SceneExample load_example(const DatasetManifest& manifest, const ManifestRecord& record) {
  SceneExample ex;
  try {
    ex.image = read_png(manifest.root / record.image);
  } catch (const ImageError& e) {
    throw DatasetError(e.what());
  }
  ex.objects = record.objects;
  ex.aligned = record.aligned;
  if (auto q = parse_query(record.query)) {
    ex.query = *q;
  } else {
    ex.query.text = record.query;
  }
  return ex;
}

}  // namespace tdet
