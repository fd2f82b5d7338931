#include "damagelab/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <set>

#include <nlohmann/json.hpp>

namespace damagelab {

namespace {

// Minimal WKT POLYGON reader. Only the outer ring is consumed; a closing
// vertex equal to the first is dropped.
std::vector<std::array<double, 2>> parse_wkt_polygon(const std::string& wkt) {
  const auto open = wkt.find("((");
  if (wkt.find("POLYGON") == std::string::npos || open == std::string::npos) {
    throw MalformedLabelFile("not a WKT POLYGON: \"" + wkt + "\"");
  }
  auto close = wkt.find(')', open + 2);
  if (close == std::string::npos) {
    throw MalformedLabelFile("unterminated WKT ring: \"" + wkt + "\"");
  }
  std::vector<std::array<double, 2>> vertices;
  std::size_t pos = open + 2;
  while (pos < close) {
    std::size_t next = wkt.find(',', pos);
    if (next == std::string::npos || next > close) next = close;
    const std::string pair = wkt.substr(pos, next - pos);
    double x = 0.0;
    double y = 0.0;
    char* end = nullptr;
    x = std::strtod(pair.c_str(), &end);
    if (end == pair.c_str()) {
      throw MalformedLabelFile("bad WKT coordinate pair: \"" + pair + "\"");
    }
    const char* ystart = end;
    y = std::strtod(ystart, &end);
    if (end == ystart) {
      throw MalformedLabelFile("bad WKT coordinate pair: \"" + pair + "\"");
    }
    vertices.push_back({x, y});
    pos = next + 1;
  }
  if (vertices.size() >= 2 && vertices.front() == vertices.back()) {
    vertices.pop_back();
  }
  return vertices;
}

std::string normalize_label(std::string label) {
  if (label == "un-classified") return kUnclassifiedLabel;
  return label;
}

}  // namespace

ParsedLabels parse_label_file(std::string_view bytes) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedLabelFile(e.what());
  }

  ParsedLabels out;
  const auto metadata = doc.find("metadata");
  if (metadata == doc.end() || !metadata->contains("disaster_type")) {
    throw MalformedLabelFile("missing metadata.disaster_type");
  }
  out.disaster_type =
      disaster_type_from_tag(metadata->at("disaster_type").get<std::string>());
  out.scene_id = metadata->value("scene_id", std::string{});

  const auto features = doc.find("features");
  if (features == doc.end() || !features->contains("xy")) {
    throw MalformedLabelFile("missing features.xy");
  }
  int counter = 0;
  for (const auto& feature : features->at("xy")) {
    const auto& properties = feature.at("properties");
    if (properties.value("feature_type", std::string{}) != "building") {
      continue;
    }
    BuildingAnnotation annotation;
    annotation.polygon = parse_wkt_polygon(feature.at("wkt").get<std::string>());
    if (annotation.polygon.size() < 3) {
      throw InvalidPolygon("building polygon with fewer than 3 vertices");
    }
    annotation.raw_label =
        normalize_label(properties.value("subtype", std::string{}));
    annotation.uid = properties.value("uid", std::string{});
    if (annotation.uid.empty()) {
      annotation.uid = "b" + std::to_string(counter);
    }
    ++counter;
    out.annotations.push_back(std::move(annotation));
  }
  return out;
}

BBox polygon_bbox(std::span<const std::array<double, 2>> polygon) {
  if (polygon.size() < 3) {
    throw InvalidPolygon("need at least 3 vertices, got " +
                         std::to_string(polygon.size()));
  }
  double min_x = polygon[0][0];
  double max_x = polygon[0][0];
  double min_y = polygon[0][1];
  double max_y = polygon[0][1];
  for (const auto& vertex : polygon) {
    min_x = std::min(min_x, vertex[0]);
    max_x = std::max(max_x, vertex[0]);
    min_y = std::min(min_y, vertex[1]);
    max_y = std::max(max_y, vertex[1]);
  }
  BBox box;
  box.x_min = static_cast<int>(std::floor(min_x));
  box.y_min = static_cast<int>(std::floor(min_y));
  box.x_max = static_cast<int>(std::ceil(max_x));
  box.y_max = static_cast<int>(std::ceil(max_y));
  if (box.width() <= 0 || box.height() <= 0) {
    throw InvalidPolygon("polygon bounds are degenerate (zero area)");
  }
  return box;
}

SceneInventory enumerate_scene_pairs(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const fs::path images = root / "images";
  const fs::path labels = root / "labels";

  std::set<std::string> ids;
  const std::string pre_suffix = "_pre_disaster.png";
  const std::string post_suffix = "_post_disaster.png";
  if (fs::is_directory(images)) {
    for (const auto& entry : fs::directory_iterator(images)) {
      const std::string name = entry.path().filename().string();
      for (const auto& suffix : {pre_suffix, post_suffix}) {
        if (name.size() > suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) ==
                0) {
          ids.insert(name.substr(0, name.size() - suffix.size()));
        }
      }
    }
  }
  if (fs::is_directory(labels)) {
    const std::string label_suffix = "_post_disaster.json";
    for (const auto& entry : fs::directory_iterator(labels)) {
      const std::string name = entry.path().filename().string();
      if (name.size() > label_suffix.size() &&
          name.compare(name.size() - label_suffix.size(), label_suffix.size(),
                       label_suffix) == 0) {
        ids.insert(name.substr(0, name.size() - label_suffix.size()));
      }
    }
  }

  SceneInventory inventory;
  for (const auto& id : ids) {  // std::set keeps enumeration order stable
    const fs::path pre = images / (id + pre_suffix);
    const fs::path post = images / (id + post_suffix);
    const fs::path label = labels / (id + "_post_disaster.json");
    std::string missing;
    if (!fs::is_regular_file(pre)) missing += " pre-image";
    if (!fs::is_regular_file(post)) missing += " post-image";
    if (!fs::is_regular_file(label)) missing += " label-file";
    if (!missing.empty()) {
      inventory.skipped.push_back(id + ": missing" + missing);
      continue;
    }

    std::string bytes;
    {
      std::ifstream in(label, std::ios::binary);
      if (!in) throw IoFailure("cannot read " + label.string());
      bytes.assign(std::istreambuf_iterator<char>(in),
                   std::istreambuf_iterator<char>());
    }
    ParsedLabels parsed = parse_label_file(bytes);

    ScenePair scene;
    scene.scene_id = id;
    scene.disaster_type = parsed.disaster_type;
    scene.annotations = std::move(parsed.annotations);
    scene.pre_image = read_png(pre);
    scene.post_image = read_png(post);
    if (!scene.pre_image.same_shape(scene.post_image)) {
      inventory.skipped.push_back(id + ": pre/post raster shape mismatch");
      continue;
    }
    inventory.scenes.push_back(std::move(scene));
  }

  if (inventory.scenes.empty()) {
    throw EmptyDataset("no complete scene under " + root.string());
  }
  return inventory;
}

}  // namespace damagelab
