#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "damagelab/types.hpp"

namespace damagelab {

struct ParsedLabels {
  std::vector<BuildingAnnotation> annotations;
  DisasterType disaster_type = DisasterType::kEarthquake;
  std::string scene_id;  // from metadata when present, else empty
};

// Parses one post-disaster label file (UTF-8 JSON, features.xy with WKT
// polygons). Label strings are preserved, except that the file form
// "un-classified" is normalized to "unclassified".
ParsedLabels parse_label_file(std::string_view bytes);

// Tight axis-aligned integer bounds: floor of the minima, ceil of the
// maxima. Degenerate (zero width or height) bounds are rejected.
BBox polygon_bbox(std::span<const std::array<double, 2>> polygon);

struct SceneInventory {
  std::vector<ScenePair> scenes;
  std::vector<std::string> skipped;  // scene_id + reason, one per hole
};

// Joins <root>/images/<id>_pre_disaster.png, .../<id>_post_disaster.png and
// <root>/labels/<id>_post_disaster.json by filename-derived scene id.
// Incomplete scenes are reported in `skipped`, not fatal.
SceneInventory enumerate_scene_pairs(const std::filesystem::path& root);

}  // namespace damagelab
