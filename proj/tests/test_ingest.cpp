#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <fstream>

#include "damagelab/ingest.hpp"
#include "damagelab/synthdata.hpp"
#include "test_support.hpp"

using namespace damagelab;

namespace {

const char* kMinimalLabelFile = R"json({
  "features": {
    "xy": [
      {
        "wkt": "POLYGON ((10 10, 60 10, 60 60, 10 60, 10 10))",
        "properties": {"feature_type": "building", "subtype": "no-damage", "uid": "a1"}
      }
    ]
  },
  "metadata": {"disaster_type": "flooding"}
})json";

}  // namespace

TEST_CASE("parse minimal label file") {
  const ParsedLabels parsed = parse_label_file(kMinimalLabelFile);
  REQUIRE(parsed.annotations.size() == 1);
  CHECK(parsed.disaster_type == DisasterType::kFlooding);
  const auto& a = parsed.annotations[0];
  CHECK(a.raw_label == "no-damage");
  CHECK(a.uid == "a1");
  // closed ring: the duplicate closing vertex is dropped
  CHECK(a.polygon.size() == 4);
  CHECK(a.polygon[0] == std::array<double, 2>{10.0, 10.0});
}

TEST_CASE("zero building features is not an error") {
  const ParsedLabels parsed = parse_label_file(R"json({
    "features": {"xy": [
      {"wkt": "POLYGON ((0 0, 1 0, 1 1, 0 0))",
       "properties": {"feature_type": "road", "subtype": ""}}
    ]},
    "metadata": {"disaster_type": "fire"}
  })json");
  CHECK(parsed.annotations.empty());
  CHECK(parsed.disaster_type == DisasterType::kFire);
}

TEST_CASE("unknown disaster type is a hard error") {
  CHECK_THROWS_AS(parse_label_file(R"json({
    "features": {"xy": []},
    "metadata": {"disaster_type": "meteor"}
  })json"),
                  UnknownDisasterType);
}

TEST_CASE("malformed content and bad polygons") {
  CHECK_THROWS_AS(parse_label_file("not json at all"), MalformedLabelFile);
  CHECK_THROWS_AS(parse_label_file(R"json({"metadata": {}})json"),
                  MalformedLabelFile);
  // two-vertex polygon
  CHECK_THROWS_AS(parse_label_file(R"json({
    "features": {"xy": [
      {"wkt": "POLYGON ((0 0, 5 5))",
       "properties": {"feature_type": "building", "subtype": "no-damage"}}
    ]},
    "metadata": {"disaster_type": "wind"}
  })json"),
                  InvalidPolygon);
  // not WKT
  CHECK_THROWS_AS(parse_label_file(R"json({
    "features": {"xy": [
      {"wkt": "CIRCLE (3 3 1)",
       "properties": {"feature_type": "building", "subtype": "no-damage"}}
    ]},
    "metadata": {"disaster_type": "wind"}
  })json"),
                  MalformedLabelFile);
}

TEST_CASE("un-classified normalizes to the canonical spelling") {
  const ParsedLabels parsed = parse_label_file(R"json({
    "features": {"xy": [
      {"wkt": "POLYGON ((0 0, 90 0, 90 90, 0 90, 0 0))",
       "properties": {"feature_type": "building", "subtype": "un-classified"}}
    ]},
    "metadata": {"disaster_type": "tsunami"}
  })json");
  REQUIRE(parsed.annotations.size() == 1);
  CHECK(parsed.annotations[0].raw_label == kUnclassifiedLabel);
}

TEST_CASE("parsing is pure: identical bytes give identical output") {
  const ParsedLabels a = parse_label_file(kMinimalLabelFile);
  const ParsedLabels b = parse_label_file(kMinimalLabelFile);
  REQUIRE(a.annotations.size() == b.annotations.size());
  for (std::size_t i = 0; i < a.annotations.size(); ++i) {
    CHECK(a.annotations[i].polygon == b.annotations[i].polygon);
    CHECK(a.annotations[i].raw_label == b.annotations[i].raw_label);
  }
  CHECK(a.disaster_type == b.disaster_type);
}

TEST_CASE("polygon_bbox on the axis-aligned square") {
  const std::vector<std::array<double, 2>> square = {
      {0, 0}, {10, 0}, {10, 10}, {0, 10}};
  const BBox box = polygon_bbox(square);
  CHECK(box.x_min == 0);
  CHECK(box.y_min == 0);
  CHECK(box.x_max == 10);
  CHECK(box.y_max == 10);
  CHECK(box.area() == 100);
}

TEST_CASE("polygon_bbox triangle min/max by hand") {
  const std::vector<std::array<double, 2>> tri = {{2, 3}, {8, 1}, {5, 9}};
  const BBox box = polygon_bbox(tri);
  CHECK(box.x_min == 2);
  CHECK(box.y_min == 1);
  CHECK(box.x_max == 8);
  CHECK(box.y_max == 9);
  CHECK(box.area() == 48);
}

TEST_CASE("polygon_bbox degenerate and undersized polygons") {
  const std::vector<std::array<double, 2>> collinear = {{0, 0}, {5, 0}, {9, 0}};
  CHECK_THROWS_AS(polygon_bbox(collinear), InvalidPolygon);
  const std::vector<std::array<double, 2>> two = {{0, 0}, {5, 5}};
  CHECK_THROWS_AS(polygon_bbox(two), InvalidPolygon);
}

TEST_CASE("polygon_bbox fractional vertices round outward") {
  const std::vector<std::array<double, 2>> poly = {
      {1.3, 2.7}, {7.2, 3.1}, {4.9, 8.4}};
  const BBox box = polygon_bbox(poly);
  CHECK(box.x_min == 1);
  CHECK(box.y_min == 2);
  CHECK(box.x_max == 8);
  CHECK(box.y_max == 9);
}

TEST_CASE("property: bbox contains every vertex of random polygons") {
  Rng rng(19);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 3 + static_cast<int>(rng.uniform_int(0, 9));
    std::vector<std::array<double, 2>> poly;
    for (int i = 0; i < n; ++i) {
      poly.push_back({rng.uniform() * 1000.0, rng.uniform() * 1000.0});
    }
    BBox box{};
    try {
      box = polygon_bbox(poly);
    } catch (const InvalidPolygon&) {
      continue;  // degenerate random draw
    }
    for (const auto& v : poly) {
      CHECK(v[0] >= box.x_min);
      CHECK(v[0] <= box.x_max);
      CHECK(v[1] >= box.y_min);
      CHECK(v[1] <= box.y_max);
    }
  }
}

TEST_CASE("enumerate_scene_pairs joins complete scenes and reports holes") {
  testsupport::TempDir dir("enumerate");
  namespace fs = std::filesystem;
  fs::create_directories(dir.path() / "images");
  fs::create_directories(dir.path() / "labels");

  auto write_scene = [&](const std::string& id, bool with_pre) {
    const ImageU8 img = testsupport::solid_image(64, 10, 20, 30);
    if (with_pre) {
      write_png(dir.path() / "images" / (id + "_pre_disaster.png"), img);
    }
    write_png(dir.path() / "images" / (id + "_post_disaster.png"), img);
    std::ofstream out(dir.path() / "labels" / (id + "_post_disaster.json"));
    out << kMinimalLabelFile;
  };
  write_scene("alpha", true);
  write_scene("beta", true);
  write_scene("gamma", false);  // missing pre image

  const SceneInventory inventory = enumerate_scene_pairs(dir.path());
  CHECK(inventory.scenes.size() == 2);
  REQUIRE(inventory.skipped.size() == 1);
  CHECK(inventory.skipped[0].find("gamma") != std::string::npos);
  CHECK(inventory.scenes[0].scene_id == "alpha");
  CHECK(inventory.scenes[0].annotations.size() == 1);
}

TEST_CASE("empty dataset root raises EmptyDataset") {
  testsupport::TempDir dir("empty");
  CHECK_THROWS_AS(enumerate_scene_pairs(dir.path()), EmptyDataset);
}

TEST_CASE("round-trip: synth output parses back with exact counts") {
  testsupport::TempDir dir("roundtrip");
  SynthParams params;
  params.n_scenes = 3;
  params.buildings_per_scene = 8;
  params.image_side = 256;
  params.min_box = 20;
  params.max_box = 50;
  params.seed = 99;
  params.unclassified_frac = 0.2;
  generate(params, dir.path());

  const SceneInventory inventory = enumerate_scene_pairs(dir.path());
  CHECK(inventory.scenes.size() == 3);
  CHECK(inventory.skipped.empty());
  int buildings = 0;
  for (const auto& scene : inventory.scenes) {
    buildings += static_cast<int>(scene.annotations.size());
    CHECK(scene.pre_image.width == 256);
    CHECK(scene.pre_image.same_shape(scene.post_image));
  }
  CHECK(buildings == 24);
}
