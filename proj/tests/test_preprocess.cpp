#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "damagelab/image.hpp"
#include "damagelab/ingest.hpp"
#include "damagelab/preprocess.hpp"
#include "test_support.hpp"

using namespace damagelab;

namespace {

BuildingAnnotation rect_annotation(int x0, int y0, int w, int h,
                                   const std::string& label,
                                   const std::string& uid) {
  BuildingAnnotation a;
  a.polygon = {{static_cast<double>(x0), static_cast<double>(y0)},
               {static_cast<double>(x0 + w), static_cast<double>(y0)},
               {static_cast<double>(x0 + w), static_cast<double>(y0 + h)},
               {static_cast<double>(x0), static_cast<double>(y0 + h)}};
  a.raw_label = label;
  a.uid = uid;
  return a;
}

}  // namespace

TEST_CASE("filter keeps the 2000 px^2 boundary and drops below it") {
  std::vector<BuildingAnnotation> annotations = {
      rect_annotation(0, 0, 40, 50, "minor-damage", "exact"),   // 2000 exactly
      rect_annotation(0, 0, 8, 8, "destroyed", "tiny"),         // 64 px^2
      rect_annotation(0, 0, 100, 100, "unclassified", "uncl"),  // label filter
      rect_annotation(0, 0, 60, 60, "no-damage", "big"),
  };
  const auto kept = filter_buildings(annotations);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].first.uid == "exact");
  CHECK(kept[0].second.area() == 2000);
  CHECK(kept[1].first.uid == "big");
}

TEST_CASE("property: every survivor has area >= 2000 and a class label") {
  Rng rng(5);
  std::vector<BuildingAnnotation> annotations;
  const char* labels[] = {"no-damage", "minor-damage", "major-damage",
                          "destroyed", "unclassified"};
  for (int i = 0; i < 300; ++i) {
    const int w = 5 + static_cast<int>(rng.uniform_int(0, 90));
    const int h = 5 + static_cast<int>(rng.uniform_int(0, 90));
    annotations.push_back(rect_annotation(
        static_cast<int>(rng.uniform_int(0, 800)),
        static_cast<int>(rng.uniform_int(0, 800)), w, h,
        labels[rng.uniform_int(0, 4)], "u" + std::to_string(i)));
  }
  const auto kept = filter_buildings(annotations);
  std::size_t expected = 0;
  for (const auto& a : annotations) {
    const auto box = polygon_bbox(a.polygon);
    if (box.area() >= 2000 && a.raw_label != kUnclassifiedLabel) ++expected;
  }
  CHECK(kept.size() == expected);
  for (const auto& [annotation, box] : kept) {
    CHECK(box.area() >= 2000);
    CHECK_NOTHROW(damage_class_from_label(annotation.raw_label));
  }
}

TEST_CASE("crop of a constant image is constant at any size") {
  const ImageU8 img = testsupport::solid_image(100, 33, 66, 99);
  const ImageU8 crop = crop_building(img, BBox{10, 10, 55, 40}, 0, 64);
  CHECK(crop.width == 64);
  CHECK(crop.height == 64);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      CHECK(crop.at(y, x, 0) == 33);
      CHECK(crop.at(y, x, 1) == 66);
      CHECK(crop.at(y, x, 2) == 99);
    }
  }
}

TEST_CASE("same-size crop is a pixel-identical copy") {
  const ImageU8 img = testsupport::random_image(80, 17);
  const int side = 32;
  const BBox box{12, 20, 12 + side, 20 + side};
  const ImageU8 crop = crop_building(img, box, 0, side);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      for (int c = 0; c < 3; ++c) {
        CHECK(crop.at(y, x, c) == img.at(box.y_min + y, box.x_min + x, c));
      }
    }
  }
}

TEST_CASE("overhanging bbox clamps to the edge and still fills the output") {
  const ImageU8 img = testsupport::random_image(64, 23);
  // 5 px past the right edge; clamped region is 59..64 wide
  const BBox box{40, 10, 69, 42};
  const ImageU8 crop = crop_building(img, box, 0, 16);
  CHECK(crop.width == 16);
  CHECK(crop.height == 16);
  // reference: crop the clamped region by hand, then resize
  const ImageU8 reference =
      resize_bilinear(crop_region(img, 40, 10, 64, 42), 16, 16);
  CHECK(crop.pixels == reference.pixels);
}

TEST_CASE("crop output never leaves the input value range") {
  const ImageU8 img = testsupport::random_image(90, 29);
  std::uint8_t lo = 255, hi = 0;
  for (auto p : img.pixels) {
    lo = std::min(lo, p);
    hi = std::max(hi, p);
  }
  const ImageU8 crop = crop_building(img, BBox{5, 5, 77, 70}, 3, 48);
  for (auto p : crop.pixels) {
    CHECK(p >= lo);
    CHECK(p <= hi);
  }
}

TEST_CASE("fully out-of-bounds bbox is rejected after clamping") {
  const ImageU8 img = testsupport::solid_image(32, 1, 2, 3);
  CHECK_THROWS_AS(crop_building(img, BBox{40, 40, 60, 60}, 0, 16), InvalidBBox);
  CHECK_THROWS_AS(crop_building(img, BBox{4, 4, 4, 9}, 0, 16), InvalidBBox);
}

TEST_CASE("balanced split arithmetic on equal classes") {
  const auto records = testsupport::class_coded_records(100, 8, 1);
  const SplitManifest manifest = balanced_split(records, 0.8, 42);
  CHECK(manifest.train.size() == 4 * 80);
  CHECK(manifest.val.size() == 4 * 20);
}

TEST_CASE("balanced split downsamples to the minority class") {
  std::vector<BuildingRecord> records;
  const int counts[4] = {5000, 120, 300, 90};
  for (int klass = 0; klass < 4; ++klass) {
    for (int i = 0; i < counts[klass]; ++i) {
      records.push_back(testsupport::class_coded_record(klass, i, 8, 2));
    }
  }
  const SplitManifest manifest = balanced_split(records, 0.8, 42);
  // m = 90: floor(0.8 * 90) = 72 train, 18 val per class
  CHECK(manifest.train.size() == 4 * 72);
  CHECK(manifest.val.size() == 4 * 18);

  std::map<std::string, const BuildingRecord*> by_uid;
  for (const auto& r : records) by_uid[r.uid] = &r;
  std::array<int, 4> train_counts{};
  std::array<int, 4> val_counts{};
  for (const auto& uid : manifest.train) {
    train_counts[static_cast<std::size_t>(class_index(by_uid.at(uid)->label))]++;
  }
  for (const auto& uid : manifest.val) {
    val_counts[static_cast<std::size_t>(class_index(by_uid.at(uid)->label))]++;
  }
  for (int c = 0; c < 4; ++c) {
    CHECK(train_counts[static_cast<std::size_t>(c)] == 72);
    CHECK(val_counts[static_cast<std::size_t>(c)] == 18);
  }
}

TEST_CASE("ratio outside (0,1) is rejected") {
  const auto records = testsupport::class_coded_records(5, 8, 3);
  CHECK_THROWS_AS(balanced_split(records, 1.0, 1), InvalidRatio);
  CHECK_THROWS_AS(balanced_split(records, 0.0, 1), InvalidRatio);
  CHECK_THROWS_AS(balanced_split(records, 1.5, 1), InvalidRatio);
}

TEST_CASE("class with fewer than two records is rejected") {
  std::vector<BuildingRecord> records = testsupport::class_coded_records(3, 8, 4);
  records.push_back(testsupport::class_coded_record(0, 99, 8, 4));
  // remove all but one destroyed record
  records.erase(std::remove_if(records.begin(), records.end(),
                               [](const BuildingRecord& r) {
                                 return r.label == DamageClass::kDestroyed &&
                                        r.uid != "c3_0";
                               }),
                records.end());
  CHECK_THROWS_AS(balanced_split(records, 0.8, 1), InsufficientClass);
}

TEST_CASE("split is deterministic and order-invariant") {
  auto records = testsupport::class_coded_records(20, 8, 5);
  const SplitManifest a = balanced_split(records, 0.75, 123);
  const SplitManifest b = balanced_split(records, 0.75, 123);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);

  // shuffle input order; same seed must give the same selection
  Rng rng(55);
  rng.shuffle(records);
  const SplitManifest c = balanced_split(records, 0.75, 123);
  CHECK(a.train == c.train);
  CHECK(a.val == c.val);

  // train and val are disjoint by uid
  std::set<std::string> train_set(a.train.begin(), a.train.end());
  for (const auto& uid : a.val) CHECK(train_set.count(uid) == 0);

  // a different seed selects differently
  const SplitManifest d = balanced_split(records, 0.75, 124);
  CHECK(a.train != d.train);
}

TEST_CASE("manifest write/read round-trip preserves records") {
  testsupport::TempDir dir("manifest");
  const auto records = testsupport::class_coded_records(3, 16, 6);
  const SplitManifest manifest = balanced_split(records, 0.7, 9);
  write_manifest(manifest, records, dir.path());

  const LoadedManifest loaded = read_manifest(dir.path());
  CHECK(loaded.split.train == manifest.train);
  CHECK(loaded.split.val == manifest.val);
  CHECK(loaded.records.size() == manifest.train.size() + manifest.val.size());

  std::map<std::string, const BuildingRecord*> by_uid;
  for (const auto& r : records) by_uid[r.uid] = &r;
  for (const auto& r : loaded.records) {
    const BuildingRecord& original = *by_uid.at(r.uid);
    CHECK(r.label == original.label);
    CHECK(r.disaster_type == original.disaster_type);
    CHECK(r.bbox_area == original.bbox_area);
    CHECK(r.scene_id == original.scene_id);
    CHECK(image_checksum(r.crop_pre) == image_checksum(original.crop_pre));
    CHECK(image_checksum(r.crop_post) == image_checksum(original.crop_post));
  }
}

TEST_CASE("writing twice yields byte-identical manifests") {
  testsupport::TempDir a("det_a");
  testsupport::TempDir b("det_b");
  const auto records = testsupport::class_coded_records(4, 12, 7);
  const SplitManifest manifest = balanced_split(records, 0.8, 31);
  write_manifest(manifest, records, a.path());
  write_manifest(manifest, records, b.path());
  CHECK(testsupport::read_file(a.path() / "manifest.jsonl") ==
        testsupport::read_file(b.path() / "manifest.jsonl"));
  CHECK(!testsupport::read_file(a.path() / "manifest.jsonl").empty());
}

TEST_CASE("duplicate uids are rejected at write time") {
  testsupport::TempDir dir("dup");
  auto records = testsupport::class_coded_records(2, 8, 8);
  records.push_back(records.front());  // forced collision
  SplitManifest manifest;
  manifest.train = {records.front().uid};
  manifest.val = {records.back().uid};
  CHECK_THROWS_AS(write_manifest(manifest, records, dir.path()), DuplicateUid);
}

TEST_CASE("empty manifest writes an empty file and no crops") {
  testsupport::TempDir dir("empty_manifest");
  write_manifest(SplitManifest{}, {}, dir.path());
  CHECK(testsupport::read_file(dir.path() / "manifest.jsonl").empty());
  CHECK(std::filesystem::is_empty(dir.path() / "crops"));
}

TEST_CASE("area histogram bins every parsed building once") {
  std::vector<BuildingAnnotation> annotations = {
      rect_annotation(0, 0, 10, 10, "no-damage", "a"),       // 100
      rect_annotation(0, 0, 10, 24, "minor-damage", "b"),    // 240
      rect_annotation(0, 0, 10, 25, "unclassified", "c"),    // 250
      rect_annotation(0, 0, 50, 40, "destroyed", "d"),       // 2000
      rect_annotation(0, 0, 100, 80, "major-damage", "e"),   // 8000 -> outlier
      rect_annotation(0, 0, 200, 200, "no-damage", "f"),     // outlier
  };
  const AreaHistogram histogram = area_histogram(annotations);
  CHECK(histogram.total == 6);
  CHECK(histogram.bins.size() == 32);
  CHECK(histogram.bins[0] == 2);  // 100 and 240
  CHECK(histogram.bins[1] == 1);  // 250
  CHECK(histogram.bins[8] == 1);  // 2000
  CHECK(histogram.above_max == 2);
  std::int64_t binned = histogram.above_max;
  for (const auto count : histogram.bins) binned += count;
  CHECK(binned == histogram.total);

  CHECK_THROWS_AS(area_histogram(annotations, 300, 8000), InvalidConfig);
}

TEST_CASE("build_records wires filtering, cropping and labels together") {
  ScenePair scene;
  scene.scene_id = "s1";
  scene.disaster_type = DisasterType::kVolcano;
  scene.pre_image = testsupport::random_image(200, 71);
  scene.post_image = testsupport::random_image(200, 72);
  scene.annotations = {
      rect_annotation(10, 10, 50, 50, "major-damage", "keep"),
      rect_annotation(100, 100, 10, 10, "destroyed", "small"),
      rect_annotation(30, 120, 60, 60, "unclassified", "uncl"),
  };
  const auto records = build_records(scene, 2000, 0, 32);
  REQUIRE(records.size() == 1);
  CHECK(records[0].uid == "s1_keep");
  CHECK(records[0].label == DamageClass::kMajorDamage);
  CHECK(records[0].disaster_type == DisasterType::kVolcano);
  CHECK(records[0].bbox_area == 2500);
  CHECK(records[0].crop_pre.width == 32);
  CHECK(records[0].crop_post.width == 32);
}
