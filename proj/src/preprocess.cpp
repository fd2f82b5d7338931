#include "damagelab/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "damagelab/ingest.hpp"

namespace damagelab {

std::vector<std::pair<BuildingAnnotation, BBox>> filter_buildings(
    std::span<const BuildingAnnotation> annotations, std::int64_t min_area) {
  std::vector<std::pair<BuildingAnnotation, BBox>> kept;
  for (const auto& annotation : annotations) {
    if (annotation.raw_label == kUnclassifiedLabel) continue;
    const BBox box = polygon_bbox(annotation.polygon);
    if (box.area() < min_area) continue;
    kept.emplace_back(annotation, box);
  }
  return kept;
}

AreaHistogram area_histogram(std::span<const BuildingAnnotation> annotations,
                             std::int64_t bin_width, std::int64_t max_area) {
  if (bin_width <= 0 || max_area <= 0 || max_area % bin_width != 0) {
    throw InvalidConfig("histogram needs bin_width > 0 dividing max_area");
  }
  AreaHistogram histogram;
  histogram.bin_width = bin_width;
  histogram.max_area = max_area;
  histogram.bins.assign(static_cast<std::size_t>(max_area / bin_width), 0);
  for (const auto& annotation : annotations) {
    std::int64_t area = 0;
    try {
      area = polygon_bbox(annotation.polygon).area();
    } catch (const InvalidPolygon&) {
      continue;  // degenerate outlines carry no area
    }
    ++histogram.total;
    if (area >= max_area) {
      ++histogram.above_max;
    } else {
      ++histogram.bins[static_cast<std::size_t>(area / bin_width)];
    }
  }
  return histogram;
}

ImageU8 crop_building(const ImageU8& image, const BBox& bbox, int pad,
                      int out_side) {
  if (bbox.width() <= 0 || bbox.height() <= 0) {
    throw InvalidBBox("degenerate bbox");
  }
  if (pad < 0 || out_side <= 0) {
    throw InvalidBBox("pad must be >= 0 and out_side > 0");
  }
  const int x0 = std::clamp(bbox.x_min - pad, 0, image.width);
  const int y0 = std::clamp(bbox.y_min - pad, 0, image.height);
  const int x1 = std::clamp(bbox.x_max + pad, 0, image.width);
  const int y1 = std::clamp(bbox.y_max + pad, 0, image.height);
  if (x1 <= x0 || y1 <= y0) {
    throw InvalidBBox("bbox degenerate after clamping to image bounds");
  }
  return resize_bilinear(crop_region(image, x0, y0, x1, y1), out_side,
                         out_side);
}

std::vector<BuildingRecord> build_records(const ScenePair& scene,
                                          std::int64_t min_area, int pad,
                                          int out_side) {
  std::vector<BuildingRecord> records;
  for (const auto& [annotation, box] :
       filter_buildings(scene.annotations, min_area)) {
    BuildingRecord record;
    record.crop_pre = crop_building(scene.pre_image, box, pad, out_side);
    record.crop_post = crop_building(scene.post_image, box, pad, out_side);
    record.label = damage_class_from_label(annotation.raw_label);
    record.disaster_type = scene.disaster_type;
    record.bbox_area = box.area();
    record.scene_id = scene.scene_id;
    record.uid = scene.scene_id + "_" + annotation.uid;
    records.push_back(std::move(record));
  }
  return records;
}

SplitManifest balanced_split(std::span<const BuildingRecord> records,
                             double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw InvalidRatio("ratio must lie in (0,1), got " + std::to_string(ratio));
  }

  std::array<std::vector<std::string>, kNumClasses> by_class;
  for (const auto& record : records) {
    by_class[static_cast<std::size_t>(class_index(record.label))].push_back(
        record.uid);
  }
  std::size_t m = records.empty() ? 0 : records.size();
  for (int c = 0; c < kNumClasses; ++c) {
    if (by_class[c].size() < 2) {
      throw InsufficientClass("class " + std::to_string(c) + " has " +
                              std::to_string(by_class[c].size()) +
                              " records, need at least 2");
    }
    m = std::min(m, by_class[c].size());
  }

  const auto train_per_class =
      static_cast<std::size_t>(std::floor(ratio * static_cast<double>(m)));

  SplitManifest manifest;
  manifest.seed = seed;
  manifest.ratio = ratio;
  for (int c = 0; c < kNumClasses; ++c) {
    auto& uids = by_class[c];
    // Sorting first makes the result a function of the record *set*, not of
    // input order; the shuffle then subsamples uniformly.
    std::sort(uids.begin(), uids.end());
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    rng.shuffle(uids);
    for (std::size_t i = 0; i < m; ++i) {
      (i < train_per_class ? manifest.train : manifest.val).push_back(uids[i]);
    }
  }
  return manifest;
}

namespace {

const BuildingRecord& record_by_uid(
    const std::map<std::string, const BuildingRecord*>& index,
    const std::string& uid) {
  const auto it = index.find(uid);
  if (it == index.end()) {
    throw IoFailure("manifest references unknown record uid " + uid);
  }
  return *it->second;
}

nlohmann::json record_line(const BuildingRecord& record,
                           const std::string& split) {
  return nlohmann::json{
      {"uid", record.uid},
      {"scene_id", record.scene_id},
      {"label", class_index(record.label)},
      {"disaster_type", disaster_type_tag(record.disaster_type)},
      {"bbox_area", record.bbox_area},
      {"split", split},
      {"pre_path", "crops/" + record.uid + "_pre.png"},
      {"post_path", "crops/" + record.uid + "_post.png"},
  };
}

}  // namespace

void write_manifest(const SplitManifest& manifest,
                    std::span<const BuildingRecord> records,
                    const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::map<std::string, const BuildingRecord*> index;
  for (const auto& record : records) {
    if (!index.emplace(record.uid, &record).second) {
      throw DuplicateUid("record uid \"" + record.uid + "\" appears twice");
    }
  }

  std::error_code ec;
  fs::create_directories(out_dir / "crops", ec);
  if (ec) throw IoFailure("cannot create " + (out_dir / "crops").string());

  std::ofstream out(out_dir / "manifest.jsonl", std::ios::binary);
  if (!out) throw IoFailure("cannot write manifest.jsonl");
  for (const auto& [split, uids] :
       {std::pair{std::string("train"), &manifest.train},
        std::pair{std::string("val"), &manifest.val}}) {
    for (const auto& uid : *uids) {
      const BuildingRecord& record = record_by_uid(index, uid);
      write_png(out_dir / "crops" / (uid + "_pre.png"), record.crop_pre);
      write_png(out_dir / "crops" / (uid + "_post.png"), record.crop_post);
      out << record_line(record, split).dump() << "\n";
    }
  }
  if (!out) throw IoFailure("failed writing manifest.jsonl");
}

LoadedManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.jsonl", std::ios::binary);
  if (!in) throw IoFailure("cannot open " + (dir / "manifest.jsonl").string());

  LoadedManifest loaded;
  std::string line;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json entry;
    try {
      entry = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoFailure(std::string("bad manifest line: ") + e.what());
    }
    BuildingRecord record;
    record.uid = entry.at("uid").get<std::string>();
    if (!seen.insert(record.uid).second) {
      throw DuplicateUid("manifest uid \"" + record.uid + "\" appears twice");
    }
    record.scene_id = entry.at("scene_id").get<std::string>();
    record.label = damage_class_from_index(entry.at("label").get<int>());
    record.disaster_type =
        disaster_type_from_tag(entry.at("disaster_type").get<std::string>());
    record.bbox_area = entry.at("bbox_area").get<std::int64_t>();
    record.crop_pre = read_png(dir / entry.at("pre_path").get<std::string>());
    record.crop_post = read_png(dir / entry.at("post_path").get<std::string>());
    const std::string split = entry.at("split").get<std::string>();
    if (split == "train") {
      loaded.split.train.push_back(record.uid);
    } else if (split == "val") {
      loaded.split.val.push_back(record.uid);
    } else {
      throw IoFailure("unknown split \"" + split + "\" in manifest");
    }
    loaded.records.push_back(std::move(record));
  }
  return loaded;
}

std::uint64_t split_checksum(const SplitManifest& manifest) {
  std::uint64_t h = fnv1a64("split");
  for (const auto& uid : manifest.train) h = fnv1a64("t:" + uid, h);
  for (const auto& uid : manifest.val) h = fnv1a64("v:" + uid, h);
  return h;
}

}  // namespace damagelab
