#pragma once

#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "damagelab/types.hpp"

namespace damagelab {

constexpr std::int64_t kDefaultMinArea = 2000;
constexpr int kDefaultCropSide = 224;

// Keeps annotations whose bounding box area is >= min_area (strictly smaller
// ones are discarded) and whose label is not "unclassified". Order preserved.
std::vector<std::pair<BuildingAnnotation, BBox>> filter_buildings(
    std::span<const BuildingAnnotation> annotations,
    std::int64_t min_area = kDefaultMinArea);

// Distribution of bounding-box areas over all parsed buildings, before any
// filtering. Areas past the last bin edge are counted separately, the same
// outlier cut the published histogram applies at 8000 px^2.
struct AreaHistogram {
  std::int64_t bin_width = 250;
  std::int64_t max_area = 8000;
  std::vector<std::int64_t> bins;  // max_area / bin_width entries
  std::int64_t above_max = 0;
  std::int64_t total = 0;
};

AreaHistogram area_histogram(std::span<const BuildingAnnotation> annotations,
                             std::int64_t bin_width = 250,
                             std::int64_t max_area = 8000);

// Extracts bbox expanded by `pad`, clamped to the image, resampled to
// out_side x out_side with bilinear interpolation.
ImageU8 crop_building(const ImageU8& image, const BBox& bbox, int pad,
                      int out_side);

// Builds records for one scene: filter, crop pre and post, attach labels.
std::vector<BuildingRecord> build_records(const ScenePair& scene,
                                          std::int64_t min_area, int pad,
                                          int out_side);

// Downsamples every class to the minority count m, then assigns
// floor(ratio*m) of each class to train and the rest to val. Deterministic
// in (records, ratio, seed) and invariant to input order.
SplitManifest balanced_split(std::span<const BuildingRecord> records,
                             double ratio, std::uint64_t seed);

// Persists crops (lossless PNG) plus manifest.jsonl under out_dir.
void write_manifest(const SplitManifest& manifest,
                    std::span<const BuildingRecord> records,
                    const std::filesystem::path& out_dir);

struct LoadedManifest {
  std::vector<BuildingRecord> records;  // train records first, then val
  SplitManifest split;
};

LoadedManifest read_manifest(const std::filesystem::path& dir);

std::uint64_t split_checksum(const SplitManifest& manifest);

}  // namespace damagelab
