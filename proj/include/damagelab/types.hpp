#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "damagelab/common.hpp"
#include "damagelab/image.hpp"

namespace damagelab {

// Joint Damage Scale level, ordinal 0..3. "unclassified" buildings are not
// representable here; they are filtered out upstream while still strings.
enum class DamageClass : int {
  kNoDamage = 0,
  kMinorDamage = 1,
  kMajorDamage = 2,
  kDestroyed = 3,
};

constexpr int kNumClasses = 4;
constexpr const char* kUnclassifiedLabel = "unclassified";

inline int class_index(DamageClass c) { return static_cast<int>(c); }

DamageClass damage_class_from_index(int index);
DamageClass damage_class_from_label(const std::string& label);
const std::string& damage_class_label(DamageClass c);

// Closed disaster-type enumeration; order is alphabetical and fixed because
// it defines the one-hot layout.
enum class DisasterType : int {
  kEarthquake = 0,
  kFire = 1,
  kFlooding = 2,
  kTsunami = 3,
  kVolcano = 4,
  kWind = 5,
};

constexpr int kNumDisasterTypes = 6;

DisasterType disaster_type_from_tag(const std::string& tag);
const std::string& disaster_type_tag(DisasterType t);

inline Eigen::Matrix<float, 6, 1> disaster_one_hot(DisasterType t) {
  Eigen::Matrix<float, 6, 1> v = Eigen::Matrix<float, 6, 1>::Zero();
  v(static_cast<int>(t)) = 1.0f;
  return v;
}

struct BBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  int width() const { return x_max - x_min; }
  int height() const { return y_max - y_min; }
  std::int64_t area() const {
    return static_cast<std::int64_t>(width()) * height();
  }
};

struct BuildingAnnotation {
  std::vector<std::array<double, 2>> polygon;  // pixel coordinates
  std::string raw_label;  // verbatim label; may be "unclassified"
  std::string uid;
};

struct ScenePair {
  ImageU8 pre_image;
  ImageU8 post_image;
  std::vector<BuildingAnnotation> annotations;
  DisasterType disaster_type = DisasterType::kEarthquake;
  std::string scene_id;
};

// One training/validation observation: the paired crops plus provenance.
struct BuildingRecord {
  ImageU8 crop_pre;
  ImageU8 crop_post;
  DamageClass label = DamageClass::kNoDamage;
  DisasterType disaster_type = DisasterType::kEarthquake;
  std::int64_t bbox_area = 0;
  std::string scene_id;
  std::string uid;
};

struct SplitManifest {
  std::vector<std::string> train;  // record uids
  std::vector<std::string> val;
  std::uint64_t seed = 0;
  double ratio = 0.8;
};

}  // namespace damagelab
