#include "damagelab/types.hpp"

#include <array>

namespace damagelab {

namespace {

const std::array<std::string, kNumClasses> kClassLabels = {
    "no-damage", "minor-damage", "major-damage", "destroyed"};

const std::array<std::string, kNumDisasterTypes> kDisasterTags = {
    "earthquake", "fire", "flooding", "tsunami", "volcano", "wind"};

}  // namespace

DamageClass damage_class_from_index(int index) {
  if (index < 0 || index >= kNumClasses) {
    throw InvalidConfig("damage class index out of range: " +
                        std::to_string(index));
  }
  return static_cast<DamageClass>(index);
}

DamageClass damage_class_from_label(const std::string& label) {
  for (int i = 0; i < kNumClasses; ++i) {
    if (kClassLabels[i] == label) return static_cast<DamageClass>(i);
  }
  throw InvalidConfig("not a damage class label: \"" + label + "\"");
}

const std::string& damage_class_label(DamageClass c) {
  return kClassLabels[static_cast<std::size_t>(class_index(c))];
}

DisasterType disaster_type_from_tag(const std::string& tag) {
  for (int i = 0; i < kNumDisasterTypes; ++i) {
    if (kDisasterTags[i] == tag) return static_cast<DisasterType>(i);
  }
  throw UnknownDisasterType("\"" + tag + "\" is not a known disaster type");
}

const std::string& disaster_type_tag(DisasterType t) {
  return kDisasterTags[static_cast<std::size_t>(t)];
}

}  // namespace damagelab
