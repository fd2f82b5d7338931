#pragma once

#include <array>
#include <filesystem>
#include <string>

#include "damagelab/types.hpp"

namespace damagelab {

struct SynthParams {
  int n_scenes = 4;
  int buildings_per_scene = 25;
  int image_side = 1024;
  std::array<double, 4> class_mix = {0.25, 0.25, 0.25, 0.25};
  double noise_floor = 0.02;  // background jitter amplitude, fraction of 255
  std::uint64_t seed = 0;
  int min_box = 36;  // sides; 36^2 deliberately falls below the area filter
  int max_box = 96;
  double unclassified_frac = 0.0;
  bool type_signal = false;  // tint corruption per disaster type
};

// Emits the ingest dataset layout (images/, labels/) plus synth_log.json
// recording every generated building. Byte-identical for equal params.
//
// Damage is drawn per building in the post image only: class 0 leaves the
// box untouched, class 1 adds mild speckle, class 2 strong speckle plus a
// partial occlusion, class 3 replaces the box with rubble texture.
void generate(const SynthParams& params, const std::filesystem::path& out_root);

struct SeparabilityReport {
  std::array<double, 4> mean_abs_diff{};  // per class, over building boxes
  std::array<std::int64_t, 4> counts{};
};

// Recomputed from the stored images, independent of generator internals.
SeparabilityReport separability_report(const std::filesystem::path& root);

std::string separability_to_string(const SeparabilityReport& report);

}  // namespace damagelab
