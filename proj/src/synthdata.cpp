#include "damagelab/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "damagelab/image.hpp"
#include "damagelab/ingest.hpp"

namespace damagelab {

namespace {

constexpr int kUnclassifiedSlot = 4;  // after the four damage classes

std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

void validate(const SynthParams& p) {
  if (p.n_scenes < 1 || p.buildings_per_scene < 1) {
    throw InvalidConfig("need at least one scene and one building per scene");
  }
  if (p.image_side < 64) throw InvalidConfig("image_side must be >= 64");
  if (p.min_box < 8 || p.max_box < p.min_box ||
      p.max_box > p.image_side / 2) {
    throw InvalidConfig("box sides must satisfy 8 <= min <= max <= side/2");
  }
  const double mix_sum =
      std::accumulate(p.class_mix.begin(), p.class_mix.end(), 0.0);
  if (std::abs(mix_sum - 1.0) > 1e-9) {
    throw InvalidConfig("class_mix must sum to 1");
  }
  if (p.unclassified_frac < 0.0 || p.unclassified_frac >= 1.0) {
    throw InvalidConfig("unclassified_frac must lie in [0,1)");
  }
}

// Exact largest-remainder allocation of `total` buildings over the four
// classes (plus the optional unclassified share), shuffled once globally.
std::vector<int> allocate_labels(const SynthParams& p, Rng& rng) {
  const int total = p.n_scenes * p.buildings_per_scene;
  const int unclassified =
      static_cast<int>(std::floor(p.unclassified_frac * total + 0.5));
  const int classified = total - unclassified;

  std::array<int, 4> counts{};
  std::array<double, 4> remainders{};
  int assigned = 0;
  for (int c = 0; c < 4; ++c) {
    const double share = p.class_mix[static_cast<std::size_t>(c)] * classified;
    counts[static_cast<std::size_t>(c)] = static_cast<int>(std::floor(share));
    remainders[static_cast<std::size_t>(c)] =
        share - std::floor(share);
    assigned += counts[static_cast<std::size_t>(c)];
  }
  while (assigned < classified) {
    int best = 0;
    for (int c = 1; c < 4; ++c) {
      if (remainders[static_cast<std::size_t>(c)] >
          remainders[static_cast<std::size_t>(best)]) {
        best = c;
      }
    }
    remainders[static_cast<std::size_t>(best)] = -1.0;
    counts[static_cast<std::size_t>(best)]++;
    ++assigned;
  }

  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(total));
  for (int c = 0; c < 4; ++c) {
    labels.insert(labels.end(), counts[static_cast<std::size_t>(c)], c);
  }
  labels.insert(labels.end(), unclassified, kUnclassifiedSlot);
  rng.shuffle(labels);
  return labels;
}

struct Box {
  int x0, y0, x1, y1;
  bool overlaps(const Box& o, int margin) const {
    return x0 - margin < o.x1 && o.x0 - margin < x1 && y0 - margin < o.y1 &&
           o.y0 - margin < y1;
  }
};

void paint_background(ImageU8& img, double noise_floor, Rng& rng) {
  // Coarse value-noise terrain, bilinearly smoothed, plus per-pixel jitter.
  const int cell = 32;
  const int gw = img.width / cell + 2;
  const int gh = img.height / cell + 2;
  std::vector<double> grid(static_cast<std::size_t>(gw) * gh);
  for (auto& g : grid) g = rng.uniform();
  const double jitter = noise_floor * 255.0;
  for (int y = 0; y < img.height; ++y) {
    const double gy = static_cast<double>(y) / cell;
    const int iy = static_cast<int>(gy);
    const double fy = gy - iy;
    for (int x = 0; x < img.width; ++x) {
      const double gx = static_cast<double>(x) / cell;
      const int ix = static_cast<int>(gx);
      const double fx = gx - ix;
      const double v00 = grid[static_cast<std::size_t>(iy) * gw + ix];
      const double v01 = grid[static_cast<std::size_t>(iy) * gw + ix + 1];
      const double v10 = grid[static_cast<std::size_t>(iy + 1) * gw + ix];
      const double v11 = grid[static_cast<std::size_t>(iy + 1) * gw + ix + 1];
      const double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                       fy * ((1 - fx) * v10 + fx * v11);
      const double n = (rng.uniform() - 0.5) * 2.0 * jitter;
      img.at(y, x, 0) = clamp_u8(70.0 + 50.0 * v + n);
      img.at(y, x, 1) = clamp_u8(88.0 + 55.0 * v + n);
      img.at(y, x, 2) = clamp_u8(58.0 + 40.0 * v + n);
    }
  }
}

void paint_roof(ImageU8& img, const Box& b, Rng& rng) {
  const std::array<int, 3> color = {
      static_cast<int>(rng.uniform_int(90, 230)),
      static_cast<int>(rng.uniform_int(90, 230)),
      static_cast<int>(rng.uniform_int(90, 230))};
  for (int y = b.y0; y < b.y1; ++y) {
    for (int x = b.x0; x < b.x1; ++x) {
      const bool border =
          y == b.y0 || y == b.y1 - 1 || x == b.x0 || x == b.x1 - 1;
      const bool ridge = (y - b.y0) % 8 == 4;
      double shade = border ? 0.45 : (ridge ? 0.8 : 1.0);
      for (int c = 0; c < 3; ++c) {
        img.at(y, x, c) =
            clamp_u8(shade * color[static_cast<std::size_t>(c)]);
      }
    }
  }
}

void add_speckle(ImageU8& img, const Box& b, double sigma,
                 const std::array<double, 3>& tint, Rng& rng) {
  for (int y = b.y0; y < b.y1; ++y) {
    for (int x = b.x0; x < b.x1; ++x) {
      const double n = rng.normal() * sigma;
      for (int c = 0; c < 3; ++c) {
        img.at(y, x, c) = clamp_u8(img.at(y, x, c) + n +
                                   tint[static_cast<std::size_t>(c)]);
      }
    }
  }
}

void paint_rubble(ImageU8& img, const Box& b,
                  const std::array<double, 3>& tint, Rng& rng) {
  for (int y = b.y0; y < b.y1; ++y) {
    for (int x = b.x0; x < b.x1; ++x) {
      const double base = 70.0 + rng.uniform() * 90.0;
      const double n = rng.normal() * 18.0;
      img.at(y, x, 0) = clamp_u8(base + n + 12.0 + tint[0]);
      img.at(y, x, 1) = clamp_u8(base + n + tint[1]);
      img.at(y, x, 2) = clamp_u8(base + n - 10.0 + tint[2]);
    }
  }
}

void paint_occlusion(ImageU8& img, const Box& b, Rng& rng) {
  // Covers roughly half of each axis at a random corner.
  const int w = std::max(1, (b.x1 - b.x0) * 3 / 5);
  const int h = std::max(1, (b.y1 - b.y0) * 3 / 5);
  const int x0 = rng.uniform_int(0, 1) == 0 ? b.x0 : b.x1 - w;
  const int y0 = rng.uniform_int(0, 1) == 0 ? b.y0 : b.y1 - h;
  for (int y = y0; y < y0 + h; ++y) {
    for (int x = x0; x < x0 + w; ++x) {
      const double n = rng.normal() * 10.0;
      img.at(y, x, 0) = clamp_u8(64.0 + n);
      img.at(y, x, 1) = clamp_u8(58.0 + n);
      img.at(y, x, 2) = clamp_u8(52.0 + n);
    }
  }
}

std::string wkt_rect(const Box& b) {
  std::ostringstream out;
  out << "POLYGON ((" << b.x0 << " " << b.y0 << ", " << b.x1 << " " << b.y0
      << ", " << b.x1 << " " << b.y1 << ", " << b.x0 << " " << b.y1 << ", "
      << b.x0 << " " << b.y0 << "))";
  return out.str();
}

const char* label_string(int slot) {
  switch (slot) {
    case 0: return "no-damage";
    case 1: return "minor-damage";
    case 2: return "major-damage";
    case 3: return "destroyed";
    default: return "un-classified";
  }
}

}  // namespace

void generate(const SynthParams& params, const std::filesystem::path& out_root) {
  validate(params);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_root / "images", ec);
  fs::create_directories(out_root / "labels", ec);
  if (ec) throw IoFailure("cannot create dataset tree under " +
                          out_root.string());

  Rng label_rng(derive_seed(params.seed, 0x6c6162656cull));
  const std::vector<int> labels = allocate_labels(params, label_rng);

  nlohmann::json log_buildings = nlohmann::json::array();

  for (int s = 0; s < params.n_scenes; ++s) {
    Rng rng(derive_seed(params.seed, 1000 + static_cast<std::uint64_t>(s)));
    char id_buf[32];
    std::snprintf(id_buf, sizeof(id_buf), "synth_%04d", s);
    const std::string scene_id(id_buf);
    const auto disaster =
        static_cast<DisasterType>(rng.uniform_int(0, kNumDisasterTypes - 1));

    ImageU8 pre(params.image_side, params.image_side, 3);
    paint_background(pre, params.noise_floor, rng);

    // Non-overlapping placement with bounded retries.
    std::vector<Box> boxes;
    for (int b = 0; b < params.buildings_per_scene; ++b) {
      bool placed = false;
      for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
        const int w =
            static_cast<int>(rng.uniform_int(params.min_box, params.max_box));
        const int h =
            static_cast<int>(rng.uniform_int(params.min_box, params.max_box));
        const int x0 =
            static_cast<int>(rng.uniform_int(2, params.image_side - w - 2));
        const int y0 =
            static_cast<int>(rng.uniform_int(2, params.image_side - h - 2));
        const Box candidate{x0, y0, x0 + w, y0 + h};
        placed = std::none_of(boxes.begin(), boxes.end(), [&](const Box& o) {
          return candidate.overlaps(o, 3);
        });
        if (placed) boxes.push_back(candidate);
      }
      if (!placed) {
        throw InfeasiblePacking(
            "cannot place building " + std::to_string(b) + " of scene " +
            scene_id + " without overlap; reduce density or box sizes");
      }
    }
    for (const Box& box : boxes) paint_roof(pre, box, rng);

    ImageU8 post = pre;
    std::array<double, 3> tint = {0.0, 0.0, 0.0};
    if (params.type_signal) {
      // Small per-type channel shift so the one-hot carries real signal.
      const int t = static_cast<int>(disaster);
      tint = {6.0 * ((t % 3) - 1), 6.0 * (((t + 1) % 3) - 1),
              6.0 * (((t + 2) % 3) - 1)};
    }

    nlohmann::json features = nlohmann::json::array();
    for (int b = 0; b < params.buildings_per_scene; ++b) {
      const Box& box = boxes[static_cast<std::size_t>(b)];
      const int slot =
          labels[static_cast<std::size_t>(s * params.buildings_per_scene + b)];
      switch (slot) {
        case 0:
          break;
        case 1:
          add_speckle(post, box, 14.0, tint, rng);
          break;
        case 2:
          add_speckle(post, box, 38.0, tint, rng);
          paint_occlusion(post, box, rng);
          break;
        case 3:
          paint_rubble(post, box, tint, rng);
          break;
        default:
          add_speckle(post, box, 8.0, tint, rng);
          break;
      }

      char uid_buf[16];
      std::snprintf(uid_buf, sizeof(uid_buf), "b%03d", b);
      features.push_back(nlohmann::json{
          {"wkt", wkt_rect(box)},
          {"properties",
           {{"feature_type", "building"},
            {"subtype", label_string(slot)},
            {"uid", uid_buf}}},
      });
      log_buildings.push_back(nlohmann::json{
          {"uid", scene_id + "_" + uid_buf},
          {"scene_id", scene_id},
          {"label", label_string(slot)},
          {"x0", box.x0},
          {"y0", box.y0},
          {"x1", box.x1},
          {"y1", box.y1},
          {"area",
           static_cast<std::int64_t>(box.x1 - box.x0) * (box.y1 - box.y0)},
      });
    }

    const nlohmann::json label_doc{
        {"features", {{"xy", features}}},
        {"metadata",
         {{"disaster_type", disaster_type_tag(disaster)},
          {"scene_id", scene_id}}},
    };

    write_png(out_root / "images" / (scene_id + "_pre_disaster.png"), pre);
    write_png(out_root / "images" / (scene_id + "_post_disaster.png"), post);
    std::ofstream label_out(out_root / "labels" /
                                (scene_id + "_post_disaster.json"),
                            std::ios::binary);
    if (!label_out) throw IoFailure("cannot write label file for " + scene_id);
    label_out << label_doc.dump(2) << "\n";
  }

  const nlohmann::json log{
      {"buildings", log_buildings},
      {"params",
       {{"n_scenes", params.n_scenes},
        {"buildings_per_scene", params.buildings_per_scene},
        {"image_side", params.image_side},
        {"class_mix", params.class_mix},
        {"noise_floor", params.noise_floor},
        {"seed", params.seed},
        {"min_box", params.min_box},
        {"max_box", params.max_box},
        {"unclassified_frac", params.unclassified_frac},
        {"type_signal", params.type_signal}}},
  };
  std::ofstream log_out(out_root / "synth_log.json", std::ios::binary);
  if (!log_out) throw IoFailure("cannot write synth_log.json");
  log_out << log.dump(2) << "\n";
}

SeparabilityReport separability_report(const std::filesystem::path& root) {
  const SceneInventory inventory = enumerate_scene_pairs(root);
  SeparabilityReport report;
  std::array<double, 4> sums{};
  for (const auto& scene : inventory.scenes) {
    for (const auto& annotation : scene.annotations) {
      if (annotation.raw_label == kUnclassifiedLabel) continue;
      const DamageClass label = damage_class_from_label(annotation.raw_label);
      const BBox box = polygon_bbox(annotation.polygon);
      const int x0 = std::clamp(box.x_min, 0, scene.pre_image.width);
      const int y0 = std::clamp(box.y_min, 0, scene.pre_image.height);
      const int x1 = std::clamp(box.x_max, 0, scene.pre_image.width);
      const int y1 = std::clamp(box.y_max, 0, scene.pre_image.height);
      if (x1 <= x0 || y1 <= y0) continue;
      double acc = 0.0;
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          for (int c = 0; c < 3; ++c) {
            acc += std::abs(static_cast<double>(scene.pre_image.at(y, x, c)) -
                            static_cast<double>(scene.post_image.at(y, x, c)));
          }
        }
      }
      const auto slot = static_cast<std::size_t>(class_index(label));
      sums[slot] += acc / (3.0 * (x1 - x0) * (y1 - y0));
      report.counts[slot]++;
    }
  }
  for (std::size_t c = 0; c < 4; ++c) {
    report.mean_abs_diff[c] =
        report.counts[c] > 0 ? sums[c] / static_cast<double>(report.counts[c])
                             : 0.0;
  }
  return report;
}

std::string separability_to_string(const SeparabilityReport& report) {
  std::ostringstream out;
  out << "per-class mean |pre - post| over building boxes\n";
  for (std::size_t c = 0; c < 4; ++c) {
    out << "  class " << c << ": " << report.mean_abs_diff[c] << " ("
        << report.counts[c] << " buildings)\n";
  }
  return out.str();
}

}  // namespace damagelab
