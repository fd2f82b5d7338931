#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "damagelab/gradcam.hpp"
#include "damagelab/ingest.hpp"
#include "damagelab/model.hpp"
#include "damagelab/preprocess.hpp"
#include "damagelab/synthdata.hpp"
#include "damagelab/trainer.hpp"

namespace fs = std::filesystem;
using namespace damagelab;

namespace {

constexpr const char* kVersion = "0.1.0";

int g_log_level = 1;  // 0 quiet, 1 info, 2 debug

void log_info(const std::string& message) {
  if (g_log_level >= 1) std::cerr << message << "\n";
}
void log_debug(const std::string& message) {
  if (g_log_level >= 2) std::cerr << message << "\n";
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return std::string(buf);
}

// Full flag capture for reproducibility; the timestamp is informational and
// never feeds any determinism-checked artifact.
void write_run_meta(const fs::path& out_dir, const std::string& subcommand,
                    const nlohmann::json& flags, std::uint64_t seed) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  const nlohmann::json meta{
      {"subcommand", subcommand},
      {"version", kVersion},
      {"seed", seed},
      {"flags", flags},
      {"timestamp_utc", utc_timestamp()},
  };
  std::ofstream out(out_dir / "run_meta.json", std::ios::binary);
  if (!out) throw IoFailure("cannot write run_meta.json");
  out << meta.dump(2) << "\n";
}

// Weight files may live in the cache directory named by DAMAGE_LAB_CACHE.
fs::path resolve_weights_path(const std::string& given) {
  if (fs::exists(given)) return given;
  if (const char* cache = std::getenv("DAMAGE_LAB_CACHE")) {
    const fs::path candidate = fs::path(cache) / given;
    if (fs::exists(candidate)) return candidate;
  }
  return given;  // let the loader report the failure
}

struct TrainFileConfig {
  ModelConfig model;
  HyperParams hp;
};

TrainFileConfig parse_train_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open config file " + path.string());
  TrainFileConfig config;
  config.model.crop_side = 0;  // derive from the manifest unless set
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidConfig("config line " + std::to_string(line_no) +
                          " is not key = value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "modality") {
        config.model.modality = modality_from_string(value);
      } else if (key == "loss") {
        config.model.loss = loss_kind_from_string(value);
      } else if (key == "backbone") {
        config.model.backbone = backbone_from_string(value);
      } else if (key == "crop_side") {
        config.model.crop_side = std::stoi(value);
      } else if (key == "head_width") {
        config.model.head_width = std::stoi(value);
      } else if (key == "ordinal_decode") {
        config.model.ordinal_decode = decode_rule_from_string(value);
      } else if (key == "learning_rate") {
        config.hp.learning_rate = std::stod(value);
      } else if (key == "batch_size") {
        config.hp.batch_size = std::stoi(value);
      } else if (key == "epochs") {
        config.hp.epochs = std::stoi(value);
      } else if (key == "seed") {
        config.hp.seed = std::stoull(value);
      } else {
        throw InvalidConfig("unknown config key \"" + key + "\"");
      }
    } catch (const std::invalid_argument&) {
      throw InvalidConfig("bad value for \"" + key + "\" on line " +
                          std::to_string(line_no));
    }
  }
  return config;
}

int derive_crop_side(const LoadedManifest& manifest) {
  if (manifest.records.empty()) {
    throw EmptyEvalSet("manifest holds no records");
  }
  return manifest.records.front().crop_post.width;
}

void write_json_file(const fs::path& path, const nlohmann::json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot write " + path.string());
  out << doc.dump(2) << "\n";
}

nlohmann::json confusion_json(const Confusion& confusion) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : confusion) rows.push_back(row);
  return rows;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"building-damage classification laboratory"};
  app.set_version_flag("--version", std::string("damage_lab ") + kVersion);
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--log-level", g_log_level,
                 "verbosity: 0 quiet, 1 info, 2 debug")
      ->default_val(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  SynthParams synth_params;
  std::string synth_out;
  std::vector<double> synth_mix;
  bool synth_report = false;
  synth->add_option("--out", synth_out, "output dataset root")->required();
  synth->add_option("--scenes", synth_params.n_scenes, "number of scenes")
      ->default_val(4);
  synth->add_option("--buildings-per-scene", synth_params.buildings_per_scene,
                    "buildings per scene")
      ->default_val(25);
  synth->add_option("--seed", synth_params.seed, "generator seed")
      ->default_val(0);
  synth->add_option("--image-side", synth_params.image_side,
                    "scene raster side in pixels")
      ->default_val(1024);
  synth->add_option("--class-mix", synth_mix,
                    "four class fractions, e.g. 0.25 0.25 0.25 0.25")
      ->expected(4);
  synth->add_option("--min-box", synth_params.min_box, "minimum box side")
      ->default_val(36);
  synth->add_option("--max-box", synth_params.max_box, "maximum box side")
      ->default_val(96);
  synth->add_option("--noise-floor", synth_params.noise_floor,
                    "background jitter fraction")
      ->default_val(0.02);
  synth->add_option("--unclassified-frac", synth_params.unclassified_frac,
                    "fraction of buildings labeled un-classified")
      ->default_val(0.0);
  synth->add_flag("--type-signal", synth_params.type_signal,
                  "tint corruption per disaster type");
  synth->add_flag("--report", synth_report,
                  "print the per-class separability report");

  // preprocess
  auto* preprocess = app.add_subcommand(
      "preprocess", "crop, filter, balance and split a dataset");
  std::string pre_root, pre_out;
  std::int64_t pre_min_area = kDefaultMinArea;
  int pre_crop_side = kDefaultCropSide;
  int pre_pad = 0;
  double pre_ratio = 0.8;
  std::uint64_t pre_seed = 0;
  preprocess->add_option("--root", pre_root, "dataset root")->required();
  preprocess->add_option("--out", pre_out, "output manifest directory")
      ->required();
  preprocess->add_option("--min-area", pre_min_area,
                         "discard boxes with area below this")
      ->default_val(kDefaultMinArea);
  preprocess->add_option("--crop-side", pre_crop_side, "output crop side")
      ->default_val(kDefaultCropSide);
  preprocess->add_option("--pad", pre_pad, "bbox padding in pixels")
      ->default_val(0);
  preprocess->add_option("--ratio", pre_ratio, "train fraction")
      ->default_val(0.8);
  preprocess->add_option("--seed", pre_seed, "split seed")->default_val(0);

  // train
  auto* train_cmd =
      app.add_subcommand("train", "train one model from a config file");
  std::string train_config_path, train_manifest, train_out;
  std::string train_weights, train_init_from;
  std::int64_t train_seed_override = -1;
  train_cmd->add_option("--config", train_config_path, "key = value config")
      ->required();
  train_cmd->add_option("--manifest", train_manifest, "manifest directory")
      ->required();
  train_cmd->add_option("--out", train_out, "run output directory")
      ->required();
  train_cmd->add_option("--weights", train_weights,
                        "backbone weights archive (pretrained backbone)");
  train_cmd->add_option("--init-from", train_init_from,
                        "warm-start checkpoint; config must match");
  train_cmd->add_option("--seed", train_seed_override,
                        "override the config-file seed");

  // eval
  auto* eval_cmd =
      app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  std::string eval_ckpt, eval_manifest, eval_out, eval_side = "val";
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")
      ->required();
  eval_cmd->add_option("--manifest", eval_manifest, "manifest directory")
      ->required();
  eval_cmd->add_option("--out", eval_out, "output directory")->required();
  eval_cmd->add_option("--split", eval_side, "val, train or all")
      ->default_val("val");

  // compare
  auto* compare_cmd = app.add_subcommand(
      "compare", "train the full 3x3 modality/loss grid on one split");
  std::string cmp_manifest, cmp_out, cmp_backbone = "tiny_resnet";
  std::string cmp_weights;
  HyperParams cmp_hp;
  int cmp_crop_side = 0;
  bool cmp_show_ref = false;
  compare_cmd->add_option("--manifest", cmp_manifest, "manifest directory")
      ->required();
  compare_cmd->add_option("--out", cmp_out, "output directory")->required();
  compare_cmd->add_option("--epochs", cmp_hp.epochs, "epochs per cell")
      ->default_val(100);
  compare_cmd->add_option("--batch-size", cmp_hp.batch_size, "batch size")
      ->default_val(32);
  compare_cmd->add_option("--lr", cmp_hp.learning_rate, "learning rate")
      ->default_val(0.001);
  compare_cmd->add_option("--seed", cmp_hp.seed, "shared seed")->default_val(0);
  compare_cmd->add_option("--backbone", cmp_backbone,
                          "tiny_resnet or resnet18_pretrained")
      ->default_val("tiny_resnet");
  compare_cmd->add_option("--weights", cmp_weights,
                          "backbone weights archive (pretrained backbone)");
  compare_cmd
      ->add_option("--crop-side", cmp_crop_side,
                   "crop side; 0 derives it from the manifest")
      ->default_val(0);
  compare_cmd->add_flag("--show-paper-ref", cmp_show_ref,
                        "append the published reference accuracies");

  // gradcam
  auto* gradcam_cmd = app.add_subcommand(
      "gradcam", "render class activation maps for validation crops");
  std::string cam_ckpt, cam_manifest, cam_out, cam_layer, cam_from =
      "prediction";
  double cam_alpha = 0.5;
  gradcam_cmd->add_option("--checkpoint", cam_ckpt, "checkpoint file")
      ->required();
  gradcam_cmd->add_option("--manifest", cam_manifest, "manifest directory")
      ->required();
  gradcam_cmd->add_option("--out", cam_out, "output directory")->required();
  gradcam_cmd->add_option("--layer", cam_layer,
                          "target layer; defaults to the last conv block");
  gradcam_cmd->add_option("--alpha", cam_alpha, "overlay blend weight")
      ->default_val(0.5);
  gradcam_cmd->add_option("--class-from", cam_from, "label or prediction")
      ->default_val("prediction");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) {
      if (!synth_mix.empty()) {
        for (int c = 0; c < 4; ++c) {
          synth_params.class_mix[static_cast<std::size_t>(c)] =
              synth_mix[static_cast<std::size_t>(c)];
        }
      }
      write_run_meta(synth_out, "synth",
                     {{"out", synth_out},
                      {"scenes", synth_params.n_scenes},
                      {"buildings_per_scene", synth_params.buildings_per_scene},
                      {"image_side", synth_params.image_side},
                      {"class_mix", synth_params.class_mix},
                      {"noise_floor", synth_params.noise_floor},
                      {"min_box", synth_params.min_box},
                      {"max_box", synth_params.max_box},
                      {"unclassified_frac", synth_params.unclassified_frac},
                      {"type_signal", synth_params.type_signal}},
                     synth_params.seed);
      generate(synth_params, synth_out);
      log_info("wrote " + std::to_string(synth_params.n_scenes) +
               " scenes under " + synth_out);
      if (synth_report) {
        const SeparabilityReport report = separability_report(synth_out);
        std::cout << separability_to_string(report);
        write_json_file(fs::path(synth_out) / "separability.json",
                        {{"mean_abs_diff", report.mean_abs_diff},
                         {"counts", report.counts}});
      }
    } else if (*preprocess) {
      write_run_meta(pre_out, "preprocess",
                     {{"root", pre_root},
                      {"out", pre_out},
                      {"min_area", pre_min_area},
                      {"crop_side", pre_crop_side},
                      {"pad", pre_pad},
                      {"ratio", pre_ratio}},
                     pre_seed);
      const SceneInventory inventory = enumerate_scene_pairs(pre_root);
      for (const auto& skip : inventory.skipped) {
        log_info("skipped scene " + skip);
      }
      std::vector<BuildingRecord> records;
      std::vector<BuildingAnnotation> all_annotations;
      for (const auto& scene : inventory.scenes) {
        auto scene_records =
            build_records(scene, pre_min_area, pre_pad, pre_crop_side);
        log_debug(scene.scene_id + ": kept " +
                  std::to_string(scene_records.size()) + " of " +
                  std::to_string(scene.annotations.size()) + " buildings");
        for (auto& record : scene_records) {
          records.push_back(std::move(record));
        }
        all_annotations.insert(all_annotations.end(),
                               scene.annotations.begin(),
                               scene.annotations.end());
      }
      const AreaHistogram histogram = area_histogram(all_annotations);
      const SplitManifest manifest =
          balanced_split(records, pre_ratio, pre_seed);
      write_manifest(manifest, records, pre_out);
      write_json_file(fs::path(pre_out) / "area_histogram.json",
                      {{"bin_width", histogram.bin_width},
                       {"max_area", histogram.max_area},
                       {"bins", histogram.bins},
                       {"above_max", histogram.above_max},
                       {"total", histogram.total}});
      log_info("manifest: " + std::to_string(manifest.train.size()) +
               " train / " + std::to_string(manifest.val.size()) +
               " val records, split checksum " +
               to_hex(split_checksum(manifest)));
    } else if (*train_cmd) {
      TrainFileConfig config = parse_train_config(train_config_path);
      if (train_seed_override >= 0) {
        config.hp.seed = static_cast<std::uint64_t>(train_seed_override);
      }
      const LoadedManifest manifest = read_manifest(train_manifest);
      if (config.model.crop_side == 0) {
        config.model.crop_side = derive_crop_side(manifest);
      }
      write_run_meta(train_out, "train",
                     {{"config", train_config_path},
                      {"manifest", train_manifest},
                      {"out", train_out},
                      {"weights", train_weights},
                      {"init_from", train_init_from},
                      {"model", config_canonical(config.model)},
                      {"epochs", config.hp.epochs},
                      {"batch_size", config.hp.batch_size},
                      {"learning_rate", config.hp.learning_rate}},
                     config.hp.seed);
      std::optional<fs::path> weights;
      if (!train_weights.empty()) {
        weights = resolve_weights_path(train_weights);
      }
      std::optional<fs::path> init_from;
      if (!train_init_from.empty()) init_from = train_init_from;
      const TrainRunReport report =
          train(config.model, config.hp, manifest, train_out, weights,
                init_from, [](int epoch, const EpochStat& stat) {
                  log_debug("epoch " + std::to_string(epoch) + ": loss " +
                            std::to_string(stat.train_loss) + ", val acc " +
                            std::to_string(stat.val_accuracy));
                });
      write_json_file(fs::path(train_out) / "report.json",
                      report_to_json(report));
      std::cout << "best val accuracy " << report.best_val_accuracy
                << " at epoch " << report.best_epoch << "\n";
    } else if (*eval_cmd) {
      Model model = load_checkpoint(eval_ckpt);
      const LoadedManifest manifest = read_manifest(eval_manifest);
      std::vector<BuildingRecord> subset;
      for (const auto& record : manifest.records) {
        const bool in_val =
            std::find(manifest.split.val.begin(), manifest.split.val.end(),
                      record.uid) != manifest.split.val.end();
        if (eval_side == "all" || (eval_side == "val" && in_val) ||
            (eval_side == "train" && !in_val)) {
          subset.push_back(record);
        }
      }
      write_run_meta(eval_out, "eval",
                     {{"checkpoint", eval_ckpt},
                      {"manifest", eval_manifest},
                      {"split", eval_side}},
                     0);
      const EvalResult result = evaluate(model, subset);
      write_json_file(fs::path(eval_out) / "eval.json",
                      {{"accuracy", result.accuracy},
                       {"confusion", confusion_json(result.confusion)},
                       {"records", subset.size()},
                       {"split", eval_side},
                       {"config_hash", config_hash(model.config())}});
      std::cout << "accuracy " << result.accuracy << " on " << subset.size()
                << " records\n";
    } else if (*compare_cmd) {
      const LoadedManifest manifest = read_manifest(cmp_manifest);
      if (cmp_crop_side == 0) cmp_crop_side = derive_crop_side(manifest);
      write_run_meta(cmp_out, "compare",
                     {{"manifest", cmp_manifest},
                      {"out", cmp_out},
                      {"epochs", cmp_hp.epochs},
                      {"batch_size", cmp_hp.batch_size},
                      {"learning_rate", cmp_hp.learning_rate},
                      {"backbone", cmp_backbone},
                      {"crop_side", cmp_crop_side},
                      {"show_paper_ref", cmp_show_ref}},
                     cmp_hp.seed);
      std::optional<fs::path> weights;
      if (!cmp_weights.empty()) weights = resolve_weights_path(cmp_weights);
      const ComparisonGrid grid = compare_grid(
          cmp_hp, manifest, backbone_from_string(cmp_backbone), cmp_crop_side,
          cmp_out, weights,
          [&](InputModality modality, LossKind loss,
              const TrainRunReport& report) {
            write_json_file(fs::path(cmp_out) /
                                cell_directory_name(modality, loss) /
                                "report.json",
                            report_to_json(report));
            log_info("cell " + cell_directory_name(modality, loss) +
                     ": best val accuracy " +
                     std::to_string(report.best_val_accuracy));
          });
      const std::string markdown = render_grid_markdown(grid, cmp_show_ref);
      std::ofstream grid_out(fs::path(cmp_out) / "grid.md", std::ios::binary);
      if (!grid_out) throw IoFailure("cannot write grid.md");
      grid_out << markdown;
      std::cout << markdown;
    } else if (*gradcam_cmd) {
      Model model = load_checkpoint(cam_ckpt);
      const LoadedManifest manifest = read_manifest(cam_manifest);
      if (cam_layer.empty()) cam_layer = default_cam_layer(model);
      write_run_meta(cam_out, "gradcam",
                     {{"checkpoint", cam_ckpt},
                      {"manifest", cam_manifest},
                      {"layer", cam_layer},
                      {"alpha", cam_alpha},
                      {"class_from", cam_from},
                      {"colormap", kCamColormapName}},
                     0);
      const auto written =
          cam_batch(model, manifest, cam_out, cam_layer, cam_alpha,
                    cam_target_from_string(cam_from));
      std::cout << "wrote " << written.size() << " images under " << cam_out
                << "\n";
    }
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
