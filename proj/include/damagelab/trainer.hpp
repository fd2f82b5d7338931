#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "damagelab/model.hpp"
#include "damagelab/preprocess.hpp"

namespace damagelab {

struct HyperParams {
  double learning_rate = 0.001;
  int batch_size = 32;
  int epochs = 100;
  std::uint64_t seed = 0;
  // Adam moment decay and stabilizer defaults.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

void validate(const HyperParams& hp);

using Confusion = std::array<std::array<std::int64_t, kNumClasses>, kNumClasses>;

struct EpochStat {
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainRunReport {
  std::vector<EpochStat> per_epoch;
  double best_val_accuracy = 0.0;
  int best_epoch = 0;  // 1-based
  double final_val_accuracy = 0.0;
  Confusion confusion{};  // at the best epoch
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string split_checksum;
  std::string checkpoint_file;  // relative to the run directory
  std::string checkpoint_fnv64;
};

nlohmann::json report_to_json(const TrainRunReport& report);

class Adam {
 public:
  Adam(std::vector<nn::Parameter*> params, const HyperParams& hp);
  void step();

 private:
  std::vector<nn::Parameter*> params_;
  std::vector<Eigen::VectorXf> m_;
  std::vector<Eigen::VectorXf> v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// Raw scores -> class via the loss-appropriate rule (argmax, round-clamp,
// or threshold scan).
DamageClass decode_scores(const Eigen::VectorXf& scores, LossKind loss,
                          OrdinalDecodeRule rule);

// Mean loss over the batch and (optionally) its gradient w.r.t. the raw
// scores. Loss math runs in double, gradients return as float.
double batch_loss(LossKind loss, const Eigen::MatrixXf& scores,
                  std::span<const DamageClass> targets,
                  Eigen::MatrixXf* dscores);

struct EvalResult {
  double accuracy = 0.0;
  Confusion confusion{};
};

using Predictor = std::function<DamageClass(const BuildingRecord&)>;

EvalResult evaluate(const Predictor& predictor,
                    std::span<const BuildingRecord> records);
EvalResult evaluate(Model& model, std::span<const BuildingRecord> records,
                    int batch_size = 64);

using EpochCallback = std::function<void(int epoch, const EpochStat&)>;

// Seeded mini-batch Adam over the manifest's train side, per-epoch
// validation, best-checkpoint tracking. Writes best.ckpt under out_dir.
TrainRunReport train(
    const ModelConfig& config, const HyperParams& hp,
    const LoadedManifest& manifest, const std::filesystem::path& out_dir,
    const std::optional<std::filesystem::path>& backbone_weights = {},
    const std::optional<std::filesystem::path>& init_from = {},
    const EpochCallback& progress = {});

inline constexpr std::array<InputModality, 3> kGridRowOrder = {
    InputModality::kPostOnly, InputModality::kPrePost,
    InputModality::kPrePostType};
inline constexpr std::array<LossKind, 3> kGridColumnOrder = {
    LossKind::kMse, LossKind::kCrossEntropy, LossKind::kOrdinalCrossEntropy};

struct ComparisonGrid {
  std::array<std::array<TrainRunReport, 3>, 3> cells;  // [modality][loss]
};

using CellCallback =
    std::function<void(InputModality, LossKind, const TrainRunReport&)>;

// Trains all nine modality x loss combinations on one shared split/seed.
ComparisonGrid compare_grid(
    const HyperParams& hp, const LoadedManifest& manifest,
    BackboneKind backbone, int crop_side, const std::filesystem::path& out_dir,
    const std::optional<std::filesystem::path>& backbone_weights = {},
    const CellCallback& cell_done = {});

std::string render_grid_markdown(const ComparisonGrid& grid,
                                 bool show_paper_ref);

std::string cell_directory_name(InputModality modality, LossKind loss);

}  // namespace damagelab
