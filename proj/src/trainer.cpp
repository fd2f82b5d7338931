#include "damagelab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace damagelab {

void validate(const HyperParams& hp) {
  if (hp.batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
  if (hp.epochs < 1) throw InvalidConfig("epochs must be >= 1");
  if (!(hp.learning_rate > 0.0)) {
    throw InvalidConfig("learning_rate must be positive");
  }
}

nlohmann::json report_to_json(const TrainRunReport& report) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& stat : report.per_epoch) {
    epochs.push_back({{"train_loss", stat.train_loss},
                      {"val_accuracy", stat.val_accuracy}});
  }
  nlohmann::json confusion = nlohmann::json::array();
  for (const auto& row : report.confusion) {
    confusion.push_back(row);
  }
  return nlohmann::json{
      {"best_epoch", report.best_epoch},
      {"best_val_accuracy", report.best_val_accuracy},
      {"checkpoint", report.checkpoint_file},
      {"checkpoint_fnv64", report.checkpoint_fnv64},
      {"config_hash", report.config_hash},
      {"confusion", confusion},
      {"final_val_accuracy", report.final_val_accuracy},
      {"per_epoch", epochs},
      {"seed", report.seed},
      {"split_checksum", report.split_checksum},
  };
}

Adam::Adam(std::vector<nn::Parameter*> params, const HyperParams& hp)
    : params_(std::move(params)),
      lr_(hp.learning_rate),
      beta1_(hp.beta1),
      beta2_(hp.beta2),
      eps_(hp.eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto* p : params_) {
    m_.push_back(Eigen::VectorXf::Zero(p->value.size()));
    v_.push_back(Eigen::VectorXf::Zero(p->value.size()));
  }
}

void Adam::step() {
  ++t_;
  const auto b1 = static_cast<float>(beta1_);
  const auto b2 = static_cast<float>(beta2_);
  const auto correction1 =
      static_cast<float>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
  const auto correction2 =
      static_cast<float>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
  const auto lr = static_cast<float>(lr_);
  const auto eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    m_[i] = b1 * m_[i] + (1.0f - b1) * p.grad;
    v_[i] = b2 * v_[i].array() + (1.0f - b2) * p.grad.array().square();
    p.value.array() -= lr * (m_[i].array() / correction1) /
                       ((v_[i].array() / correction2).sqrt() + eps);
  }
}

DamageClass decode_scores(const Eigen::VectorXf& scores, LossKind loss,
                          OrdinalDecodeRule rule) {
  switch (loss) {
    case LossKind::kCrossEntropy: {
      Eigen::Index best = 0;
      scores.maxCoeff(&best);  // ties resolve to the lowest index
      return damage_class_from_index(static_cast<int>(best));
    }
    case LossKind::kMse:
      return losses::mse_decode(static_cast<double>(scores(0)));
    case LossKind::kOrdinalCrossEntropy: {
      Eigen::Matrix<double, Eigen::Dynamic, 1> sig(3);
      for (int k = 0; k < 3; ++k) {
        sig(k) = losses::sigmoid(static_cast<double>(scores(k)));
      }
      return losses::ordinal_decode<double>(sig, rule);
    }
  }
  throw InvalidConfig("unknown loss kind");
}

double batch_loss(LossKind loss, const Eigen::MatrixXf& scores,
                  std::span<const DamageClass> targets,
                  Eigen::MatrixXf* dscores) {
  const Eigen::MatrixXd scores_d = scores.cast<double>();
  Eigen::MatrixXd grad_d;
  double value = 0.0;
  switch (loss) {
    case LossKind::kCrossEntropy:
      value = losses::cross_entropy_batch<double>(
          scores_d, targets, dscores != nullptr ? &grad_d : nullptr);
      break;
    case LossKind::kOrdinalCrossEntropy:
      value = losses::ordinal_ce_batch<double>(
          scores_d, targets, dscores != nullptr ? &grad_d : nullptr);
      break;
    case LossKind::kMse: {
      if (scores.cols() != 1) {
        throw ShapeMismatch("mse head must emit one score per observation");
      }
      std::vector<double> preds(static_cast<std::size_t>(scores.rows()));
      for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        preds[static_cast<std::size_t>(i)] = scores_d(i, 0);
      }
      std::vector<double> grad;
      value = losses::mse_loss<double>(preds, targets,
                                       dscores != nullptr ? &grad : nullptr);
      if (dscores != nullptr) {
        grad_d.resize(scores.rows(), 1);
        for (Eigen::Index i = 0; i < scores.rows(); ++i) {
          grad_d(i, 0) = grad[static_cast<std::size_t>(i)];
        }
      }
      break;
    }
  }
  if (dscores != nullptr) *dscores = grad_d.cast<float>();
  return value;
}

EvalResult evaluate(const Predictor& predictor,
                    std::span<const BuildingRecord> records) {
  if (records.empty()) throw EmptyEvalSet("no records to evaluate");
  EvalResult result;
  std::int64_t correct = 0;
  for (const auto& record : records) {
    const DamageClass predicted = predictor(record);
    const int t = class_index(record.label);
    const int p = class_index(predicted);
    result.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)]++;
    if (t == p) ++correct;
  }
  result.accuracy =
      static_cast<double>(correct) / static_cast<double>(records.size());
  return result;
}

namespace {

struct Batch {
  nn::Tensor images;
  Eigen::MatrixXf aux;
  std::vector<DamageClass> targets;
};

Batch encode_batch(std::span<const BuildingRecord* const> records,
                   InputModality modality, int crop_side) {
  Batch batch;
  const int n = static_cast<int>(records.size());
  batch.images = nn::Tensor(n, input_channels(modality), crop_side, crop_side);
  batch.aux = Eigen::MatrixXf::Zero(n, 6);
  batch.targets.reserve(records.size());
  for (int i = 0; i < n; ++i) {
    const BuildingRecord& record = *records[static_cast<std::size_t>(i)];
    encode_into(batch.images, i, record, modality);
    if (has_type_aux(modality)) {
      batch.aux.row(i) = disaster_one_hot(record.disaster_type).transpose();
    }
    batch.targets.push_back(record.label);
  }
  return batch;
}

}  // namespace

EvalResult evaluate(Model& model, std::span<const BuildingRecord> records,
                    int batch_size) {
  if (records.empty()) throw EmptyEvalSet("no records to evaluate");
  const ModelConfig& config = model.config();
  EvalResult result;
  std::int64_t correct = 0;
  std::vector<const BuildingRecord*> window;
  for (std::size_t start = 0; start < records.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop =
        std::min(records.size(), start + static_cast<std::size_t>(batch_size));
    window.clear();
    for (std::size_t i = start; i < stop; ++i) window.push_back(&records[i]);
    Batch batch = encode_batch(window, config.modality, config.crop_side);
    const Eigen::MatrixXf scores =
        model.forward(batch.images, batch.aux, /*training=*/false);
    for (Eigen::Index row = 0; row < scores.rows(); ++row) {
      const DamageClass predicted =
          decode_scores(scores.row(row).transpose(), config.loss,
                        config.ordinal_decode);
      const int t = class_index(batch.targets[static_cast<std::size_t>(row)]);
      const int p = class_index(predicted);
      result
          .confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)]++;
      if (t == p) ++correct;
    }
  }
  result.accuracy =
      static_cast<double>(correct) / static_cast<double>(records.size());
  return result;
}

TrainRunReport train(const ModelConfig& config, const HyperParams& hp,
                     const LoadedManifest& manifest,
                     const std::filesystem::path& out_dir,
                     const std::optional<std::filesystem::path>& backbone_weights,
                     const std::optional<std::filesystem::path>& init_from,
                     const EpochCallback& progress) {
  validate(hp);
  std::map<std::string, const BuildingRecord*> by_uid;
  for (const auto& record : manifest.records) {
    by_uid[record.uid] = &record;
  }
  auto resolve = [&](const std::vector<std::string>& uids) {
    std::vector<const BuildingRecord*> out;
    out.reserve(uids.size());
    for (const auto& uid : uids) {
      const auto it = by_uid.find(uid);
      if (it == by_uid.end()) {
        throw IoFailure("manifest lists unknown uid " + uid);
      }
      out.push_back(it->second);
    }
    return out;
  };
  const auto train_records = resolve(manifest.split.train);
  const auto val_uids = resolve(manifest.split.val);
  if (train_records.empty() || val_uids.empty()) {
    throw EmptyEvalSet("manifest must provide non-empty train and val sides");
  }
  std::vector<BuildingRecord> val_records;
  val_records.reserve(val_uids.size());
  for (const auto* r : val_uids) val_records.push_back(*r);

  Model model = init_from.has_value()
                    ? load_checkpoint(*init_from, config)
                    : build_model(config, backbone_weights, hp.seed);
  Adam optimizer(model.parameters(), hp);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);

  TrainRunReport report;
  report.config_hash = config_hash(model.config());
  report.seed = hp.seed;
  report.split_checksum = to_hex(split_checksum(manifest.split));
  report.checkpoint_file = "best.ckpt";

  Rng shuffle_rng(derive_seed(hp.seed, 0x736875666cull));
  std::vector<std::size_t> order(train_records.size());
  std::iota(order.begin(), order.end(), 0);

  const auto checkpoint_path = out_dir / report.checkpoint_file;
  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::vector<const BuildingRecord*> window;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(hp.batch_size)) {
      const std::size_t stop = std::min(
          order.size(), start + static_cast<std::size_t>(hp.batch_size));
      window.clear();
      for (std::size_t i = start; i < stop; ++i) {
        window.push_back(train_records[order[i]]);
      }
      Batch batch =
          encode_batch(window, model.config().modality, model.config().crop_side);
      const Eigen::MatrixXf scores =
          model.forward(batch.images, batch.aux, /*training=*/true);
      Eigen::MatrixXf dscores;
      const double loss =
          batch_loss(model.config().loss, scores, batch.targets, &dscores);
      if (!std::isfinite(loss)) {
        throw DivergenceDetected("non-finite training loss at epoch " +
                                 std::to_string(epoch));
      }
      loss_sum += loss * static_cast<double>(window.size());
      model.zero_grad();
      model.backward(dscores);
      optimizer.step();
    }

    EvalResult val;
    try {
      val = evaluate(model, val_records, hp.batch_size);
    } catch (const NonFinite&) {
      throw DivergenceDetected("non-finite validation scores at epoch " +
                               std::to_string(epoch));
    }
    EpochStat stat;
    stat.train_loss = loss_sum / static_cast<double>(train_records.size());
    stat.val_accuracy = val.accuracy;
    report.per_epoch.push_back(stat);
    if (progress) progress(epoch, stat);

    if (report.best_epoch == 0 || val.accuracy > report.best_val_accuracy) {
      report.best_val_accuracy = val.accuracy;
      report.best_epoch = epoch;
      report.confusion = val.confusion;
      save_checkpoint(model, checkpoint_path);
    }
  }
  report.final_val_accuracy = report.per_epoch.back().val_accuracy;
  report.checkpoint_fnv64 = to_hex(file_checksum(checkpoint_path));
  return report;
}

std::string cell_directory_name(InputModality modality, LossKind loss) {
  return modality_string(modality) + "_" + loss_kind_string(loss);
}

ComparisonGrid compare_grid(
    const HyperParams& hp, const LoadedManifest& manifest,
    BackboneKind backbone, int crop_side, const std::filesystem::path& out_dir,
    const std::optional<std::filesystem::path>& backbone_weights,
    const CellCallback& cell_done) {
  ComparisonGrid grid;
  for (std::size_t row = 0; row < kGridRowOrder.size(); ++row) {
    for (std::size_t col = 0; col < kGridColumnOrder.size(); ++col) {
      ModelConfig config;
      config.modality = kGridRowOrder[row];
      config.loss = kGridColumnOrder[col];
      config.backbone = backbone;
      config.crop_side = crop_side;
      const auto cell_dir =
          out_dir / cell_directory_name(config.modality, config.loss);
      grid.cells[row][col] =
          train(config, hp, manifest, cell_dir, backbone_weights);
      if (cell_done) {
        cell_done(config.modality, config.loss, grid.cells[row][col]);
      }
    }
  }
  return grid;
}

namespace {

// Validation accuracies published for the full-scale experiment, indexed
// [modality][loss] in the grid's row/column order.
constexpr std::array<std::array<const char*, 3>, 3> kPaperReference = {{
    {"45.3%", "59.5%", "64.2%"},
    {"50.2%", "68.3%", "71.2%"},
    {"49.7%", "72.7%", "74.6%"},
}};

const std::array<std::string, 3> kRowTitles = {
    "Post-Disaster Image Only",
    "Pre-Disaster, Post-Disaster Images",
    "Pre-Disaster, Post-Disaster Images, Disaster Type"};

const std::array<std::string, 3> kColumnTitles = {
    "Mean Squared Error", "Cross-Entropy Loss", "Ordinal Cross-Entropy Loss"};

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f%%", fraction * 100.0);
  return std::string(buf);
}

}  // namespace

std::string render_grid_markdown(const ComparisonGrid& grid,
                                 bool show_paper_ref) {
  std::string out;
  out += "# Comparison of Validation Accuracy on 9 Different Models\n\n";
  out += "Best validation accuracy per cell; split checksum " +
         grid.cells[0][0].split_checksum + ", seed " +
         std::to_string(grid.cells[0][0].seed) + ".\n\n";
  out += "| Model Input |";
  for (const auto& title : kColumnTitles) out += " " + title + " |";
  if (show_paper_ref) {
    for (const auto& title : kColumnTitles) {
      out += " Reference (" + title + ") |";
    }
  }
  out += "\n|---|---|---|---|";
  if (show_paper_ref) out += "---|---|---|";
  out += "\n";
  for (std::size_t row = 0; row < 3; ++row) {
    out += "| " + kRowTitles[row] + " |";
    for (std::size_t col = 0; col < 3; ++col) {
      out += " " + format_percent(grid.cells[row][col].best_val_accuracy) +
             " |";
    }
    if (show_paper_ref) {
      for (std::size_t col = 0; col < 3; ++col) {
        out += " " + std::string(kPaperReference[row][col]) + " |";
      }
    }
    out += "\n";
  }
  return out;
}

}  // namespace damagelab
