#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "damagelab/losses.hpp"
#include "damagelab/nn.hpp"
#include "damagelab/types.hpp"

namespace damagelab {

enum class InputModality : int {
  kPostOnly = 0,
  kPrePost = 1,
  kPrePostType = 2,
};

InputModality modality_from_string(const std::string& s);
const std::string& modality_string(InputModality m);

inline int input_channels(InputModality m) {
  return m == InputModality::kPostOnly ? 3 : 6;
}
inline bool has_type_aux(InputModality m) {
  return m == InputModality::kPrePostType;
}

enum class BackboneKind : int { kTinyResNet = 0, kResNet18Pretrained = 1 };

BackboneKind backbone_from_string(const std::string& s);
const std::string& backbone_string(BackboneKind k);

// One Table-1 cell is fully determined by this config (plus hyperparams).
struct ModelConfig {
  InputModality modality = InputModality::kPostOnly;
  LossKind loss = LossKind::kCrossEntropy;
  BackboneKind backbone = BackboneKind::kTinyResNet;
  int crop_side = 224;
  int head_width = 0;  // 0 derives the width from the loss
  OrdinalDecodeRule ordinal_decode = OrdinalDecodeRule::kScan;

  bool operator==(const ModelConfig&) const = default;
};

std::string config_canonical(const ModelConfig& config);
std::string config_hash(const ModelConfig& config);

// Record crops standardized into a network-ready tensor. aux carries the
// disaster one-hot and is present exactly for the type-aware modality.
struct EncodedInput {
  nn::Tensor tensor;  // 1 x C x S x S
  std::optional<Eigen::Matrix<float, 6, 1>> aux;
};

EncodedInput encode_input(const BuildingRecord& record, InputModality modality);

// Writes one record into row `row` of a preallocated batch tensor.
void encode_into(nn::Tensor& batch, int row, const BuildingRecord& record,
                 InputModality modality);

// Duplicate-and-halve kernel adaptation: [out,3,k,k] -> [out,6,k,k] where
// both 3-channel halves are the source kernels scaled by 1/2.
Eigen::VectorXf adapt_first_layer(const Eigen::VectorXf& weights3,
                                  int out_channels, int ksize);

// Concatenates the pooled feature vector with the disaster one-hot; the
// classification layer then reads width F+6.
Eigen::VectorXf fuse_disaster_type(const Eigen::VectorXf& pooled,
                                   const Eigen::Matrix<float, 6, 1>& one_hot);

// Convolutional spine: stem, residual stages, global average pooling.
class Backbone {
 public:
  struct Stage {
    int channels;
    int stride;
    int blocks;
  };
  struct Spec {
    int stem_channels;
    int stem_ksize;
    int stem_stride;
    int stem_pad;
    bool stem_maxpool;
    std::vector<Stage> stages;
  };

  static Spec tiny_resnet_spec();
  static Spec resnet18_spec();

  Backbone(const Spec& spec, int in_channels);

  void init(Rng& rng);
  void adapt_stem_to_six_channels();

  // Pooled features, N x F. Set `capture` to keep named activations for
  // class-activation mapping.
  Eigen::MatrixXf forward(const nn::Tensor& x, bool training,
                          bool capture = false);
  // Backpropagates to the input; when `stop_layer` is non-empty, returns
  // the gradient at that named activation instead.
  nn::Tensor backward(const Eigen::MatrixXf& dpooled,
                      const std::string& stop_layer = {});

  const nn::Tensor& captured(const std::string& layer) const;
  std::vector<std::string> layer_names() const;
  int feature_width() const { return feature_width_; }
  int in_channels() const { return in_channels_; }

  void collect(std::vector<nn::Parameter*>& params);
  void collect_buffers(std::vector<nn::Buffer*>& buffers);

 private:
  int in_channels_;
  int feature_width_;
  bool stem_has_pool_;
  std::unique_ptr<nn::Conv2d> stem_conv_;
  nn::BatchNorm2d stem_bn_;
  nn::ReLU stem_relu_;
  std::unique_ptr<nn::MaxPool2d> stem_pool_;
  std::vector<nn::BasicBlock> blocks_;
  nn::GlobalAvgPool gap_;
  std::vector<std::pair<std::string, nn::Tensor>> captured_;
};

class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t init_seed,
        const std::optional<std::filesystem::path>& backbone_weights);

  const ModelConfig& config() const { return config_; }

  // images: N x C x S x S; aux: N x 6 (ignored unless the modality fuses
  // the disaster type). Returns raw scores, N x head_width.
  Eigen::MatrixXf forward(const nn::Tensor& images, const Eigen::MatrixXf& aux,
                          bool training);
  Eigen::MatrixXf forward(const EncodedInput& input, bool training);

  void backward(const Eigen::MatrixXf& dlogits);
  void zero_grad();

  struct CamCapture {
    nn::Tensor activation;
    nn::Tensor gradient;
  };
  // Gradient of selector . logits w.r.t. the named activation, eval mode.
  CamCapture cam_capture(const EncodedInput& input,
                         const Eigen::VectorXf& selector,
                         const std::string& layer);

  std::vector<nn::Parameter*> parameters();
  std::vector<nn::Buffer*> buffers();
  Backbone& backbone() { return backbone_; }
  int head_width() const;

 private:
  ModelConfig config_;
  Backbone backbone_;
  nn::Linear head_;
  Eigen::MatrixXf aux_cache_;
};

// Validates the config (head width vs loss, weights-file requirement) and
// constructs the model. `weights` must be supplied exactly for the
// pretrained backbone.
Model build_model(const ModelConfig& config,
                  const std::optional<std::filesystem::path>& weights,
                  std::uint64_t init_seed);

void save_checkpoint(Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path,
                      const ModelConfig& expected);

// Named-tensor archive holding only backbone state; the input-file format
// consumed by the pretrained backbone.
void save_backbone_weights(Model& model, const std::filesystem::path& path);

std::uint64_t file_checksum(const std::filesystem::path& path);

}  // namespace damagelab
