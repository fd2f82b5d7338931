#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "damagelab/model.hpp"
#include "damagelab/preprocess.hpp"

namespace damagelab {

// Rectified, gradient-weighted sum of the channel activations at one conv
// layer, plus its bilinear upsampling to crop size, max-normalized.
struct CamMap {
  Eigen::MatrixXf map;        // layer-resolution, all values >= 0
  Eigen::MatrixXf upsampled;  // crop-resolution, in [0,1]
  DamageClass target_class = DamageClass::kNoDamage;
  std::string layer_name;
};

// ReLU( sum_k alpha_k A_k ) where alpha_k is the spatial mean of the
// gradient over channel k. Single-observation tensors (n == 1).
Eigen::MatrixXf weighted_activation_map(const nn::Tensor& activation,
                                        const nn::Tensor& gradient);

// Bilinear upsampling to out_h x out_w followed by max-normalization; an
// identically zero map stays zero.
Eigen::MatrixXf upsample_normalize(const Eigen::MatrixXf& map, int out_h,
                                   int out_w);

// Channel weights are spatial means of d(target score)/d(activation); the
// target score is the class logit (softmax head), the sum of the target's
// active threshold logits (ordinal head; class 0 selects none and maps to
// zero), or the scalar output (regression head).
CamMap grad_cam(Model& model, const EncodedInput& input, DamageClass target,
                const std::string& layer);

// out = (1 - alpha) * crop + alpha * colormap(upsampled map).
ImageU8 overlay(const CamMap& cam, const ImageU8& crop, double alpha);

enum class CamTargetSource : int { kLabel = 0, kPrediction = 1 };

CamTargetSource cam_target_from_string(const std::string& s);

// Renders a two-row panel (post crop, overlay) per validation record plus a
// contact sheet spanning the four classes. Returns the written paths.
std::vector<std::filesystem::path> cam_batch(
    Model& model, const LoadedManifest& manifest,
    const std::filesystem::path& out_dir, const std::string& layer,
    double alpha, CamTargetSource target_source);

// Default explanation layer: the last conv feature map before pooling.
std::string default_cam_layer(Model& model);

// Fixed perceptually-uniform ramp used by overlays, by name for
// reproducibility.
extern const char* const kCamColormapName;

}  // namespace damagelab
