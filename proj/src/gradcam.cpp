#include "damagelab/gradcam.hpp"

#include <algorithm>
#include <cmath>

#include "damagelab/trainer.hpp"

namespace damagelab {

const char* const kCamColormapName = "viridis";

namespace {

// Viridis anchors (RGB in [0,1]), linearly interpolated.
constexpr int kRampSize = 9;
constexpr float kRamp[kRampSize][3] = {
    {0.267f, 0.005f, 0.329f}, {0.283f, 0.141f, 0.458f},
    {0.254f, 0.265f, 0.530f}, {0.207f, 0.372f, 0.553f},
    {0.164f, 0.471f, 0.558f}, {0.128f, 0.567f, 0.551f},
    {0.135f, 0.659f, 0.518f}, {0.267f, 0.749f, 0.441f},
    {0.993f, 0.906f, 0.144f}};

std::array<float, 3> colormap(float t) {
  t = std::clamp(t, 0.0f, 1.0f);
  const float scaled = t * (kRampSize - 1);
  const int lo = std::min(static_cast<int>(scaled), kRampSize - 2);
  const float frac = scaled - static_cast<float>(lo);
  std::array<float, 3> rgb{};
  for (int c = 0; c < 3; ++c) {
    rgb[static_cast<std::size_t>(c)] =
        (1.0f - frac) * kRamp[lo][c] + frac * kRamp[lo + 1][c];
  }
  return rgb;
}

Eigen::MatrixXf resize_bilinear_matrix(const Eigen::MatrixXf& in, int out_h,
                                       int out_w) {
  if (in.rows() == out_h && in.cols() == out_w) return in;
  Eigen::MatrixXf out(out_h, out_w);
  const double sy = static_cast<double>(in.rows()) / out_h;
  const double sx = static_cast<double>(in.cols()) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(in.rows() - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min<int>(y0 + 1, static_cast<int>(in.rows()) - 1);
    const auto wy = static_cast<float>(fy - y0);
    for (int ox = 0; ox < out_w; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(in.cols() - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min<int>(x0 + 1, static_cast<int>(in.cols()) - 1);
      const auto wx = static_cast<float>(fx - x0);
      const float top = (1.0f - wx) * in(y0, x0) + wx * in(y0, x1);
      const float bottom = (1.0f - wx) * in(y1, x0) + wx * in(y1, x1);
      out(oy, ox) = (1.0f - wy) * top + wy * bottom;
    }
  }
  return out;
}

Eigen::VectorXf target_selector(const ModelConfig& config, DamageClass target) {
  Eigen::VectorXf selector = Eigen::VectorXf::Zero(head_width(config.loss));
  switch (config.loss) {
    case LossKind::kCrossEntropy:
      selector(class_index(target)) = 1.0f;
      break;
    case LossKind::kOrdinalCrossEntropy:
      for (int k = 0; k < class_index(target); ++k) selector(k) = 1.0f;
      break;
    case LossKind::kMse:
      selector(0) = 1.0f;
      break;
  }
  return selector;
}

}  // namespace

Eigen::MatrixXf weighted_activation_map(const nn::Tensor& activation,
                                        const nn::Tensor& gradient) {
  if (!activation.same_shape(gradient) || activation.n != 1) {
    throw ShapeMismatch("activation/gradient must be one observation of "
                        "identical shape");
  }
  const Eigen::Index plane = activation.plane();
  Eigen::MatrixXf map = Eigen::MatrixXf::Zero(activation.h, activation.w);
  for (int c = 0; c < activation.c; ++c) {
    const auto grad_plane = Eigen::Map<const Eigen::VectorXf>(
        gradient.data.data() + static_cast<Eigen::Index>(c) * plane, plane);
    const float alpha = grad_plane.mean();
    const auto act_plane = Eigen::Map<const Eigen::MatrixXf>(
        activation.data.data() + static_cast<Eigen::Index>(c) * plane,
        activation.w, activation.h);
    map += alpha * act_plane.transpose();
  }
  return map.cwiseMax(0.0f);
}

Eigen::MatrixXf upsample_normalize(const Eigen::MatrixXf& map, int out_h,
                                   int out_w) {
  Eigen::MatrixXf up = resize_bilinear_matrix(map, out_h, out_w);
  const float peak = up.maxCoeff();
  if (peak > 0.0f) {
    up /= peak;
  } else {
    up.setZero();
  }
  return up;
}

CamMap grad_cam(Model& model, const EncodedInput& input, DamageClass target,
                const std::string& layer) {
  const Eigen::VectorXf selector = target_selector(model.config(), target);
  Model::CamCapture capture = model.cam_capture(input, selector, layer);

  CamMap cam;
  cam.target_class = target;
  cam.layer_name = layer;
  cam.map = weighted_activation_map(capture.activation, capture.gradient);
  cam.upsampled = upsample_normalize(cam.map, input.tensor.h, input.tensor.w);
  return cam;
}

ImageU8 overlay(const CamMap& cam, const ImageU8& crop, double alpha) {
  if (crop.height != cam.upsampled.rows() || crop.width != cam.upsampled.cols()) {
    throw ShapeMismatch("overlay crop does not match the upsampled map");
  }
  ImageU8 out(crop.width, crop.height, 3);
  const auto a = static_cast<float>(alpha);
  for (int y = 0; y < crop.height; ++y) {
    for (int x = 0; x < crop.width; ++x) {
      const auto rgb = colormap(cam.upsampled(y, x));
      for (int c = 0; c < 3; ++c) {
        const float blended =
            (1.0f - a) * static_cast<float>(crop.at(y, x, c)) +
            a * rgb[static_cast<std::size_t>(c)] * 255.0f;
        out.at(y, x, c) = static_cast<std::uint8_t>(
            std::lround(std::clamp(blended, 0.0f, 255.0f)));
      }
    }
  }
  return out;
}

CamTargetSource cam_target_from_string(const std::string& s) {
  if (s == "label") return CamTargetSource::kLabel;
  if (s == "prediction") return CamTargetSource::kPrediction;
  throw InvalidConfig("class source must be label or prediction, got \"" + s +
                      "\"");
}

std::string default_cam_layer(Model& model) {
  return model.backbone().layer_names().back();
}

namespace {

// Stacks images vertically (panels) or horizontally (sheet rows).
ImageU8 stack(const std::vector<ImageU8>& tiles, bool vertical) {
  int width = 0;
  int height = 0;
  for (const auto& tile : tiles) {
    if (vertical) {
      width = std::max(width, tile.width);
      height += tile.height;
    } else {
      width += tile.width;
      height = std::max(height, tile.height);
    }
  }
  ImageU8 out(width, height, 3);
  int offset = 0;
  for (const auto& tile : tiles) {
    for (int y = 0; y < tile.height; ++y) {
      for (int x = 0; x < tile.width; ++x) {
        for (int c = 0; c < 3; ++c) {
          if (vertical) {
            out.at(offset + y, x, c) = tile.at(y, x, c);
          } else {
            out.at(y, offset + x, c) = tile.at(y, x, c);
          }
        }
      }
    }
    offset += vertical ? tile.height : tile.width;
  }
  return out;
}

}  // namespace

std::vector<std::filesystem::path> cam_batch(Model& model,
                                             const LoadedManifest& manifest,
                                             const std::filesystem::path& out_dir,
                                             const std::string& layer,
                                             double alpha,
                                             CamTargetSource target_source) {
  std::vector<const BuildingRecord*> val_records;
  for (const auto& record : manifest.records) {
    const bool in_val =
        std::find(manifest.split.val.begin(), manifest.split.val.end(),
                  record.uid) != manifest.split.val.end();
    if (in_val) val_records.push_back(&record);
  }
  if (val_records.empty()) {
    throw EmptyEvalSet("manifest has no validation records to explain");
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoFailure("cannot create " + out_dir.string());

  std::vector<std::filesystem::path> written;
  std::array<const ImageU8*, kNumClasses> sheet_crop{};
  std::array<ImageU8, kNumClasses> sheet_overlay{};
  std::array<bool, kNumClasses> sheet_filled{};

  for (const auto* record : val_records) {
    const EncodedInput input = encode_input(*record, model.config().modality);
    DamageClass target = record->label;
    if (target_source == CamTargetSource::kPrediction) {
      const Eigen::MatrixXf scores = model.forward(input, /*training=*/false);
      target = decode_scores(scores.row(0).transpose(), model.config().loss,
                             model.config().ordinal_decode);
    }
    const CamMap cam = grad_cam(model, input, target, layer);
    const ImageU8 blended = overlay(cam, record->crop_post, alpha);
    const ImageU8 panel = stack({record->crop_post, blended}, /*vertical=*/true);
    const auto path = out_dir / (record->uid + "_cam.png");
    write_png(path, panel);
    written.push_back(path);

    const auto slot = static_cast<std::size_t>(class_index(record->label));
    if (!sheet_filled[slot]) {
      sheet_filled[slot] = true;
      sheet_crop[slot] = &record->crop_post;
      sheet_overlay[slot] = blended;
    }
  }

  // Contact sheet: one column per class in ascending damage order, crops on
  // the first row and overlays on the second.
  std::vector<ImageU8> top;
  std::vector<ImageU8> bottom;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto slot = static_cast<std::size_t>(c);
    if (sheet_filled[slot]) {
      top.push_back(*sheet_crop[slot]);
      bottom.push_back(sheet_overlay[slot]);
    }
  }
  const ImageU8 sheet =
      stack({stack(top, false), stack(bottom, false)}, /*vertical=*/true);
  const auto sheet_path = out_dir / "contact_sheet.png";
  write_png(sheet_path, sheet);
  written.push_back(sheet_path);
  return written;
}

}  // namespace damagelab
