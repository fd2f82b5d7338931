#include "damagelab/model.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace damagelab {

namespace {

const std::array<std::string, 3> kModalityStrings = {"post_only", "pre_post",
                                                     "pre_post_type"};
const std::array<std::string, 2> kBackboneStrings = {"tiny_resnet",
                                                     "resnet18_pretrained"};

// Per-channel standardization constants of the pretrained backbone's
// original training corpus; applied identically to pre and post triples.
constexpr std::array<float, 3> kChannelMean = {0.485f, 0.456f, 0.406f};
constexpr std::array<float, 3> kChannelStd = {0.229f, 0.224f, 0.225f};

constexpr char kCheckpointMagic[] = "DLABCKPT";
constexpr char kWeightsMagic[] = "DLABWTS1";
constexpr std::uint32_t kFormatVersion = 1;

ModelConfig resolve_config(ModelConfig config) {
  const int expected = head_width(config.loss);
  if (config.head_width == 0) {
    config.head_width = expected;
  } else if (config.head_width != expected) {
    throw ConfigMismatch("head width " + std::to_string(config.head_width) +
                         " does not match loss " +
                         loss_kind_string(config.loss) + " (needs " +
                         std::to_string(expected) + ")");
  }
  const int min_side =
      config.backbone == BackboneKind::kResNet18Pretrained ? 32 : 16;
  if (config.crop_side < min_side) {
    throw ConfigMismatch("crop side " + std::to_string(config.crop_side) +
                         " below the backbone minimum " +
                         std::to_string(min_side));
  }
  return config;
}

void standardize_crop(const ImageU8& crop, float* dst, Eigen::Index plane) {
  // [0,255] -> [0,1] -> standardized, channel-planar output.
  for (int c = 0; c < 3; ++c) {
    float* out = dst + c * plane;
    const float mean = kChannelMean[static_cast<std::size_t>(c)];
    const float inv_std = 1.0f / kChannelStd[static_cast<std::size_t>(c)];
    for (int y = 0; y < crop.height; ++y) {
      for (int x = 0; x < crop.width; ++x) {
        out[y * crop.width + x] =
            (static_cast<float>(crop.at(y, x, c)) / 255.0f - mean) * inv_std;
      }
    }
  }
}

}  // namespace

InputModality modality_from_string(const std::string& s) {
  for (int i = 0; i < 3; ++i) {
    if (kModalityStrings[i] == s) return static_cast<InputModality>(i);
  }
  throw InvalidConfig("unknown input modality \"" + s + "\"");
}

const std::string& modality_string(InputModality m) {
  return kModalityStrings[static_cast<std::size_t>(m)];
}

BackboneKind backbone_from_string(const std::string& s) {
  for (int i = 0; i < 2; ++i) {
    if (kBackboneStrings[i] == s) return static_cast<BackboneKind>(i);
  }
  throw InvalidConfig("unknown backbone \"" + s + "\"");
}

const std::string& backbone_string(BackboneKind k) {
  return kBackboneStrings[static_cast<std::size_t>(k)];
}

std::string config_canonical(const ModelConfig& config) {
  const ModelConfig c = resolve_config(config);
  std::ostringstream out;
  out << "backbone=" << backbone_string(c.backbone) << "\n"
      << "crop_side=" << c.crop_side << "\n"
      << "head_width=" << c.head_width << "\n"
      << "loss=" << loss_kind_string(c.loss) << "\n"
      << "modality=" << modality_string(c.modality) << "\n"
      << "ordinal_decode=" << decode_rule_string(c.ordinal_decode) << "\n";
  return out.str();
}

std::string config_hash(const ModelConfig& config) {
  return to_hex(fnv1a64(config_canonical(config)));
}

void encode_into(nn::Tensor& batch, int row, const BuildingRecord& record,
                 InputModality modality) {
  const int side = batch.h;
  if (record.crop_post.width != side || record.crop_post.height != side ||
      !record.crop_pre.same_shape(record.crop_post)) {
    throw ShapeMismatch("record " + record.uid + " crops do not match side " +
                        std::to_string(side));
  }
  const Eigen::Index plane = batch.plane();
  float* dst = batch.data.data() +
               static_cast<Eigen::Index>(row) * batch.c * plane;
  if (modality == InputModality::kPostOnly) {
    standardize_crop(record.crop_post, dst, plane);
  } else {
    // Channel order is fixed: pre triple first, then post.
    standardize_crop(record.crop_pre, dst, plane);
    standardize_crop(record.crop_post, dst + 3 * plane, plane);
  }
}

EncodedInput encode_input(const BuildingRecord& record,
                          InputModality modality) {
  EncodedInput input;
  input.tensor = nn::Tensor(1, input_channels(modality),
                            record.crop_post.height, record.crop_post.width);
  encode_into(input.tensor, 0, record, modality);
  if (has_type_aux(modality)) {
    input.aux = disaster_one_hot(record.disaster_type);
  }
  return input;
}

Eigen::VectorXf adapt_first_layer(const Eigen::VectorXf& weights3,
                                  int out_channels, int ksize) {
  const Eigen::Index kk = static_cast<Eigen::Index>(ksize) * ksize;
  if (weights3.size() != static_cast<Eigen::Index>(out_channels) * 3 * kk) {
    throw ShapeMismatch("adapt_first_layer expects [out,3,k,k] kernels");
  }
  Eigen::VectorXf weights6(static_cast<Eigen::Index>(out_channels) * 6 * kk);
  for (Eigen::Index oc = 0; oc < out_channels; ++oc) {
    for (Eigen::Index ic = 0; ic < 6; ++ic) {
      const Eigen::Index src = (oc * 3 + ic % 3) * kk;
      weights6.segment((oc * 6 + ic) * kk, kk) =
          0.5f * weights3.segment(src, kk);
    }
  }
  return weights6;
}

Eigen::VectorXf fuse_disaster_type(const Eigen::VectorXf& pooled,
                                   const Eigen::Matrix<float, 6, 1>& one_hot) {
  Eigen::VectorXf fused(pooled.size() + 6);
  fused.head(pooled.size()) = pooled;
  fused.tail(6) = one_hot;
  return fused;
}

Backbone::Spec Backbone::tiny_resnet_spec() {
  return Spec{16, 3, 2, 1, false, {{16, 1, 1}, {32, 2, 1}, {64, 2, 1},
                                   {128, 2, 1}}};
}

Backbone::Spec Backbone::resnet18_spec() {
  return Spec{64, 7, 2, 3, true, {{64, 1, 2}, {128, 2, 2}, {256, 2, 2},
                                  {512, 2, 2}}};
}

Backbone::Backbone(const Spec& spec, int in_channels)
    : in_channels_(in_channels),
      feature_width_(spec.stages.back().channels),
      stem_has_pool_(spec.stem_maxpool),
      stem_conv_(std::make_unique<nn::Conv2d>(
          "backbone.stem.conv", in_channels, spec.stem_channels,
          spec.stem_ksize, spec.stem_stride, spec.stem_pad, false)),
      stem_bn_("backbone.stem.bn", spec.stem_channels) {
  if (spec.stem_maxpool) {
    stem_pool_ = std::make_unique<nn::MaxPool2d>(3, 2, 1);
  }
  int channels = spec.stem_channels;
  int index = 1;
  for (const Stage& stage : spec.stages) {
    for (int b = 0; b < stage.blocks; ++b) {
      const int stride = b == 0 ? stage.stride : 1;
      blocks_.emplace_back("backbone.block" + std::to_string(index), channels,
                           stage.channels, stride);
      channels = stage.channels;
      ++index;
    }
  }
}

void Backbone::init(Rng& rng) {
  stem_conv_->init(rng);
  for (auto& block : blocks_) block.init(rng);
}

void Backbone::adapt_stem_to_six_channels() {
  if (in_channels_ != 3) {
    throw ShapeMismatch("stem adaptation requires a 3-channel model");
  }
  auto adapted = std::make_unique<nn::Conv2d>(
      "backbone.stem.conv", 6, stem_conv_->out_channels(), stem_conv_->ksize(),
      stem_conv_->stride(), stem_conv_->pad(), false);
  adapted->weight().value = adapt_first_layer(
      stem_conv_->weight().value, stem_conv_->out_channels(),
      stem_conv_->ksize());
  adapted->set_split_input_halves(true);
  stem_conv_ = std::move(adapted);
  in_channels_ = 6;
}

Eigen::MatrixXf Backbone::forward(const nn::Tensor& x, bool training,
                                  bool capture) {
  captured_.clear();
  if (x.c != in_channels_) {
    throw ShapeMismatch("backbone expects " + std::to_string(in_channels_) +
                        " channels, got " + x.shape_string());
  }
  nn::Tensor t = stem_relu_.forward(stem_bn_.forward(stem_conv_->forward(x),
                                                     training));
  if (stem_pool_) t = stem_pool_->forward(t);
  if (capture) captured_.emplace_back("stem", t);
  int index = 1;
  for (auto& block : blocks_) {
    t = block.forward(t, training);
    if (capture) captured_.emplace_back("block" + std::to_string(index), t);
    ++index;
  }
  return gap_.forward(t);
}

nn::Tensor Backbone::backward(const Eigen::MatrixXf& dpooled,
                              const std::string& stop_layer) {
  nn::Tensor d = gap_.backward(dpooled);
  for (int i = static_cast<int>(blocks_.size()) - 1; i >= 0; --i) {
    if (stop_layer == "block" + std::to_string(i + 1)) return d;
    d = blocks_[static_cast<std::size_t>(i)].backward(d);
  }
  if (stop_layer == "stem") return d;
  if (!stop_layer.empty()) {
    throw UnknownLayer("no layer named \"" + stop_layer + "\"");
  }
  if (stem_pool_) d = stem_pool_->backward(d);
  return stem_conv_->backward(stem_bn_.backward(stem_relu_.backward(d)));
}

const nn::Tensor& Backbone::captured(const std::string& layer) const {
  for (const auto& [name, tensor] : captured_) {
    if (name == layer) return tensor;
  }
  throw UnknownLayer("no captured activation named \"" + layer + "\"");
}

std::vector<std::string> Backbone::layer_names() const {
  std::vector<std::string> names = {"stem"};
  for (std::size_t i = 1; i <= blocks_.size(); ++i) {
    names.push_back("block" + std::to_string(i));
  }
  return names;
}

void Backbone::collect(std::vector<nn::Parameter*>& params) {
  stem_conv_->collect(params);
  stem_bn_.collect(params);
  for (auto& block : blocks_) block.collect(params);
}

void Backbone::collect_buffers(std::vector<nn::Buffer*>& buffers) {
  stem_bn_.collect_buffers(buffers);
  for (auto& block : blocks_) block.collect_buffers(buffers);
}

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void write_floats(std::ostream& out, const Eigen::VectorXf& v) {
  write_u64(out, static_cast<std::uint64_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::string read_string(std::istream& in) {
  const std::uint64_t n = read_u64(in);
  if (n > (1ull << 24)) throw WeightLoadFailure("oversized string field");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}
Eigen::VectorXf read_floats(std::istream& in) {
  const std::uint64_t n = read_u64(in);
  if (n > (1ull << 30)) throw WeightLoadFailure("oversized tensor field");
  Eigen::VectorXf v(static_cast<Eigen::Index>(n));
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(float)));
  return v;
}

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  Eigen::VectorXf value;
};

void write_tensor_section(std::ostream& out,
                          const std::vector<NamedTensor>& tensors) {
  write_u64(out, tensors.size());
  for (const auto& t : tensors) {
    write_string(out, t.name);
    write_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) write_u32(out, static_cast<std::uint32_t>(d));
    write_floats(out, t.value);
  }
}

std::map<std::string, NamedTensor> read_tensor_section(std::istream& in) {
  std::map<std::string, NamedTensor> tensors;
  const std::uint64_t count = read_u64(in);
  if (count > 4096) throw WeightLoadFailure("implausible tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = read_string(in);
    const std::uint32_t dims = read_u32(in);
    if (dims > 8) throw WeightLoadFailure("implausible tensor rank");
    for (std::uint32_t d = 0; d < dims; ++d) {
      t.shape.push_back(static_cast<int>(read_u32(in)));
    }
    t.value = read_floats(in);
    if (!in) throw WeightLoadFailure("truncated tensor section");
    tensors[t.name] = std::move(t);
  }
  return tensors;
}

std::vector<NamedTensor> snapshot_tensors(
    const std::vector<nn::Parameter*>& params,
    const std::vector<nn::Buffer*>& buffers) {
  std::vector<NamedTensor> tensors;
  for (const auto* p : params) tensors.push_back({p->name, p->shape, p->value});
  for (const auto* b : buffers) {
    tensors.push_back(
        {b->name, {static_cast<int>(b->value.size())}, b->value});
  }
  return tensors;
}

void restore_tensors(std::map<std::string, NamedTensor>& loaded,
                     const std::vector<nn::Parameter*>& params,
                     const std::vector<nn::Buffer*>& buffers,
                     const std::string& context) {
  auto take = [&](const std::string& name, Eigen::VectorXf& dst) {
    const auto it = loaded.find(name);
    if (it == loaded.end()) {
      throw WeightLoadFailure(context + " is missing tensor " + name);
    }
    if (it->second.value.size() != dst.size()) {
      throw WeightLoadFailure(context + " tensor " + name + " has " +
                              std::to_string(it->second.value.size()) +
                              " values, expected " +
                              std::to_string(dst.size()));
    }
    dst = it->second.value;
    loaded.erase(it);
  };
  for (auto* p : params) take(p->name, p->value);
  for (auto* b : buffers) take(b->name, b->value);
  if (!loaded.empty()) {
    throw WeightLoadFailure(context + " holds unknown tensor " +
                            loaded.begin()->first);
  }
}

ModelConfig parse_canonical_config(const std::string& text) {
  ModelConfig config;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw WeightLoadFailure("malformed config line \"" + line + "\"");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "backbone") {
      config.backbone = backbone_from_string(value);
    } else if (key == "crop_side") {
      config.crop_side = std::stoi(value);
    } else if (key == "head_width") {
      config.head_width = std::stoi(value);
    } else if (key == "loss") {
      config.loss = loss_kind_from_string(value);
    } else if (key == "modality") {
      config.modality = modality_from_string(value);
    } else if (key == "ordinal_decode") {
      config.ordinal_decode = decode_rule_from_string(value);
    } else {
      throw WeightLoadFailure("unknown config key \"" + key + "\"");
    }
  }
  return config;
}

}  // namespace

Model::Model(const ModelConfig& config, std::uint64_t init_seed,
             const std::optional<std::filesystem::path>& backbone_weights)
    : config_(resolve_config(config)),
      backbone_(config_.backbone == BackboneKind::kTinyResNet
                    ? Backbone::tiny_resnet_spec()
                    : Backbone::resnet18_spec(),
                3),
      head_("head.fc",
            backbone_.feature_width() + (has_type_aux(config_.modality) ? 6 : 0),
            config_.head_width) {
  Rng rng(derive_seed(init_seed, 0x6d6f64656cull));  // independent init stream
  backbone_.init(rng);

  if (backbone_weights.has_value()) {
    std::ifstream in(*backbone_weights, std::ios::binary);
    if (!in) {
      throw WeightLoadFailure("cannot open weights file " +
                              backbone_weights->string());
    }
    char magic[8] = {};
    in.read(magic, 8);
    if (std::string(magic, 8) != kWeightsMagic) {
      throw WeightLoadFailure("bad magic in weights file " +
                              backbone_weights->string());
    }
    if (read_u32(in) != kFormatVersion) {
      throw WeightLoadFailure("unsupported weights file version");
    }
    auto loaded = read_tensor_section(in);
    std::vector<nn::Parameter*> params;
    std::vector<nn::Buffer*> buffers;
    backbone_.collect(params);
    backbone_.collect_buffers(buffers);
    restore_tensors(loaded, params, buffers, "weights file");
  }

  if (input_channels(config_.modality) == 6) {
    backbone_.adapt_stem_to_six_channels();
  }
  head_.init(rng);
}

Eigen::MatrixXf Model::forward(const nn::Tensor& images,
                               const Eigen::MatrixXf& aux, bool training) {
  Eigen::MatrixXf pooled = backbone_.forward(images, training);
  if (has_type_aux(config_.modality)) {
    if (aux.rows() != images.n || aux.cols() != 6) {
      throw ShapeMismatch("type-aware modality needs an N x 6 one-hot matrix");
    }
    Eigen::MatrixXf fused(pooled.rows(), pooled.cols() + 6);
    fused << pooled, aux;
    return head_.forward(fused);
  }
  return head_.forward(pooled);
}

Eigen::MatrixXf Model::forward(const EncodedInput& input, bool training) {
  Eigen::MatrixXf aux(1, 6);
  if (input.aux.has_value()) {
    aux.row(0) = input.aux->transpose();
  } else {
    aux.setZero();
  }
  return forward(input.tensor, aux, training);
}

void Model::backward(const Eigen::MatrixXf& dlogits) {
  const Eigen::MatrixXf dfeat = head_.backward(dlogits);
  backbone_.backward(dfeat.leftCols(backbone_.feature_width()));
}

void Model::zero_grad() {
  for (auto* p : parameters()) p->grad.setZero();
}

Model::CamCapture Model::cam_capture(const EncodedInput& input,
                                     const Eigen::VectorXf& selector,
                                     const std::string& layer) {
  const auto names = backbone_.layer_names();
  if (std::find(names.begin(), names.end(), layer) == names.end()) {
    throw UnknownLayer("no layer named \"" + layer + "\"");
  }
  if (selector.size() != config_.head_width) {
    throw ShapeMismatch("selector width must equal the head width");
  }

  Eigen::MatrixXf aux(1, 6);
  if (input.aux.has_value()) {
    aux.row(0) = input.aux->transpose();
  } else {
    aux.setZero();
  }
  Eigen::MatrixXf pooled = backbone_.forward(input.tensor, false, true);
  if (has_type_aux(config_.modality)) {
    Eigen::MatrixXf fused(pooled.rows(), pooled.cols() + 6);
    fused << pooled, aux;
    head_.forward(fused);
  } else {
    head_.forward(pooled);
  }

  const Eigen::MatrixXf dfeat = head_.backward(selector.transpose());
  CamCapture capture;
  capture.gradient =
      backbone_.backward(dfeat.leftCols(backbone_.feature_width()), layer);
  capture.activation = backbone_.captured(layer);
  return capture;
}

std::vector<nn::Parameter*> Model::parameters() {
  std::vector<nn::Parameter*> params;
  backbone_.collect(params);
  head_.collect(params);
  return params;
}

std::vector<nn::Buffer*> Model::buffers() {
  std::vector<nn::Buffer*> buffers;
  backbone_.collect_buffers(buffers);
  return buffers;
}

int Model::head_width() const { return config_.head_width; }

Model build_model(const ModelConfig& config,
                  const std::optional<std::filesystem::path>& weights,
                  std::uint64_t init_seed) {
  const ModelConfig resolved = resolve_config(config);
  if (resolved.backbone == BackboneKind::kResNet18Pretrained &&
      !weights.has_value()) {
    throw ConfigMismatch("resnet18_pretrained requires a weights file");
  }
  if (resolved.backbone == BackboneKind::kTinyResNet && weights.has_value()) {
    throw ConfigMismatch("tiny_resnet takes no external weights");
  }
  return Model(resolved, init_seed, weights);
}

void save_checkpoint(Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, 8);
  write_u32(out, kFormatVersion);
  write_string(out, config_canonical(model.config()));
  write_string(out, config_hash(model.config()));
  write_tensor_section(out,
                       snapshot_tensors(model.parameters(), model.buffers()));
  if (!out) throw IoFailure("failed writing checkpoint " + path.string());
}

namespace {

Model load_checkpoint_impl(const std::filesystem::path& path,
                           const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WeightLoadFailure("cannot open checkpoint " + path.string());
  char magic[8] = {};
  in.read(magic, 8);
  if (std::string(magic, 8) != kCheckpointMagic) {
    throw WeightLoadFailure("bad magic in checkpoint " + path.string());
  }
  if (read_u32(in) != kFormatVersion) {
    throw WeightLoadFailure("unsupported checkpoint version");
  }
  const std::string canonical = read_string(in);
  const std::string stored_hash = read_string(in);
  if (stored_hash != to_hex(fnv1a64(canonical))) {
    throw WeightLoadFailure("checkpoint config hash does not match its "
                            "config block");
  }
  if (expected != nullptr && canonical != config_canonical(*expected)) {
    throw ConfigMismatch("checkpoint config does not match; stored:\n" +
                         canonical);
  }
  const ModelConfig config = parse_canonical_config(canonical);
  Model model(config, 0, std::nullopt);
  auto loaded = read_tensor_section(in);
  restore_tensors(loaded, model.parameters(), model.buffers(), "checkpoint");
  return model;
}

}  // namespace

Model load_checkpoint(const std::filesystem::path& path) {
  return load_checkpoint_impl(path, nullptr);
}

Model load_checkpoint(const std::filesystem::path& path,
                      const ModelConfig& expected) {
  return load_checkpoint_impl(path, &expected);
}

void save_backbone_weights(Model& model, const std::filesystem::path& path) {
  std::vector<nn::Parameter*> params;
  std::vector<nn::Buffer*> buffers;
  model.backbone().collect(params);
  model.backbone().collect_buffers(buffers);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot write weights file " + path.string());
  out.write(kWeightsMagic, 8);
  write_u32(out, kFormatVersion);
  write_tensor_section(out, snapshot_tensors(params, buffers));
  if (!out) throw IoFailure("failed writing weights file " + path.string());
}

std::uint64_t file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  return fnv1a64(bytes);
}

}  // namespace damagelab
