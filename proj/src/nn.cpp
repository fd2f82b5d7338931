#include "damagelab/nn.hpp"

#include <cmath>
#include <limits>

namespace damagelab::nn {

namespace {

using RowMajorMap =
    Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>>;
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>;

}  // namespace

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int ksize,
               int stride, int pad, bool bias)
    : name_(std::move(name)),
      in_channels_(in_channels),
      out_channels_(out_channels),
      ksize_(ksize),
      stride_(stride),
      pad_(pad),
      has_bias_(bias),
      weight_(name_ + ".weight",
              {out_channels, in_channels, ksize, ksize}),
      bias_(name_ + ".bias", {out_channels}) {}

float Conv2d::weight_at(int oc, int ic, int ky, int kx) const {
  return weight_.value[((static_cast<Eigen::Index>(oc) * in_channels_ + ic) *
                            ksize_ +
                        ky) *
                           ksize_ +
                       kx];
}

float& Conv2d::weight_at(int oc, int ic, int ky, int kx) {
  return weight_.value[((static_cast<Eigen::Index>(oc) * in_channels_ + ic) *
                            ksize_ +
                        ky) *
                           ksize_ +
                       kx];
}

void Conv2d::init(Rng& rng) {
  const double std_dev =
      std::sqrt(2.0 / (static_cast<double>(in_channels_) * ksize_ * ksize_));
  for (Eigen::Index i = 0; i < weight_.value.size(); ++i) {
    weight_.value[i] = static_cast<float>(rng.normal() * std_dev);
  }
  bias_.value.setZero();
}

void Conv2d::collect(std::vector<Parameter*>& params) {
  params.push_back(&weight_);
  if (has_bias_) params.push_back(&bias_);
}

void Conv2d::im2col(const Tensor& x, Eigen::MatrixXf& cols) const {
  const int ho = out_side(x.h);
  const int wo = out_side(x.w);
  const Eigen::Index k_rows =
      static_cast<Eigen::Index>(in_channels_) * ksize_ * ksize_;
  cols.resize(k_rows, static_cast<Eigen::Index>(x.n) * ho * wo);

  Eigen::Index m = 0;
  for (int in = 0; in < x.n; ++in) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox, ++m) {
        float* col = cols.data() + m * k_rows;
        Eigen::Index r = 0;
        for (int ic = 0; ic < in_channels_; ++ic) {
          const float* plane =
              x.data.data() +
              (static_cast<Eigen::Index>(in) * x.c + ic) * x.plane();
          for (int ky = 0; ky < ksize_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            for (int kx = 0; kx < ksize_; ++kx, ++r) {
              const int ix = ox * stride_ - pad_ + kx;
              col[r] = (iy >= 0 && iy < x.h && ix >= 0 && ix < x.w)
                           ? plane[static_cast<Eigen::Index>(iy) * x.w + ix]
                           : 0.0f;
            }
          }
        }
      }
    }
  }
}

void Conv2d::col2im(const Eigen::MatrixXf& cols, Tensor& dx) const {
  const int ho = out_side(dx.h);
  const int wo = out_side(dx.w);
  const Eigen::Index k_rows =
      static_cast<Eigen::Index>(in_channels_) * ksize_ * ksize_;
  Eigen::Index m = 0;
  for (int in = 0; in < dx.n; ++in) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox, ++m) {
        const float* col = cols.data() + m * k_rows;
        Eigen::Index r = 0;
        for (int ic = 0; ic < in_channels_; ++ic) {
          float* plane = dx.data.data() +
                         (static_cast<Eigen::Index>(in) * dx.c + ic) *
                             dx.plane();
          for (int ky = 0; ky < ksize_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            for (int kx = 0; kx < ksize_; ++kx, ++r) {
              const int ix = ox * stride_ - pad_ + kx;
              if (iy >= 0 && iy < dx.h && ix >= 0 && ix < dx.w) {
                plane[static_cast<Eigen::Index>(iy) * dx.w + ix] += col[r];
              }
            }
          }
        }
      }
    }
  }
}

Tensor Conv2d::forward(const Tensor& x) {
  if (x.c != in_channels_) {
    throw ShapeMismatch(name_ + " expects " + std::to_string(in_channels_) +
                        " input channels, got " + x.shape_string());
  }
  const int ho = out_side(x.h);
  const int wo = out_side(x.w);
  if (ho <= 0 || wo <= 0) {
    throw ShapeMismatch(name_ + " output would be empty for input " +
                        x.shape_string());
  }
  im2col(x, cols_);
  cached_n_ = x.n;
  cached_h_ = x.h;
  cached_w_ = x.w;

  const Eigen::Index k_rows = cols_.rows();
  ConstRowMajorMap w_map(weight_.value.data(), out_channels_, k_rows);

  Eigen::MatrixXf out_mat(out_channels_, cols_.cols());
  if (split_input_halves_) {
    const Eigen::Index half = k_rows / 2;
    out_mat.noalias() = w_map.leftCols(half) * cols_.topRows(half);
    out_mat.noalias() += w_map.rightCols(half) * cols_.bottomRows(half);
  } else {
    out_mat.noalias() = w_map * cols_;
  }
  if (has_bias_) out_mat.colwise() += bias_.value;

  Tensor out(x.n, out_channels_, ho, wo);
  const Eigen::Index plane = out.plane();
  for (int in = 0; in < out.n; ++in) {
    for (int oc = 0; oc < out_channels_; ++oc) {
      Eigen::Map<Eigen::VectorXf>(
          out.data.data() +
              (static_cast<Eigen::Index>(in) * out_channels_ + oc) * plane,
          plane) = out_mat.row(oc).segment(in * plane, plane);
    }
  }
  return out;
}

Tensor Conv2d::backward(const Tensor& dy) {
  const Eigen::Index plane = dy.plane();
  Eigen::MatrixXf dy_mat(out_channels_, static_cast<Eigen::Index>(dy.n) * plane);
  for (int in = 0; in < dy.n; ++in) {
    for (int oc = 0; oc < out_channels_; ++oc) {
      dy_mat.row(oc).segment(in * plane, plane) =
          Eigen::Map<const Eigen::VectorXf>(
              dy.data.data() +
                  (static_cast<Eigen::Index>(in) * out_channels_ + oc) * plane,
              plane);
    }
  }

  const Eigen::Index k_rows = cols_.rows();
  RowMajorMap w_grad(weight_.grad.data(), out_channels_, k_rows);
  w_grad.noalias() += dy_mat * cols_.transpose();
  if (has_bias_) bias_.grad += dy_mat.rowwise().sum();

  ConstRowMajorMap w_map(weight_.value.data(), out_channels_, k_rows);
  const Eigen::MatrixXf dcols = w_map.transpose() * dy_mat;

  Tensor dx(cached_n_, in_channels_, cached_h_, cached_w_);
  col2im(dcols, dx);
  return dx;
}

BatchNorm2d::BatchNorm2d(std::string name, int channels, float eps,
                         float momentum)
    : name_(std::move(name)),
      channels_(channels),
      eps_(eps),
      momentum_(momentum),
      gamma_(name_ + ".gamma", {channels}),
      beta_(name_ + ".beta", {channels}) {
  gamma_.value.setOnes();
  running_mean_ = Buffer{name_ + ".running_mean",
                         Eigen::VectorXf::Zero(channels)};
  running_var_ = Buffer{name_ + ".running_var",
                        Eigen::VectorXf::Ones(channels)};
}

void BatchNorm2d::collect(std::vector<Parameter*>& params) {
  params.push_back(&gamma_);
  params.push_back(&beta_);
}

void BatchNorm2d::collect_buffers(std::vector<Buffer*>& buffers) {
  buffers.push_back(&running_mean_);
  buffers.push_back(&running_var_);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  if (x.c != channels_) {
    throw ShapeMismatch(name_ + " channel mismatch: " + x.shape_string());
  }
  cached_training_ = training;
  const Eigen::Index plane = x.plane();
  const Eigen::Index per_channel = static_cast<Eigen::Index>(x.n) * plane;

  xhat_ = Tensor(x.n, x.c, x.h, x.w);
  inv_std_.resize(channels_);
  Tensor out(x.n, x.c, x.h, x.w);

  for (int c = 0; c < channels_; ++c) {
    float mean = 0.0f;
    float var = 0.0f;
    if (training) {
      double sum = 0.0;
      for (int in = 0; in < x.n; ++in) {
        sum += Eigen::Map<const Eigen::VectorXf>(
                   x.data.data() +
                       (static_cast<Eigen::Index>(in) * x.c + c) * plane,
                   plane)
                   .cast<double>()
                   .sum();
      }
      mean = static_cast<float>(sum / static_cast<double>(per_channel));
      double sq = 0.0;
      for (int in = 0; in < x.n; ++in) {
        auto seg = Eigen::Map<const Eigen::VectorXf>(
            x.data.data() + (static_cast<Eigen::Index>(in) * x.c + c) * plane,
            plane);
        sq += (seg.array() - mean).cast<double>().square().sum();
      }
      var = static_cast<float>(sq / static_cast<double>(per_channel));

      const float unbiased =
          per_channel > 1
              ? static_cast<float>(sq / static_cast<double>(per_channel - 1))
              : var;
      running_mean_.value[c] =
          (1.0f - momentum_) * running_mean_.value[c] + momentum_ * mean;
      running_var_.value[c] =
          (1.0f - momentum_) * running_var_.value[c] + momentum_ * unbiased;
    } else {
      mean = running_mean_.value[c];
      var = running_var_.value[c];
    }
    const float inv = 1.0f / std::sqrt(var + eps_);
    inv_std_[c] = inv;
    const float g = gamma_.value[c];
    const float b = beta_.value[c];
    for (int in = 0; in < x.n; ++in) {
      const Eigen::Index offset =
          (static_cast<Eigen::Index>(in) * x.c + c) * plane;
      auto src = Eigen::Map<const Eigen::VectorXf>(x.data.data() + offset,
                                                   plane);
      auto hat = Eigen::Map<Eigen::VectorXf>(xhat_.data.data() + offset, plane);
      auto dst = Eigen::Map<Eigen::VectorXf>(out.data.data() + offset, plane);
      hat = (src.array() - mean) * inv;
      dst = hat.array() * g + b;
    }
  }
  return out;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
  const Eigen::Index plane = dy.plane();
  const Eigen::Index per_channel = static_cast<Eigen::Index>(dy.n) * plane;
  Tensor dx(dy.n, dy.c, dy.h, dy.w);

  for (int c = 0; c < channels_; ++c) {
    const float g = gamma_.value[c];
    const float inv = inv_std_[c];

    double dbeta = 0.0;
    double dgamma = 0.0;
    for (int in = 0; in < dy.n; ++in) {
      const Eigen::Index offset =
          (static_cast<Eigen::Index>(in) * dy.c + c) * plane;
      auto grad = Eigen::Map<const Eigen::VectorXf>(dy.data.data() + offset,
                                                    plane);
      auto hat = Eigen::Map<const Eigen::VectorXf>(xhat_.data.data() + offset,
                                                   plane);
      dbeta += grad.cast<double>().sum();
      dgamma += (grad.array() * hat.array()).cast<double>().sum();
    }
    gamma_.grad[c] += static_cast<float>(dgamma);
    beta_.grad[c] += static_cast<float>(dbeta);

    if (!cached_training_) {
      // Running statistics are constants here, so the pass is elementwise.
      for (int in = 0; in < dy.n; ++in) {
        const Eigen::Index offset =
            (static_cast<Eigen::Index>(in) * dy.c + c) * plane;
        auto grad = Eigen::Map<const Eigen::VectorXf>(dy.data.data() + offset,
                                                      plane);
        auto dst = Eigen::Map<Eigen::VectorXf>(dx.data.data() + offset, plane);
        dst = grad.array() * g * inv;
      }
      continue;
    }

    const auto scale = static_cast<float>(per_channel);
    const float k1 = g * inv / scale;
    for (int in = 0; in < dy.n; ++in) {
      const Eigen::Index offset =
          (static_cast<Eigen::Index>(in) * dy.c + c) * plane;
      auto grad = Eigen::Map<const Eigen::VectorXf>(dy.data.data() + offset,
                                                    plane);
      auto hat = Eigen::Map<const Eigen::VectorXf>(xhat_.data.data() + offset,
                                                   plane);
      auto dst = Eigen::Map<Eigen::VectorXf>(dx.data.data() + offset, plane);
      dst = k1 * (scale * grad.array() - static_cast<float>(dbeta) -
                  hat.array() * static_cast<float>(dgamma));
    }
  }
  return dx;
}

Tensor ReLU::forward(const Tensor& x) {
  out_ = x;
  out_.data = out_.data.cwiseMax(0.0f);
  return out_;
}

Tensor ReLU::backward(const Tensor& dy) const {
  Tensor dx = dy;
  dx.data.array() *= (out_.data.array() > 0.0f).cast<float>();
  return dx;
}

MaxPool2d::MaxPool2d(int ksize, int stride, int pad)
    : ksize_(ksize), stride_(stride), pad_(pad) {}

Tensor MaxPool2d::forward(const Tensor& x) {
  in_n_ = x.n;
  in_c_ = x.c;
  in_h_ = x.h;
  in_w_ = x.w;
  out_h_ = out_side(x.h);
  out_w_ = out_side(x.w);
  Tensor out(x.n, x.c, out_h_, out_w_);
  argmax_.assign(static_cast<std::size_t>(out.size()), 0);

  Eigen::Index o = 0;
  for (int in = 0; in < x.n; ++in) {
    for (int c = 0; c < x.c; ++c) {
      for (int oy = 0; oy < out_h_; ++oy) {
        for (int ox = 0; ox < out_w_; ++ox, ++o) {
          float best = -std::numeric_limits<float>::infinity();
          Eigen::Index best_idx = -1;
          for (int ky = 0; ky < ksize_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < ksize_; ++kx) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= x.w) continue;
              const Eigen::Index idx =
                  ((static_cast<Eigen::Index>(in) * x.c + c) * x.h + iy) * x.w +
                  ix;
              if (x.data[idx] > best) {  // ties keep the first scanned cell
                best = x.data[idx];
                best_idx = idx;
              }
            }
          }
          out.data[o] = best;
          argmax_[static_cast<std::size_t>(o)] = best_idx;
        }
      }
    }
  }
  return out;
}

Tensor MaxPool2d::backward(const Tensor& dy) const {
  Tensor dx(in_n_, in_c_, in_h_, in_w_);
  for (Eigen::Index o = 0; o < dy.size(); ++o) {
    dx.data[argmax_[static_cast<std::size_t>(o)]] += dy.data[o];
  }
  return dx;
}

Eigen::MatrixXf GlobalAvgPool::forward(const Tensor& x) {
  in_n_ = x.n;
  in_c_ = x.c;
  in_h_ = x.h;
  in_w_ = x.w;
  const Eigen::Index plane = x.plane();
  Eigen::MatrixXf out(x.n, x.c);
  for (int in = 0; in < x.n; ++in) {
    for (int c = 0; c < x.c; ++c) {
      out(in, c) = Eigen::Map<const Eigen::VectorXf>(
                       x.data.data() +
                           (static_cast<Eigen::Index>(in) * x.c + c) * plane,
                       plane)
                       .mean();
    }
  }
  return out;
}

Tensor GlobalAvgPool::backward(const Eigen::MatrixXf& dy) const {
  Tensor dx(in_n_, in_c_, in_h_, in_w_);
  const Eigen::Index plane = dx.plane();
  const float inv = 1.0f / static_cast<float>(plane);
  for (int in = 0; in < in_n_; ++in) {
    for (int c = 0; c < in_c_; ++c) {
      Eigen::Map<Eigen::VectorXf>(
          dx.data.data() + (static_cast<Eigen::Index>(in) * in_c_ + c) * plane,
          plane)
          .setConstant(dy(in, c) * inv);
    }
  }
  return dx;
}

Linear::Linear(std::string name, int in_features, int out_features)
    : name_(std::move(name)),
      in_features_(in_features),
      out_features_(out_features),
      weight_(name_ + ".weight", {out_features, in_features}),
      bias_(name_ + ".bias", {out_features}) {}

void Linear::init(Rng& rng) {
  const double std_dev = std::sqrt(2.0 / static_cast<double>(in_features_));
  for (Eigen::Index i = 0; i < weight_.value.size(); ++i) {
    weight_.value[i] = static_cast<float>(rng.normal() * std_dev);
  }
  bias_.value.setZero();
}

void Linear::collect(std::vector<Parameter*>& params) {
  params.push_back(&weight_);
  params.push_back(&bias_);
}

Eigen::MatrixXf Linear::forward(const Eigen::MatrixXf& x) {
  if (x.cols() != in_features_) {
    throw ShapeMismatch(name_ + " expects " + std::to_string(in_features_) +
                        " features, got " + std::to_string(x.cols()));
  }
  x_ = x;
  ConstRowMajorMap w_map(weight_.value.data(), out_features_, in_features_);
  Eigen::MatrixXf out = x * w_map.transpose();
  out.rowwise() += bias_.value.transpose();
  return out;
}

Eigen::MatrixXf Linear::backward(const Eigen::MatrixXf& dy) {
  RowMajorMap w_grad(weight_.grad.data(), out_features_, in_features_);
  w_grad.noalias() += dy.transpose() * x_;
  bias_.grad += dy.colwise().sum().transpose();
  ConstRowMajorMap w_map(weight_.value.data(), out_features_, in_features_);
  return dy * w_map;
}

BasicBlock::BasicBlock(const std::string& name, int in_channels,
                       int out_channels, int stride)
    : conv1_(name + ".conv1", in_channels, out_channels, 3, stride, 1, false),
      bn1_(name + ".bn1", out_channels),
      conv2_(name + ".conv2", out_channels, out_channels, 3, 1, 1, false),
      bn2_(name + ".bn2", out_channels),
      has_projection_(stride != 1 || in_channels != out_channels) {
  if (has_projection_) {
    proj_ = std::make_unique<Conv2d>(name + ".proj", in_channels, out_channels,
                                     1, stride, 0, false);
    proj_bn_ = std::make_unique<BatchNorm2d>(name + ".proj_bn", out_channels);
  }
}

Tensor BasicBlock::forward(const Tensor& x, bool training) {
  Tensor main = relu1_.forward(bn1_.forward(conv1_.forward(x), training));
  main = bn2_.forward(conv2_.forward(main), training);
  Tensor skip =
      has_projection_ ? proj_bn_->forward(proj_->forward(x), training) : x;
  if (!main.same_shape(skip)) {
    throw ShapeMismatch("residual add shape mismatch: " + main.shape_string() +
                        " vs " + skip.shape_string());
  }
  main.data += skip.data;
  return relu_out_.forward(main);
}

Tensor BasicBlock::backward(const Tensor& dy) {
  const Tensor d_sum = relu_out_.backward(dy);
  Tensor dx_main = conv1_.backward(
      bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(d_sum)))));
  if (has_projection_) {
    dx_main.data += proj_->backward(proj_bn_->backward(d_sum)).data;
  } else {
    dx_main.data += d_sum.data;
  }
  return dx_main;
}

void BasicBlock::init(Rng& rng) {
  conv1_.init(rng);
  conv2_.init(rng);
  if (has_projection_) proj_->init(rng);
}

void BasicBlock::collect(std::vector<Parameter*>& params) {
  conv1_.collect(params);
  bn1_.collect(params);
  conv2_.collect(params);
  bn2_.collect(params);
  if (has_projection_) {
    proj_->collect(params);
    proj_bn_->collect(params);
  }
}

void BasicBlock::collect_buffers(std::vector<Buffer*>& buffers) {
  bn1_.collect_buffers(buffers);
  bn2_.collect_buffers(buffers);
  if (has_projection_) proj_bn_->collect_buffers(buffers);
}

}  // namespace damagelab::nn
