#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "damagelab/tensor.hpp"

namespace damagelab::nn {

// 2D convolution, im2col + GEMM. When `split_input_halves` is set (used by
// stems adapted from 3 to 6 channels) the forward pass runs one GEMM per
// input-channel half and sums the results; with duplicate-and-halve kernels
// this makes a duplicated input reproduce the 3-channel activation to the
// bit, because halving only touches exponents and the two half products
// recombine exactly.
class Conv2d {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, int ksize,
         int stride, int pad, bool bias);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  void init(Rng& rng);
  void collect(std::vector<Parameter*>& params);

  int out_side(int in_side) const {
    return (in_side + 2 * pad_ - ksize_) / stride_ + 1;
  }

  float weight_at(int oc, int ic, int ky, int kx) const;
  float& weight_at(int oc, int ic, int ky, int kx);

  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }
  int ksize() const { return ksize_; }
  int stride() const { return stride_; }
  int pad() const { return pad_; }
  Parameter& weight() { return weight_; }
  void set_split_input_halves(bool on) { split_input_halves_ = on; }
  bool split_input_halves() const { return split_input_halves_; }

 private:
  void im2col(const Tensor& x, Eigen::MatrixXf& cols) const;
  void col2im(const Eigen::MatrixXf& cols, Tensor& dx) const;

  std::string name_;
  int in_channels_;
  int out_channels_;
  int ksize_;
  int stride_;
  int pad_;
  bool has_bias_;
  bool split_input_halves_ = false;

  Parameter weight_;  // [out, in, k, k]
  Parameter bias_;    // [out]

  Eigen::MatrixXf cols_;  // cached for backward
  int cached_n_ = 0, cached_h_ = 0, cached_w_ = 0;
};

class BatchNorm2d {
 public:
  explicit BatchNorm2d(std::string name, int channels, float eps = 1e-5f,
                       float momentum = 0.1f);

  Tensor forward(const Tensor& x, bool training);
  Tensor backward(const Tensor& dy);
  void collect(std::vector<Parameter*>& params);
  void collect_buffers(std::vector<Buffer*>& buffers);

 private:
  std::string name_;
  int channels_;
  float eps_;
  float momentum_;

  Parameter gamma_;
  Parameter beta_;
  Buffer running_mean_;
  Buffer running_var_;

  bool cached_training_ = false;
  Tensor xhat_;
  Eigen::VectorXf inv_std_;  // per channel, for the cached mode
};

class ReLU {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy) const;

 private:
  Tensor out_;
};

class MaxPool2d {
 public:
  MaxPool2d(int ksize, int stride, int pad);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy) const;
  int out_side(int in_side) const {
    return (in_side + 2 * pad_ - ksize_) / stride_ + 1;
  }

 private:
  int ksize_;
  int stride_;
  int pad_;
  std::vector<Eigen::Index> argmax_;
  int in_n_ = 0, in_c_ = 0, in_h_ = 0, in_w_ = 0;
  int out_h_ = 0, out_w_ = 0;
};

class GlobalAvgPool {
 public:
  // (N,C,H,W) -> N x C feature matrix.
  Eigen::MatrixXf forward(const Tensor& x);
  Tensor backward(const Eigen::MatrixXf& dy) const;

 private:
  int in_n_ = 0, in_c_ = 0, in_h_ = 0, in_w_ = 0;
};

class Linear {
 public:
  Linear(std::string name, int in_features, int out_features);

  Eigen::MatrixXf forward(const Eigen::MatrixXf& x);
  Eigen::MatrixXf backward(const Eigen::MatrixXf& dy);
  void init(Rng& rng);
  void collect(std::vector<Parameter*>& params);

  int in_features() const { return in_features_; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  std::string name_;
  int in_features_;
  int out_features_;
  Parameter weight_;  // [out, in]
  Parameter bias_;    // [out]
  Eigen::MatrixXf x_;
};

// Standard residual basic block: two 3x3 conv+bn stages, identity or
// projected (1x1 conv+bn) skip, ReLU after the sum.
class BasicBlock {
 public:
  BasicBlock(const std::string& name, int in_channels, int out_channels,
             int stride);

  Tensor forward(const Tensor& x, bool training);
  Tensor backward(const Tensor& dy);
  void init(Rng& rng);
  void collect(std::vector<Parameter*>& params);
  void collect_buffers(std::vector<Buffer*>& buffers);

 private:
  Conv2d conv1_;
  BatchNorm2d bn1_;
  ReLU relu1_;
  Conv2d conv2_;
  BatchNorm2d bn2_;
  bool has_projection_;
  std::unique_ptr<Conv2d> proj_;
  std::unique_ptr<BatchNorm2d> proj_bn_;
  ReLU relu_out_;
};

}  // namespace damagelab::nn
