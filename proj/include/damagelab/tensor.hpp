#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "damagelab/common.hpp"

namespace damagelab::nn {

// Dense NCHW activation tensor backed by a flat Eigen vector.
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  Eigen::VectorXf data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        data(Eigen::VectorXf::Zero(
            static_cast<Eigen::Index>(n_) * c_ * h_ * w_)) {}

  Eigen::Index size() const { return data.size(); }
  Eigen::Index plane() const { return static_cast<Eigen::Index>(h) * w; }

  float& at(int in, int ic, int iy, int ix) {
    return data[((static_cast<Eigen::Index>(in) * c + ic) * h + iy) * w + ix];
  }
  float at(int in, int ic, int iy, int ix) const {
    return data[((static_cast<Eigen::Index>(in) * c + ic) * h + iy) * w + ix];
  }

  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  std::string shape_string() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" +
           std::to_string(h) + "x" + std::to_string(w);
  }
};

// Trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  std::vector<int> shape;
  Eigen::VectorXf value;
  Eigen::VectorXf grad;

  Parameter() = default;
  Parameter(std::string name_, std::vector<int> shape_)
      : name(std::move(name_)), shape(std::move(shape_)) {
    Eigen::Index total = 1;
    for (int d : shape) total *= d;
    value = Eigen::VectorXf::Zero(total);
    grad = Eigen::VectorXf::Zero(total);
  }
};

// Non-trainable state carried by a layer (batch-norm running statistics).
struct Buffer {
  std::string name;
  Eigen::VectorXf value;
};

}  // namespace damagelab::nn
