#pragma once

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "damagelab/model.hpp"
#include "damagelab/types.hpp"

namespace testsupport {

// Central finite differences, the independent gradient oracle used against
// every analytic gradient in the suite.
inline Eigen::VectorXd finite_difference_gradient(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double step = 1e-5) {
  Eigen::VectorXd grad(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd hi = x;
    Eigen::VectorXd lo = x;
    hi(i) += step;
    lo(i) -= step;
    grad(i) = (f(hi) - f(lo)) / (2.0 * step);
  }
  return grad;
}

inline double max_relative_error(const Eigen::VectorXd& analytic,
                                 const Eigen::VectorXd& numeric) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double scale =
        std::max({std::abs(analytic(i)), std::abs(numeric(i)), 1e-8});
    worst = std::max(worst, std::abs(analytic(i) - numeric(i)) / scale);
  }
  return worst;
}

// Naive dense 2D convolution in double, the reference the GEMM path is
// checked against. Weight layout matches Conv2d: [out][in][ky][kx].
inline damagelab::nn::Tensor reference_conv2d(
    const damagelab::nn::Tensor& x, const Eigen::VectorXf& weight, int out_ch,
    int in_ch, int ksize, int stride, int pad) {
  const int ho = (x.h + 2 * pad - ksize) / stride + 1;
  const int wo = (x.w + 2 * pad - ksize) / stride + 1;
  damagelab::nn::Tensor out(x.n, out_ch, ho, wo);
  for (int n = 0; n < x.n; ++n) {
    for (int oc = 0; oc < out_ch; ++oc) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          for (int ic = 0; ic < in_ch; ++ic) {
            for (int ky = 0; ky < ksize; ++ky) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= x.h) continue;
              for (int kx = 0; kx < ksize; ++kx) {
                const int ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= x.w) continue;
                const double w = weight[((static_cast<Eigen::Index>(oc) *
                                              in_ch +
                                          ic) *
                                             ksize +
                                         ky) *
                                            ksize +
                                        kx];
                acc += w * x.at(n, ic, iy, ix);
              }
            }
          }
          out.at(n, oc, oy, ox) = static_cast<float>(acc);
        }
      }
    }
  }
  return out;
}

inline damagelab::ImageU8 solid_image(int side, std::uint8_t r, std::uint8_t g,
                                      std::uint8_t b) {
  damagelab::ImageU8 img(side, side, 3);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  }
  return img;
}

inline damagelab::ImageU8 random_image(int side, std::uint64_t seed) {
  damagelab::Rng rng(seed);
  damagelab::ImageU8 img(side, side, 3);
  for (auto& p : img.pixels) {
    p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  }
  return img;
}

// A learnable-by-construction record: each class gets a distinct pixel
// signature plus seed-dependent jitter.
inline damagelab::BuildingRecord class_coded_record(int klass, int index,
                                                    int side,
                                                    std::uint64_t seed) {
  using namespace damagelab;
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(klass * 10000 + index)));
  BuildingRecord record;
  record.label = damage_class_from_index(klass);
  record.disaster_type =
      static_cast<DisasterType>(rng.uniform_int(0, kNumDisasterTypes - 1));
  record.bbox_area = 3000 + klass;
  record.scene_id = "fixture";
  record.uid = "c" + std::to_string(klass) + "_" + std::to_string(index);
  const auto base = static_cast<std::uint8_t>(40 + 60 * klass);
  record.crop_pre = solid_image(side, 128, 128, 128);
  record.crop_post = ImageU8(side, side, 3);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double n = rng.normal() * 10.0;
      for (int c = 0; c < 3; ++c) {
        const double v = static_cast<double>(base) + n + 8.0 * c;
        record.crop_post.at(y, x, c) = static_cast<std::uint8_t>(
            std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return record;
}

inline std::vector<damagelab::BuildingRecord> class_coded_records(
    int per_class, int side, std::uint64_t seed) {
  std::vector<damagelab::BuildingRecord> records;
  for (int klass = 0; klass < damagelab::kNumClasses; ++klass) {
    for (int i = 0; i < per_class; ++i) {
      records.push_back(class_coded_record(klass, i, side, seed));
    }
  }
  return records;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("damagelab_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace testsupport
