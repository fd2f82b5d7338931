#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "damagelab/types.hpp"

namespace damagelab {

enum class LossKind : int {
  kCrossEntropy = 0,
  kMse = 1,
  kOrdinalCrossEntropy = 2,
};

LossKind loss_kind_from_string(const std::string& s);
const std::string& loss_kind_string(LossKind kind);

// Head width implied by the loss: 4 softmax logits, 1 scalar, or 3
// threshold logits.
inline int head_width(LossKind kind) {
  switch (kind) {
    case LossKind::kCrossEntropy: return 4;
    case LossKind::kMse: return 1;
    case LossKind::kOrdinalCrossEntropy: return 3;
  }
  return 0;
}

enum class OrdinalDecodeRule : int { kScan = 0, kBitCount = 1 };

OrdinalDecodeRule decode_rule_from_string(const std::string& s);
const std::string& decode_rule_string(OrdinalDecodeRule rule);

namespace losses {

// Clamp applied only where probabilities are consumed directly; the logit
// paths below never need it.
constexpr double kProbEpsilon = 1e-7;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
Scalar log_sum_exp(const Eigen::Ref<const Vector<Scalar>>& z) {
  const Scalar m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

// softplus(z) = log(1 + e^z), computed without overflow.
template <typename Scalar>
Scalar softplus(Scalar z) {
  return std::log1p(std::exp(-std::abs(z))) + std::max(z, Scalar(0));
}

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  if (z >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-z));
  const Scalar e = std::exp(z);
  return e / (Scalar(1) + e);
}

// -log p[target] from explicit probabilities.
template <typename Scalar>
Scalar cross_entropy_from_probs(const Eigen::Ref<const Vector<Scalar>>& probs,
                                DamageClass target) {
  const Scalar p = std::max(probs(class_index(target)),
                            static_cast<Scalar>(kProbEpsilon));
  return -std::log(p);
}

// Stable cross-entropy from logits; optional gradient w.r.t. the logits
// (softmax minus one-hot).
template <typename Scalar>
Scalar cross_entropy_from_logits(const Eigen::Ref<const Vector<Scalar>>& logits,
                                 DamageClass target,
                                 Vector<Scalar>* grad = nullptr) {
  const Scalar lse = log_sum_exp<Scalar>(logits);
  if (grad != nullptr) {
    *grad = (logits.array() - lse).exp();
    (*grad)(class_index(target)) -= Scalar(1);
  }
  return lse - logits(class_index(target));
}

// Mean over the batch of -log p[target], logits row per observation.
template <typename Scalar>
Scalar cross_entropy_batch(const Matrix<Scalar>& logits,
                           std::span<const DamageClass> targets,
                           Matrix<Scalar>* grad = nullptr) {
  const auto b = static_cast<Eigen::Index>(targets.size());
  if (b == 0) throw EmptyBatch("cross_entropy_batch on empty batch");
  if (logits.rows() != b || logits.cols() != 4) {
    throw ShapeMismatch("cross_entropy_batch expects b x 4 logits");
  }
  if (grad != nullptr) grad->resize(b, 4);
  Scalar total = Scalar(0);
  Vector<Scalar> row_grad;
  for (Eigen::Index i = 0; i < b; ++i) {
    const Vector<Scalar> row = logits.row(i).transpose();
    total += cross_entropy_from_logits<Scalar>(
        row, targets[static_cast<std::size_t>(i)],
        grad != nullptr ? &row_grad : nullptr);
    if (grad != nullptr) grad->row(i) = row_grad.transpose() / Scalar(b);
  }
  return total / Scalar(b);
}

// (1/b) * sum (y - yhat)^2 with integer class targets.
template <typename Scalar>
Scalar mse_loss(std::span<const Scalar> preds,
                std::span<const DamageClass> targets,
                std::vector<Scalar>* grad = nullptr) {
  if (preds.empty()) throw EmptyBatch("mse_loss on empty batch");
  if (preds.size() != targets.size()) {
    throw ShapeMismatch("mse_loss batch size mismatch");
  }
  const auto b = static_cast<Scalar>(preds.size());
  if (grad != nullptr) grad->resize(preds.size());
  Scalar total = Scalar(0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const Scalar diff = preds[i] - static_cast<Scalar>(class_index(targets[i]));
    total += diff * diff;
    if (grad != nullptr) (*grad)[i] = Scalar(2) * diff / b;
  }
  return total / b;
}

// Class k -> k ones followed by zeros. Adjacent classes differ in one bit.
inline std::array<int, 3> ordinal_encode(DamageClass target) {
  std::array<int, 3> bits{0, 0, 0};
  for (int k = 0; k < class_index(target); ++k) bits[k] = 1;
  return bits;
}

// Sum of per-threshold binary cross-entropies from explicit sigmoid values.
template <typename Scalar>
Scalar ordinal_ce_from_sigmoid(const Eigen::Ref<const Vector<Scalar>>& sigmoid3,
                               DamageClass target) {
  const auto bits = ordinal_encode(target);
  Scalar total = Scalar(0);
  for (int k = 0; k < 3; ++k) {
    const Scalar s =
        std::clamp(sigmoid3(k), static_cast<Scalar>(kProbEpsilon),
                   Scalar(1) - static_cast<Scalar>(kProbEpsilon));
    total += bits[k] == 1 ? -std::log(s) : -std::log(Scalar(1) - s);
  }
  return total;
}

// Stable form from threshold logits: BCE(z, bit) = softplus(z) - bit * z.
// Gradient w.r.t. each logit is sigmoid(z) - bit.
template <typename Scalar>
Scalar ordinal_ce_from_logits(const Eigen::Ref<const Vector<Scalar>>& logits,
                              DamageClass target,
                              Vector<Scalar>* grad = nullptr) {
  const auto bits = ordinal_encode(target);
  if (grad != nullptr) grad->resize(3);
  Scalar total = Scalar(0);
  for (int k = 0; k < 3; ++k) {
    const Scalar z = logits(k);
    total += softplus(z) - static_cast<Scalar>(bits[k]) * z;
    if (grad != nullptr) (*grad)(k) = sigmoid(z) - static_cast<Scalar>(bits[k]);
  }
  return total;
}

template <typename Scalar>
Scalar ordinal_ce_batch(const Matrix<Scalar>& logits,
                        std::span<const DamageClass> targets,
                        Matrix<Scalar>* grad = nullptr) {
  const auto b = static_cast<Eigen::Index>(targets.size());
  if (b == 0) throw EmptyBatch("ordinal_ce_batch on empty batch");
  if (logits.rows() != b || logits.cols() != 3) {
    throw ShapeMismatch("ordinal_ce_batch expects b x 3 logits");
  }
  if (grad != nullptr) grad->resize(b, 3);
  Scalar total = Scalar(0);
  Vector<Scalar> row_grad;
  for (Eigen::Index i = 0; i < b; ++i) {
    const Vector<Scalar> row = logits.row(i).transpose();
    total += ordinal_ce_from_logits<Scalar>(
        row, targets[static_cast<std::size_t>(i)],
        grad != nullptr ? &row_grad : nullptr);
    if (grad != nullptr) grad->row(i) = row_grad.transpose() / Scalar(b);
  }
  return total / Scalar(b);
}

// Consecutive-scan decode: largest k with sigmoid3[0..k-1] all above 0.5.
// kBitCount counts all bits above 0.5; the two differ only on non-monotone
// outputs.
template <typename Scalar>
DamageClass ordinal_decode(const Eigen::Ref<const Vector<Scalar>>& sigmoid3,
                           OrdinalDecodeRule rule = OrdinalDecodeRule::kScan) {
  int k = 0;
  if (rule == OrdinalDecodeRule::kScan) {
    while (k < 3 && sigmoid3(k) > Scalar(0.5)) ++k;
  } else {
    for (int i = 0; i < 3; ++i) {
      if (sigmoid3(i) > Scalar(0.5)) ++k;
    }
  }
  return damage_class_from_index(k);
}

// Round to nearest (ties away from zero), clamp to the class range.
template <typename Scalar>
DamageClass mse_decode(Scalar scalar) {
  if (!std::isfinite(static_cast<double>(scalar))) {
    throw NonFinite("mse_decode input is not finite");
  }
  const auto rounded = static_cast<int>(std::round(static_cast<double>(scalar)));
  return damage_class_from_index(std::clamp(rounded, 0, kNumClasses - 1));
}

}  // namespace losses
}  // namespace damagelab
