#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace damagelab {

// Domain error with a stable taxonomy name, printed by the CLI and asserted
// in tests. `kind()` is the machine-readable half; what() carries detail.
class DomainError : public std::runtime_error {
 public:
  DomainError(std::string kind, const std::string& message)
      : std::runtime_error(kind + ": " + message), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

#define DAMAGELAB_DEFINE_ERROR(Name)                          \
  struct Name : DomainError {                                 \
    explicit Name(const std::string& m) : DomainError(#Name, m) {} \
  }

DAMAGELAB_DEFINE_ERROR(MalformedLabelFile);
DAMAGELAB_DEFINE_ERROR(UnknownDisasterType);
DAMAGELAB_DEFINE_ERROR(InvalidPolygon);
DAMAGELAB_DEFINE_ERROR(EmptyDataset);
DAMAGELAB_DEFINE_ERROR(InvalidBBox);
DAMAGELAB_DEFINE_ERROR(InsufficientClass);
DAMAGELAB_DEFINE_ERROR(InvalidRatio);
DAMAGELAB_DEFINE_ERROR(DuplicateUid);
DAMAGELAB_DEFINE_ERROR(IoFailure);
DAMAGELAB_DEFINE_ERROR(EmptyBatch);
DAMAGELAB_DEFINE_ERROR(NonFinite);
DAMAGELAB_DEFINE_ERROR(ShapeMismatch);
DAMAGELAB_DEFINE_ERROR(WeightLoadFailure);
DAMAGELAB_DEFINE_ERROR(ConfigMismatch);
DAMAGELAB_DEFINE_ERROR(InvalidConfig);
DAMAGELAB_DEFINE_ERROR(DivergenceDetected);
DAMAGELAB_DEFINE_ERROR(EmptyEvalSet);
DAMAGELAB_DEFINE_ERROR(UnknownLayer);
DAMAGELAB_DEFINE_ERROR(InfeasiblePacking);

#undef DAMAGELAB_DEFINE_ERROR

// 64-bit FNV-1a. Used for config hashes and artifact checksums; stable
// across runs and platforms, which std::hash does not guarantee.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  std::uint64_t h = seed;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string to_hex(std::uint64_t value);

// Derives an independent stream seed from a base seed and a stream index
// (splitmix64 finalizer), so per-scene / per-class generators never overlap.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic RNG wrapper. Sampling algorithms are pinned here instead of
// relying on std:: distributions, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [lo, hi] by rejection-free scaling (bias negligible
  // for the ranges used here, and fully deterministic).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(gen_() % span);
  }

  // Standard normal via Box-Muller, one value per call (cached pair).
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(
          uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace damagelab
