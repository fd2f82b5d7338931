#include "damagelab/losses.hpp"

namespace damagelab {

namespace {
const std::array<std::string, 3> kLossStrings = {"ce", "mse", "ordinal"};
const std::array<std::string, 2> kDecodeStrings = {"scan", "count"};
}  // namespace

LossKind loss_kind_from_string(const std::string& s) {
  for (int i = 0; i < 3; ++i) {
    if (kLossStrings[i] == s) return static_cast<LossKind>(i);
  }
  throw InvalidConfig("unknown loss kind \"" + s + "\" (expected ce|mse|ordinal)");
}

const std::string& loss_kind_string(LossKind kind) {
  return kLossStrings[static_cast<std::size_t>(kind)];
}

OrdinalDecodeRule decode_rule_from_string(const std::string& s) {
  for (int i = 0; i < 2; ++i) {
    if (kDecodeStrings[i] == s) return static_cast<OrdinalDecodeRule>(i);
  }
  throw InvalidConfig("unknown ordinal decode rule \"" + s +
                      "\" (expected scan|count)");
}

const std::string& decode_rule_string(OrdinalDecodeRule rule) {
  return kDecodeStrings[static_cast<std::size_t>(rule)];
}

}  // namespace damagelab
