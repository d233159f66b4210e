#pragma once

#include <string>

#include "segfool/attack.hpp"

namespace segfool {

/// Comparison objectives, each a reconstruction of the cited method's core
/// idea adapted to the shared universal-perturbation loop (same budget,
/// projection, data and iteration count).
enum class BaselineKind { Uap, UapGd, Ssp, SegPgd, AttackSam };

std::string to_string(BaselineKind kind);
BaselineKind parse_baseline_kind(const std::string& name);

LossBuilder baseline_loss(BaselineKind kind, const AttackConfig& cfg);

Uap craft_baseline(BaselineKind kind, const MiniSam<float>& model,
                   const std::vector<Sample>& train, const AttackConfig& cfg,
                   const CraftHooks& hooks = {});

}  // namespace segfool
