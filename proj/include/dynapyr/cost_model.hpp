#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dynapyr/autodiff.hpp"
#include "dynapyr/conv.hpp"
#include "dynapyr/pyramid_config.hpp"

// FLOPs convention used throughout: a multiply-accumulate is 2 FLOPs, a bias
// add is 1 FLOP per output element, pooling is 1 FLOP per input element, and
// each elementwise add of a branch summation is 1 FLOP per element. ReLU,
// softmax and nearest-neighbour copies are free.

namespace dynapyr {

using Flops = std::uint64_t;

inline Flops flops_conv(const ConvSpec& spec, std::size_t height, std::size_t width) {
  spec.validate();
  if (height == 0 || width == 0) throw std::invalid_argument("flops_conv: spatial dims must be positive");
  const Flops out_elems = static_cast<Flops>(spec.out_extent(height)) * spec.out_extent(width);
  const Flops taps = static_cast<Flops>(spec.in_channels) * spec.kernel * spec.kernel;
  return 2 * taps * spec.out_channels * out_elems + spec.out_channels * out_elems;
}

/// Pool, C -> C/4 affine, C/4 -> 2 affine.
inline Flops flops_gate(std::size_t channels, std::size_t height, std::size_t width) {
  if (channels == 0 || height == 0 || width == 0) throw std::invalid_argument("flops_gate: dims must be positive");
  if (channels % 4 != 0) {
    throw std::invalid_argument("flops_gate: channels " + std::to_string(channels) + " not divisible by 4");
  }
  const Flops c = channels, hidden = channels / 4;
  return c * height * width + (2 * c * hidden + hidden) + (2 * hidden * 2 + 2);
}

/// Cost of one elementwise tensor add.
inline constexpr Flops flops_add(std::size_t elements) { return elements; }

/// Per-level breakdown of a lateral connection.
struct LevelCost {
  Flops skip = 0;      ///< 1x1 skip convolution
  Flops gate = 0;      ///< dynamic gate (zero for ungated variants)
  Flops branches = 0;  ///< gated branches plus the adds that merge them
};

/// FLOPs bounds of the dynamic blocks. Backbone, head and top-down fusion
/// never enter these numbers.
struct CostLedger {
  Flops c_min = 0;
  Flops c_max = 0;
  double c_target = 0.0;
  std::vector<Flops> per_level_branch_cost;
  std::vector<LevelCost> levels;

  Flops span() const noexcept { return c_max - c_min; }

  /// c_min plus the branch cost of every executed level.
  Flops realized(const std::vector<bool>& executed) const {
    if (executed.size() != per_level_branch_cost.size()) {
      throw std::invalid_argument("CostLedger::realized: " + std::to_string(executed.size()) + " decisions for " +
                                  std::to_string(per_level_branch_cost.size()) + " levels");
    }
    Flops c = c_min;
    for (std::size_t l = 0; l < executed.size(); ++l) c += executed[l] ? per_level_branch_cost[l] : 0;
    return c;
  }

  /// (c - c_min) / (c_max - c_min); 0 for a degenerate ledger.
  double normalized(double c) const {
    return span() == 0 ? 0.0 : (c - static_cast<double>(c_min)) / static_cast<double>(span());
  }
};

struct BudgetConfig {
  double alpha_budget = 0.5;
  double lambda = 0.1;

  void validate() const {
    if (!(alpha_budget > 0.0 && alpha_budget <= 1.0)) {
      throw std::invalid_argument("alpha_budget must lie in (0, 1], got " + std::to_string(alpha_budget));
    }
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0, got " + std::to_string(lambda));
  }
};

inline double target_cost(const CostLedger& ledger, double alpha_budget) {
  return static_cast<double>(ledger.c_min) + alpha_budget * static_cast<double>(ledger.span());
}

inline LevelCost level_cost(const PyramidConfig& cfg, std::size_t level) {
  const auto& shape = cfg.levels.at(level);
  const auto lateral = cfg.lateral(level);
  LevelCost lc;
  const std::size_t skip = lateral.skip_branch();
  lc.skip = flops_conv(lateral.branches[skip], shape.height, shape.width);
  if (cfg.gated()) lc.gate = flops_gate(shape.channels, shape.height, shape.width);
  const std::size_t gated = lateral.gated_branch_count();
  for (std::size_t i = 0; i < lateral.branches.size(); ++i) {
    if (i != skip) lc.branches += flops_conv(lateral.branches[i], shape.height, shape.width);
  }
  // gated - 1 adds inside the block, one more to merge with the skip path
  lc.branches += gated * flops_add(cfg.out_channels * shape.height * shape.width);
  return lc;
}

/// c_min runs every skip conv and gate, c_max additionally every gated branch.
inline CostLedger cost_bounds(const PyramidConfig& cfg, double alpha_budget = 1.0) {
  cfg.validate();
  CostLedger ledger;
  for (std::size_t l = 0; l < cfg.levels.size(); ++l) {
    const auto lc = level_cost(cfg, l);
    ledger.levels.push_back(lc);
    ledger.c_min += lc.skip + lc.gate;
    ledger.per_level_branch_cost.push_back(lc.branches);
  }
  ledger.c_max = ledger.c_min + std::accumulate(ledger.per_level_branch_cost.begin(), ledger.per_level_branch_cost.end(), Flops{0});
  ledger.c_target = target_cost(ledger, alpha_budget);
  return ledger;
}

/// ((c_r - c_target) / (c_max - c_min))^2; identically 0 when c_max == c_min.
inline double resource_loss(double c_r, const BudgetConfig& budget, const CostLedger& ledger) {
  if (ledger.span() == 0) return 0.0;
  const double z = (c_r - target_cost(ledger, budget.alpha_budget)) / static_cast<double>(ledger.span());
  return z * z;
}

inline Var resource_loss(const Var& c_r, const BudgetConfig& budget, const CostLedger& ledger) {
  if (ledger.span() == 0) return scale(c_r, 0.0);
  return square(scale(add_scalar(c_r, -target_cost(ledger, budget.alpha_budget)), 1.0 / static_cast<double>(ledger.span())));
}

inline double total_loss(double l_det, double l_c, double lambda) { return l_det + lambda * l_c; }

inline Var total_loss(const Var& l_det, const Var& l_c, double lambda) { return add(l_det, scale(l_c, lambda)); }

}  // namespace dynapyr
