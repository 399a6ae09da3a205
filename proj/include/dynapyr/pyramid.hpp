#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dynapyr/autodiff.hpp"
#include "dynapyr/cost_model.hpp"
#include "dynapyr/gumbel.hpp"
#include "dynapyr/pyramid_config.hpp"
#include "dynapyr/rng.hpp"

namespace dynapyr {

// ---------------------------------------------------------------------------
// Parameters

struct BranchWeights {
  Var weight;  // out x in x k x k
  Var bias;    // out
};

/// Weights of one lateral connection, aligned with InceptionConfig::branches.
struct LateralWeights {
  std::vector<BranchWeights> branches;
};

/// Two-layer gate head: C -> C/4 -> 2 (execute, skip).
struct GateParams {
  Var w1, b1, w2, b2;

  std::size_t channels() const { return w1.value().dim(1); }

  void validate(std::size_t channels) const {
    if (channels % 4 != 0) {
      throw std::invalid_argument("gate: channels " + std::to_string(channels) + " not divisible by 4");
    }
    const std::size_t hidden = channels / 4;
    if (w1.shape() != Shape{hidden, channels} || b1.shape() != Shape{hidden} || w2.shape() != Shape{2, hidden} ||
        b2.shape() != Shape{2}) {
      throw ShapeError("gate: parameters do not match " + std::to_string(channels) + " input channels");
    }
  }
};

/// Uniform in +-sqrt(1 / fan_in).
inline Tensor fan_in_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
  Tensor t(shape);
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

inline BranchWeights init_branch(const ConvSpec& spec, Rng& rng) {
  return {parameter(fan_in_uniform(spec.weight_shape(), spec.in_channels * spec.kernel * spec.kernel, rng)),
          parameter(Tensor(spec.bias_shape()))};
}

inline GateParams init_gate(std::size_t channels, Rng& rng) {
  const std::size_t hidden = channels / 4;
  return {parameter(fan_in_uniform({hidden, channels}, channels, rng)), parameter(Tensor({hidden})),
          parameter(fan_in_uniform({2, hidden}, hidden, rng)), parameter(Tensor({2}))};
}

/// One parameter store for all three variants: every level carries the full
/// branch set and a gate, whichever forward interpretation is used.
struct PyramidParams {
  std::vector<LateralWeights> laterals;
  std::vector<GateParams> gates;

  static PyramidParams init(const PyramidConfig& cfg, Rng& rng) {
    cfg.validate();
    PyramidParams p;
    for (std::size_t l = 0; l < cfg.levels.size(); ++l) {
      LateralWeights lw;
      for (const auto& spec : cfg.full_lateral(l).branches) lw.branches.push_back(init_branch(spec, rng));
      p.laterals.push_back(std::move(lw));
    }
    for (const auto& level : cfg.levels) {
      if (level.channels % 4 == 0) {
        p.gates.push_back(init_gate(level.channels, rng));
      } else {
        p.gates.push_back({});
      }
    }
    return p;
  }
};

// ---------------------------------------------------------------------------
// Lateral connections

inline void check_lateral(const InceptionConfig& cfg, const LateralWeights& w) {
  cfg.validate();
  if (cfg.branches.size() != w.branches.size()) {
    throw ShapeError("lateral: config has " + std::to_string(cfg.branches.size()) + " branches, weights have " +
                     std::to_string(w.branches.size()));
  }
}

inline Var branch_conv(const Var& f, const InceptionConfig& cfg, const LateralWeights& w, std::size_t i) {
  return conv2d(f, cfg.branches[i], w.branches[i].weight, w.branches[i].bias);
}

/// Left-to-right sum of every branch except the skip. Empty when the config
/// only holds the skip.
inline std::optional<Var> gated_branches(const Var& f, const InceptionConfig& cfg, const LateralWeights& w) {
  const std::size_t skip = cfg.skip_branch();
  std::optional<Var> acc;
  for (std::size_t i = 0; i < cfg.branches.size(); ++i) {
    if (i == skip) continue;
    Var out = branch_conv(f, cfg, w, i);
    acc = acc ? add(*acc, out) : out;
  }
  return acc;
}

/// skip(f) + (b_1 + b_2 + ... ), the sum of all branch outputs. The gated
/// branches are folded first so that an executed dynamic block reproduces
/// this value bit for bit.
inline Var inception_lateral(const Var& f, const InceptionConfig& cfg, const LateralWeights& w) {
  check_lateral(cfg, w);
  Var skip = branch_conv(f, cfg, w, cfg.skip_branch());
  auto rest = gated_branches(f, cfg, w);
  return rest ? add(skip, *rest) : skip;
}

/// P_top = L_top; P_l = L_l + up2(P_{l+1}). Input and output are finest first.
inline std::vector<Var> build_pyramid(const std::vector<Var>& laterals) {
  if (laterals.empty()) throw ShapeError("build_pyramid: no levels");
  for (std::size_t l = 0; l < laterals.size(); ++l) require_rank(laterals[l].value(), 3, "build_pyramid", "lateral");
  for (std::size_t l = 1; l < laterals.size(); ++l) {
    const auto& fine = laterals[l - 1].value();
    const auto& coarse = laterals[l].value();
    if (fine.channels() != coarse.channels()) {
      throw ShapeError("build_pyramid: level " + std::to_string(l) + " has " + std::to_string(coarse.channels()) +
                       " channels, level " + std::to_string(l - 1) + " has " + std::to_string(fine.channels()));
    }
    if (fine.height() != 2 * coarse.height() || fine.width() != 2 * coarse.width()) {
      throw ShapeError("build_pyramid: level " + std::to_string(l) + " spatial " + shape_string(coarse.shape()) +
                       " is not half of level " + std::to_string(l - 1) + " " + shape_string(fine.shape()));
    }
  }
  std::vector<Var> out(laterals.size());
  out.back() = laterals.back();
  for (std::size_t l = laterals.size() - 1; l-- > 0;) out[l] = add(laterals[l], upsample_nearest2x(out[l + 1]));
  return out;
}

// ---------------------------------------------------------------------------
// Gates

/// w2 . relu(w1 . pool(f) + b1) + b2
inline Var gate_logits(const Var& f, const GateParams& gate) {
  require_rank(f.value(), 3, "gate_logits", "input");
  gate.validate(f.value().channels());
  return affine(relu(affine(global_avg_pool(f), gate.w1, gate.b1)), gate.w2, gate.b2);
}

enum class Mode { train, test };

/// Per-level gate outcome. Entry 0 is execute, entry 1 is skip.
struct GateDecision {
  std::array<double, 2> hard{0.0, 0.0};
  std::array<double, 2> soft{0.0, 0.0};
  std::array<double, 2> logits{0.0, 0.0};
  std::array<double, 2> noise{0.0, 0.0};

  bool execute() const noexcept { return hard[0] == 1.0; }
};

/// Decision plus the differentiable execute value g that multiplies the
/// gated branches.
struct GateOutput {
  GateDecision decision;
  Var execute_value;
};

/// Train mode samples Gumbel noise and returns a straight-through one-hot
/// (or the soft relaxation when `soft` is set). Test mode is the noise-free
/// argmax of the logits.
inline GateOutput gate_sample(const Var& logits, double tau, Mode mode, Rng& rng, bool soft = false) {
  if (logits.size() != 2) throw ShapeError("gate: expected 2 logits, got " + shape_string(logits.shape()));
  require_positive_tau(tau);
  GateOutput out;
  auto& d = out.decision;
  d.logits = {logits.value()[0], logits.value()[1]};
  if (mode == Mode::train) d.noise = {gumbel_sample(rng), gumbel_sample(rng)};
  const auto s = gumbel_softmax_soft(d.logits, d.noise, tau);
  d.soft = {s[0], s[1]};
  const std::size_t winner = perturbed_argmax(d.logits, d.noise);
  d.hard[winner] = 1.0;
  if (mode == Mode::train) {
    out.execute_value = select(gumbel_softmax(logits, d.noise, tau, !soft), 0);
  } else {
    out.execute_value = constant(Tensor::scalar(d.hard[0]));
  }
  return out;
}

inline GateDecision gate_decide(const Var& logits, double tau, Mode mode, Rng& rng) {
  return gate_sample(logits, tau, mode, rng).decision;
}

/// A decision imposed from outside the gate (forced or random).
inline GateDecision imposed_decision(bool execute) {
  GateDecision d;
  d.hard = execute ? std::array<double, 2>{1.0, 0.0} : std::array<double, 2>{0.0, 1.0};
  d.soft = d.hard;
  return d;
}

// ---------------------------------------------------------------------------
// Dynamic block

struct ForwardOptions {
  Mode mode = Mode::test;
  double tau = 1.0;
  /// Train mode only: multiply by the soft gate value instead of the
  /// straight-through one-hot. Used for finite-difference checks.
  bool soft_gates = false;
  /// Overrides the gates with fixed per-level execute flags.
  std::optional<std::vector<bool>> forced;
};

struct LateralResult {
  Var output;
  GateDecision decision;
  Flops branch_flops = 0;  ///< branch FLOPs charged for this input
  Var execute_value;       ///< differentiable g (train mode)
};

/// skip(f) + g * branches(f). In test mode a skipped block is not evaluated
/// at all and an executed one is added without the multiply.
inline LateralResult dyfpn_lateral(const Var& f, const InceptionConfig& cfg, const LateralWeights& w, const GateParams& gate,
                                   const ForwardOptions& opt, Rng& rng, Flops branch_cost, std::optional<bool> forced = {}) {
  check_lateral(cfg, w);
  LateralResult r;
  if (forced) {
    r.decision = imposed_decision(*forced);
    r.execute_value = constant(Tensor::scalar(*forced ? 1.0 : 0.0));
  } else {
    auto g = gate_sample(gate_logits(f, gate), opt.tau, opt.mode, rng, opt.soft_gates);
    r.decision = g.decision;
    r.execute_value = g.execute_value;
  }
  const bool execute = r.decision.execute();
  r.branch_flops = execute ? branch_cost : 0;

  Var skip = branch_conv(f, cfg, w, cfg.skip_branch());
  if (opt.mode == Mode::test) {
    if (!execute) {
      r.output = skip;
      return r;
    }
    auto rest = gated_branches(f, cfg, w);
    r.output = rest ? add(skip, *rest) : skip;
    return r;
  }
  auto rest = gated_branches(f, cfg, w);
  r.output = rest ? add(skip, mul_scalar(*rest, r.execute_value)) : skip;
  return r;
}

// ---------------------------------------------------------------------------
// Whole pyramid

struct PyramidOutput {
  std::vector<Var> levels;               ///< P_2..P_5, finest first
  std::vector<GateDecision> decisions;   ///< DyFPN only
  std::vector<bool> executed;            ///< per-level block execution
  Flops realized_cost = 0;
  Var cost;                              ///< differentiable c_r (DyFPN train mode)
};

inline void check_features(const PyramidConfig& cfg, const std::vector<Var>& features) {
  if (features.size() != cfg.levels.size()) {
    throw ShapeError("pyramid: expected " + std::to_string(cfg.levels.size()) + " feature levels, got " +
                     std::to_string(features.size()));
  }
  for (std::size_t l = 0; l < features.size(); ++l) {
    const auto& v = features[l].value();
    const auto& s = cfg.levels[l];
    if (v.shape() != Shape{s.channels, s.height, s.width}) {
      throw ShapeError("pyramid: level " + std::to_string(l) + " feature " + shape_string(v.shape()) + " != expected " +
                       shape_string({s.channels, s.height, s.width}));
    }
  }
}

/// Applies the variant's lateral connections and the top-down pathway.
/// `ledger` must come from cost_bounds(cfg).
inline PyramidOutput pyramid_forward(const PyramidConfig& cfg, const PyramidParams& params, const CostLedger& ledger,
                                     const std::vector<Var>& features, const ForwardOptions& opt, Rng& rng) {
  check_features(cfg, features);
  if (opt.forced && opt.forced->size() != cfg.levels.size()) {
    throw std::invalid_argument("pyramid: " + std::to_string(opt.forced->size()) + " forced decisions for " +
                                std::to_string(cfg.levels.size()) + " levels");
  }
  PyramidOutput out;
  std::vector<Var> laterals;
  const std::size_t L = cfg.levels.size();

  if (cfg.variant != Variant::dyfpn) {
    for (std::size_t l = 0; l < L; ++l) {
      const auto lateral = cfg.lateral(l);
      if (cfg.variant == Variant::fpn) {
        laterals.push_back(branch_conv(features[l], lateral, params.laterals[l], lateral.skip_branch()));
      } else {
        laterals.push_back(inception_lateral(features[l], lateral, params.laterals[l]));
      }
    }
    out.executed.assign(L, cfg.variant == Variant::inception);
    out.realized_cost = ledger.realized(out.executed);
    out.levels = build_pyramid(laterals);
    return out;
  }

  Var cost = constant(Tensor::scalar(static_cast<double>(ledger.c_min)));
  for (std::size_t l = 0; l < L; ++l) {
    std::optional<bool> forced;
    if (opt.forced) forced = (*opt.forced)[l];
    auto r = dyfpn_lateral(features[l], cfg.lateral(l), params.laterals[l], params.gates[l], opt, rng,
                           ledger.per_level_branch_cost[l], forced);
    laterals.push_back(r.output);
    out.decisions.push_back(r.decision);
    out.executed.push_back(r.decision.execute());
    if (opt.mode == Mode::train) {
      cost = add(cost, scale(r.execute_value, static_cast<double>(ledger.per_level_branch_cost[l])));
    }
  }
  out.realized_cost = ledger.realized(out.executed);
  out.cost = opt.mode == Mode::train ? cost : constant(Tensor::scalar(static_cast<double>(out.realized_cost)));
  out.levels = build_pyramid(laterals);
  return out;
}

}  // namespace dynapyr
