#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dynapyr/autodiff.hpp"
#include "dynapyr/cost_model.hpp"
#include "dynapyr/dataset.hpp"
#include "dynapyr/pyramid.hpp"

namespace dynapyr {

/// Architecture of the toy detector: fixed 2x2 average-pool stem, four
/// stride-2 3x3 conv+ReLU stages, the pyramid, and a 1x1 head per level.
struct ModelConfig {
  std::array<std::size_t, kLevelCount> widths{16, 32, 64, 128};
  std::size_t pyramid_channels = 16;
  Variant variant = Variant::dyfpn;
  std::vector<std::size_t> kernels{std::begin(InceptionConfig::kDefaultKernels), std::end(InceptionConfig::kDefaultKernels)};
  std::vector<std::size_t> dilations{std::begin(InceptionConfig::kDefaultDilations), std::end(InceptionConfig::kDefaultDilations)};

  PyramidConfig pyramid() const {
    PyramidConfig p;
    for (std::size_t l = 0; l < kLevelCount; ++l) p.levels.push_back({widths[l], kLevelGrid[l], kLevelGrid[l]});
    p.out_channels = pyramid_channels;
    p.variant = variant;
    p.kernels = kernels;
    p.dilations = dilations;
    return p;
  }

  ConvSpec stage(std::size_t i) const {
    return ConvSpec{i == 0 ? std::size_t{3} : widths[i - 1], widths[i], 3, 1, 1, 2};
  }

  ConvSpec head() const { return ConvSpec::same(pyramid_channels, 1, 1); }
};

/// A named trainable tensor. Names fix the checkpoint manifest order.
struct NamedParam {
  std::string name;
  Var var;
};

struct Model {
  ModelConfig config;
  std::vector<BranchWeights> backbone;
  PyramidParams pyramid;
  std::vector<BranchWeights> heads;

  static Model init(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng = Rng(seed).fork(0x1A17);
    Model m;
    m.config = cfg;
    for (std::size_t i = 0; i < kLevelCount; ++i) m.backbone.push_back(init_branch(cfg.stage(i), rng));
    m.pyramid = PyramidParams::init(cfg.pyramid(), rng);
    for (std::size_t l = 0; l < kLevelCount; ++l) m.heads.push_back(init_branch(cfg.head(), rng));
    return m;
  }

  std::vector<NamedParam> parameters() const {
    std::vector<NamedParam> out;
    for (std::size_t i = 0; i < backbone.size(); ++i) {
      out.push_back({"backbone." + std::to_string(i) + ".weight", backbone[i].weight});
      out.push_back({"backbone." + std::to_string(i) + ".bias", backbone[i].bias});
    }
    for (std::size_t l = 0; l < pyramid.laterals.size(); ++l) {
      const std::string p = "lateral." + std::to_string(l + 2) + ".branch";
      for (std::size_t b = 0; b < pyramid.laterals[l].branches.size(); ++b) {
        out.push_back({p + std::to_string(b) + ".weight", pyramid.laterals[l].branches[b].weight});
        out.push_back({p + std::to_string(b) + ".bias", pyramid.laterals[l].branches[b].bias});
      }
    }
    for (std::size_t l = 0; l < pyramid.gates.size(); ++l) {
      const std::string p = "gate." + std::to_string(l + 2) + ".";
      const auto& g = pyramid.gates[l];
      out.push_back({p + "w1", g.w1});
      out.push_back({p + "b1", g.b1});
      out.push_back({p + "w2", g.w2});
      out.push_back({p + "b2", g.b2});
    }
    for (std::size_t l = 0; l < heads.size(); ++l) {
      out.push_back({"head." + std::to_string(l + 2) + ".weight", heads[l].weight});
      out.push_back({"head." + std::to_string(l + 2) + ".bias", heads[l].bias});
    }
    return out;
  }
};

/// 2x2 mean pooling, 3 x 64 x 64 -> 3 x 32 x 32.
inline Tensor avg_pool2x(const Tensor& x) {
  Tensor out({x.channels(), x.height() / 2, x.width() / 2});
  for (std::size_t c = 0; c < out.channels(); ++c)
    for (std::size_t y = 0; y < out.height(); ++y)
      for (std::size_t xx = 0; xx < out.width(); ++xx)
        out.at(c, y, xx) = 0.25 * (x.at(c, 2 * y, 2 * xx) + x.at(c, 2 * y, 2 * xx + 1) + x.at(c, 2 * y + 1, 2 * xx) +
                                   x.at(c, 2 * y + 1, 2 * xx + 1));
  return out;
}

/// Image -> F2..F5 at 16x16, 8x8, 4x4, 2x2.
inline std::vector<Var> backbone_forward(const Tensor& image, const Model& model) {
  if (image.shape() != Shape{3, kImageSize, kImageSize}) {
    throw ShapeError("backbone: input " + shape_string(image.shape()) + " != expected [3x64x64]");
  }
  std::vector<Var> features;
  Var x = constant(avg_pool2x(image));
  for (std::size_t i = 0; i < kLevelCount; ++i) {
    x = relu(conv2d(x, model.config.stage(i), model.backbone[i].weight, model.backbone[i].bias));
    features.push_back(x);
  }
  return features;
}

inline Flops backbone_flops(const ModelConfig& cfg) {
  Flops total = 3 * kImageSize * kImageSize;  // stem pooling
  std::size_t extent = kImageSize / 2;
  for (std::size_t i = 0; i < kLevelCount; ++i) {
    total += flops_conv(cfg.stage(i), extent, extent);
    extent = cfg.stage(i).out_extent(extent);
  }
  return total;
}

inline Flops head_flops(const ModelConfig& cfg) {
  Flops total = 0;
  for (std::size_t g : kLevelGrid) total += flops_conv(cfg.head(), g, g);
  return total;
}

/// Adds of the top-down pathway (upsampling copies are free).
inline Flops topdown_flops(const ModelConfig& cfg) {
  Flops total = 0;
  for (std::size_t l = 0; l + 1 < kLevelCount; ++l) total += flops_add(cfg.pyramid_channels * kLevelGrid[l] * kLevelGrid[l]);
  return total;
}

inline std::vector<Var> head_forward(const std::vector<Var>& pyramid, const Model& model) {
  std::vector<Var> logits;
  for (std::size_t l = 0; l < pyramid.size(); ++l) {
    logits.push_back(conv2d(pyramid[l], model.config.head(), model.heads[l].weight, model.heads[l].bias));
  }
  return logits;
}

/// Mean over levels of the per-level mean pixel BCE.
inline Var detection_loss(const std::vector<Var>& head_logits, const std::array<Tensor, kLevelCount>& masks) {
  if (head_logits.size() != kLevelCount) {
    throw ShapeError("detection_loss: expected " + std::to_string(kLevelCount) + " levels, got " +
                     std::to_string(head_logits.size()));
  }
  Var total;
  for (std::size_t l = 0; l < kLevelCount; ++l) {
    if (head_logits[l].shape() != masks[l].shape()) {
      throw ShapeError("detection_loss: level " + std::to_string(l + 2) + " prediction " + shape_string(head_logits[l].shape()) +
                       " vs mask " + shape_string(masks[l].shape()));
    }
    Var term = bce_with_logits_mean(head_logits[l], masks[l]);
    total = total ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(kLevelCount));
}

/// IoU of thresholded predictions (logit > 0) pooled over all levels; an
/// image with an empty union scores 1.
inline double mask_iou(const std::vector<Var>& head_logits, const std::array<Tensor, kLevelCount>& masks) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t l = 0; l < kLevelCount; ++l) {
    const auto& z = head_logits[l].value();
    for (std::size_t i = 0; i < z.size(); ++i) {
      const bool pred = z[i] > 0.0;
      const bool truth = masks[l][i] > 0.5;
      inter += pred && truth;
      uni += pred || truth;
    }
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct ModelForward {
  PyramidOutput pyramid;
  std::vector<Var> logits;
};

inline ModelForward model_forward(const Model& model, const CostLedger& ledger, const Tensor& image, const ForwardOptions& opt,
                                  Rng& rng) {
  ModelForward out;
  const auto features = backbone_forward(image, model);
  out.pyramid = pyramid_forward(model.config.pyramid(), model.pyramid, ledger, features, opt, rng);
  out.logits = head_forward(out.pyramid.levels, model);
  return out;
}

}  // namespace dynapyr
