#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dynapyr/conv.hpp"

namespace dynapyr {

enum class Variant { fpn, inception, dyfpn };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::fpn: return "fpn";
    case Variant::inception: return "inception";
    case Variant::dyfpn: return "dyfpn";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "fpn") return Variant::fpn;
  if (s == "inception") return Variant::inception;
  if (s == "dyfpn") return Variant::dyfpn;
  throw std::invalid_argument("unknown pyramid variant '" + std::string(s) + "'");
}

/// Branch set of one lateral connection. Every branch keeps the spatial size
/// and writes the same number of channels; exactly one branch is the plain
/// 1x1 convolution, which DyFPN keeps as its always-on skip path.
struct InceptionConfig {
  std::vector<ConvSpec> branches;

  static constexpr std::size_t kDefaultKernels[] = {1, 3, 3, 3, 5, 5, 5};
  static constexpr std::size_t kDefaultDilations[] = {1, 1, 2, 3, 1, 2, 3};

  static InceptionConfig from_lists(std::size_t in, std::size_t out, const std::vector<std::size_t>& kernels,
                                    const std::vector<std::size_t>& dilations) {
    if (kernels.size() != dilations.size()) {
      throw std::invalid_argument("InceptionConfig: " + std::to_string(kernels.size()) + " kernels but " +
                                  std::to_string(dilations.size()) + " dilations");
    }
    InceptionConfig cfg;
    for (std::size_t i = 0; i < kernels.size(); ++i) cfg.branches.push_back(ConvSpec::same(in, out, kernels[i], dilations[i]));
    cfg.validate();
    return cfg;
  }

  /// k = [1,3,3,3,5,5,5], d = [1,1,2,3,1,2,3], p = [0,1,2,3,2,4,6].
  static InceptionConfig standard(std::size_t in, std::size_t out) {
    return from_lists(in, out, {std::begin(kDefaultKernels), std::end(kDefaultKernels)},
                      {std::begin(kDefaultDilations), std::end(kDefaultDilations)});
  }

  static InceptionConfig skip_only(std::size_t in, std::size_t out) { return from_lists(in, out, {1}, {1}); }

  std::size_t in_channels() const { return branches.at(0).in_channels; }
  std::size_t out_channels() const { return branches.at(0).out_channels; }

  std::size_t skip_branch() const {
    for (std::size_t i = 0; i < branches.size(); ++i) {
      if (branches[i].kernel == 1 && branches[i].dilation == 1) return i;
    }
    throw std::invalid_argument("InceptionConfig: no 1x1 skip branch");
  }

  std::size_t gated_branch_count() const { return branches.size() - 1; }

  void validate() const {
    if (branches.empty()) throw std::invalid_argument("InceptionConfig: no branches");
    std::size_t skips = 0;
    for (const auto& b : branches) {
      b.validate();
      if (!b.preserves_size()) {
        throw std::invalid_argument("InceptionConfig: branch k=" + std::to_string(b.kernel) + " d=" + std::to_string(b.dilation) +
                                    " has padding " + std::to_string(b.padding) + ", needs " +
                                    std::to_string(ConvSpec::same_padding(b.kernel, b.dilation)));
      }
      if (b.in_channels != branches[0].in_channels || b.out_channels != branches[0].out_channels) {
        throw std::invalid_argument("InceptionConfig: branches disagree on channel counts");
      }
      if (b.kernel == 1 && b.dilation == 1) ++skips;
    }
    if (skips != 1) {
      throw std::invalid_argument("InceptionConfig: need exactly one k=1,d=1 branch, found " + std::to_string(skips));
    }
  }
};

/// Shape of one backbone feature map F_l.
struct LevelShape {
  std::size_t channels;
  std::size_t height;
  std::size_t width;

  friend bool operator==(const LevelShape&, const LevelShape&) = default;
};

/// Everything the pyramid and the cost model need to know about the
/// architecture: input levels finest first (F2..F5), output width, variant,
/// and the inception branch set.
struct PyramidConfig {
  std::vector<LevelShape> levels;
  std::size_t out_channels = 16;
  Variant variant = Variant::dyfpn;
  std::vector<std::size_t> kernels{std::begin(InceptionConfig::kDefaultKernels), std::end(InceptionConfig::kDefaultKernels)};
  std::vector<std::size_t> dilations{std::begin(InceptionConfig::kDefaultDilations), std::end(InceptionConfig::kDefaultDilations)};

  /// Branch set used by the variant at `level`; plain FPN only has the skip.
  InceptionConfig lateral(std::size_t level) const {
    const auto& l = levels.at(level);
    if (variant == Variant::fpn) return InceptionConfig::skip_only(l.channels, out_channels);
    return InceptionConfig::from_lists(l.channels, out_channels, kernels, dilations);
  }

  /// The full branch set regardless of variant; this fixes the parameter layout.
  InceptionConfig full_lateral(std::size_t level) const {
    const auto& l = levels.at(level);
    return InceptionConfig::from_lists(l.channels, out_channels, kernels, dilations);
  }

  bool gated() const noexcept { return variant == Variant::dyfpn; }

  void validate() const {
    if (levels.empty()) throw std::invalid_argument("PyramidConfig: no levels");
    if (out_channels == 0) throw std::invalid_argument("PyramidConfig: out_channels must be positive");
    for (std::size_t i = 0; i < levels.size(); ++i) {
      const auto& l = levels[i];
      if (l.channels == 0 || l.height == 0 || l.width == 0) {
        throw std::invalid_argument("PyramidConfig: level " + std::to_string(i) + " has a zero extent");
      }
      if (gated() && l.channels % 4 != 0) {
        throw std::invalid_argument("PyramidConfig: level " + std::to_string(i) + " channels " + std::to_string(l.channels) +
                                    " not divisible by 4");
      }
      if (i > 0 && (levels[i - 1].height != 2 * l.height || levels[i - 1].width != 2 * l.width)) {
        throw std::invalid_argument("PyramidConfig: level " + std::to_string(i) + " is not half the size of level " +
                                    std::to_string(i - 1));
      }
    }
    full_lateral(0).validate();
  }
};

}  // namespace dynapyr
