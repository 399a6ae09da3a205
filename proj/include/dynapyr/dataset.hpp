#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "dynapyr/rng.hpp"
#include "dynapyr/tensor.hpp"

namespace dynapyr {

inline constexpr std::size_t kImageSize = 64;
inline constexpr std::size_t kLevelCount = 4;
/// Mask resolution per pyramid level, P2..P5.
inline constexpr std::array<std::size_t, kLevelCount> kLevelGrid{16, 8, 4, 2};

enum class ScaleBand : std::uint8_t { small, medium, large };

struct ObjectSpec {
  bool disc = false;
  ScaleBand band = ScaleBand::small;
  std::size_t size = 0;  ///< side length or diameter in pixels
  std::size_t x0 = 0, y0 = 0;
  std::array<double, 3> color{};
};

/// Levels whose mask marks objects of a band: small -> P2, medium -> P3 and
/// P4, large -> P5.
inline std::vector<std::size_t> band_levels(ScaleBand band) {
  switch (band) {
    case ScaleBand::small: return {0};
    case ScaleBand::medium: return {1, 2};
    case ScaleBand::large: return {3};
  }
  return {};
}

struct SyntheticSample {
  Tensor image;                      ///< 3 x 64 x 64 in [0, 1]
  std::array<Tensor, kLevelCount> masks;  ///< 1 x g x g occupancy, g from kLevelGrid
  std::size_t object_count = 0;
  std::vector<ObjectSpec> objects;
};

namespace detail {

inline constexpr std::array<std::array<std::size_t, 2>, 3> kBandRange{{{4, 8}, {12, 24}, {32, 48}}};

inline bool covers(const ObjectSpec& o, std::size_t px, std::size_t py) {
  if (!o.disc) return px >= o.x0 && px < o.x0 + o.size && py >= o.y0 && py < o.y0 + o.size;
  const double r = static_cast<double>(o.size) / 2.0;
  const double cx = static_cast<double>(o.x0) + r, cy = static_cast<double>(o.y0) + r;
  const double dx = static_cast<double>(px) + 0.5 - cx, dy = static_cast<double>(py) + 0.5 - cy;
  return dx * dx + dy * dy <= r * r;
}

/// Marks each grid cell that is at least half covered by the object, plus
/// the cell holding the object's centre.
inline void mark_mask(const ObjectSpec& o, Tensor& mask) {
  const std::size_t g = mask.height();
  const std::size_t cell = kImageSize / g;
  for (std::size_t gy = 0; gy < g; ++gy) {
    for (std::size_t gx = 0; gx < g; ++gx) {
      std::size_t hits = 0;
      for (std::size_t y = gy * cell; y < (gy + 1) * cell; ++y)
        for (std::size_t x = gx * cell; x < (gx + 1) * cell; ++x) hits += covers(o, x, y) ? 1 : 0;
      if (2 * hits >= cell * cell) mask.at(0, gy, gx) = 1.0;
    }
  }
  const std::size_t cx = o.x0 + o.size / 2, cy = o.y0 + o.size / 2;
  mask.at(0, std::min(cy / cell, g - 1), std::min(cx / cell, g - 1)) = 1.0;
}

}  // namespace detail

/// Renders one image with `count` objects drawn from `rng`.
inline SyntheticSample render_sample(Rng& rng, std::size_t count) {
  SyntheticSample s;
  s.image = Tensor({3, kImageSize, kImageSize});
  for (std::size_t l = 0; l < kLevelCount; ++l) s.masks[l] = Tensor({1, kLevelGrid[l], kLevelGrid[l]});

  std::array<double, 3> background{};
  for (auto& b : background) b = rng.uniform(0.0, 0.3);
  for (std::size_t c = 0; c < 3; ++c)
    for (auto& v : s.image.plane(c)) v = std::clamp(background[c] + rng.uniform(-0.05, 0.05), 0.0, 1.0);

  s.object_count = count;
  for (std::size_t i = 0; i < count; ++i) {
    ObjectSpec o;
    o.band = static_cast<ScaleBand>(rng.below(3));
    const auto [lo, hi] = detail::kBandRange[static_cast<std::size_t>(o.band)];
    o.size = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
    o.disc = rng.coin();
    o.x0 = static_cast<std::size_t>(rng.below(kImageSize - o.size + 1));
    o.y0 = static_cast<std::size_t>(rng.below(kImageSize - o.size + 1));
    for (auto& c : o.color) c = rng.uniform(0.55, 1.0);
    for (std::size_t y = o.y0; y < o.y0 + o.size; ++y) {
      for (std::size_t x = o.x0; x < o.x0 + o.size; ++x) {
        if (!detail::covers(o, x, y)) continue;
        for (std::size_t c = 0; c < 3; ++c) s.image.at(c, y, x) = o.color[c];
      }
    }
    for (std::size_t l : band_levels(o.band)) detail::mark_mask(o, s.masks[l]);
    s.objects.push_back(o);
  }
  return s;
}

/// n images, each with a uniform 1..max_objects object count. Sample i is a
/// function of (seed, i) only.
inline std::vector<SyntheticSample> gen_dataset(std::uint64_t seed, std::size_t n, std::size_t max_objects) {
  if (n == 0) throw std::invalid_argument("gen_dataset: n must be positive");
  if (max_objects == 0) throw std::invalid_argument("gen_dataset: max_objects must be >= 1");
  const Rng root(seed);
  std::vector<SyntheticSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = root.fork(i);
    const auto count = static_cast<std::size_t>(rng.between(1, static_cast<std::int64_t>(max_objects)));
    out.push_back(render_sample(rng, count));
  }
  return out;
}

}  // namespace dynapyr
