#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dynapyr/rng.hpp"
#include "dynapyr/tensor.hpp"

namespace dynapyr {

/// Uniform draws are clamped to [eps, 1 - eps] before the double log.
inline constexpr double kGumbelUniformGuard = 0x1p-53;

inline double gumbel_from_uniform(double u) noexcept {
  u = std::clamp(u, kGumbelUniformGuard, 1.0 - kGumbelUniformGuard);
  return -std::log(-std::log(u));
}

/// One Gumbel(0, 1) variate.
inline double gumbel_sample(Rng& rng) { return gumbel_from_uniform(rng.uniform()); }

inline std::vector<double> gumbel_noise(Rng& rng, std::size_t n) {
  std::vector<double> out(n);
  for (auto& v : out) v = gumbel_sample(rng);
  return out;
}

inline void require_positive_tau(double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("gumbel_softmax: tau must be > 0, got " + std::to_string(tau));
}

/// softmax((logits + noise) / tau), max-shifted for stability.
inline std::vector<double> gumbel_softmax_soft(std::span<const double> logits, std::span<const double> noise, double tau) {
  require_positive_tau(tau);
  if (logits.size() != noise.size()) {
    throw ShapeError("gumbel_softmax: logits length " + std::to_string(logits.size()) + " != noise length " +
                     std::to_string(noise.size()));
  }
  if (logits.empty()) throw ShapeError("gumbel_softmax: empty logits");
  std::vector<double> z(logits.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (logits[i] + noise[i]) / tau;
  const double m = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (auto& v : z) {
    v = std::exp(v - m);
    total += v;
  }
  for (auto& v : z) v /= total;
  return z;
}

/// Index of the largest logits[i] + noise[i]; ties resolve to the lowest index.
inline std::size_t perturbed_argmax(std::span<const double> logits, std::span<const double> noise) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] + noise[i] > logits[best] + noise[best]) best = i;
  }
  return best;
}

/// Forward value of the Gumbel-Softmax: the soft relaxation, or the one-hot of
/// the perturbed argmax when `hard` is set.
inline std::vector<double> gumbel_softmax(std::span<const double> logits, std::span<const double> noise, double tau, bool hard) {
  auto soft = gumbel_softmax_soft(logits, noise, tau);
  if (!hard) return soft;
  std::vector<double> one_hot(soft.size(), 0.0);
  one_hot[perturbed_argmax(logits, noise)] = 1.0;
  return one_hot;
}

}  // namespace dynapyr
