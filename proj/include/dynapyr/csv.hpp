#pragma once

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dynapyr/train.hpp"

// All files are written in one go, header first, LF line endings, reals
// with 6 fractional digits.

namespace dynapyr {

inline constexpr const char* kMetricsHeader =
    "epoch,loss_det,loss_cost,loss_total,avg_cr,exec_rate_l2,exec_rate_l3,exec_rate_l4,exec_rate_l5,mean_iou";
inline constexpr const char* kImagesHeader = "image_index,object_count,executed_blocks,realized_cost,iou";
inline constexpr const char* kSweepHeader = "alpha,lambda,seed,mean_iou,avg_cr,norm_cr";

namespace detail {

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

}  // namespace detail

inline std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  using detail::fixed6;
  std::string s = std::string(kMetricsHeader) + '\n';
  for (const auto& m : history) {
    s += std::to_string(m.epoch) + ',' + fixed6(m.loss_det) + ',' + fixed6(m.loss_cost) + ',' + fixed6(m.loss_total) + ',' +
         fixed6(m.avg_cr);
    for (double r : m.exec_rate) s += ',' + fixed6(r);
    s += ',' + fixed6(m.mean_iou) + '\n';
  }
  return s;
}

inline std::string images_csv(const std::vector<ImageRecord>& images) {
  std::string s = std::string(kImagesHeader) + '\n';
  for (const auto& r : images) {
    s += std::to_string(r.image_index) + ',' + std::to_string(r.object_count) + ',' + std::to_string(r.executed_blocks) + ',' +
         std::to_string(r.realized_cost) + ',' + detail::fixed6(r.iou) + '\n';
  }
  return s;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  using detail::fixed6;
  std::string s = std::string(kSweepHeader) + '\n';
  for (const auto& r : rows) {
    s += fixed6(r.alpha) + ',' + fixed6(r.lambda) + ',' + std::to_string(r.seed) + ',' + fixed6(r.mean_iou) + ',' +
         fixed6(r.avg_cr) + ',' + fixed6(r.norm_cr) + '\n';
  }
  return s;
}

inline void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& history) {
  detail::write_text(path, metrics_csv(history));
}

inline void write_images_csv(const std::string& path, const std::vector<ImageRecord>& images) {
  detail::write_text(path, images_csv(images));
}

inline void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  detail::write_text(path, sweep_csv(rows));
}

}  // namespace dynapyr
