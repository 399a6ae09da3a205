// dynapyr: train, evaluate, cost-report and sweep dynamic feature pyramids
// on the synthetic occupancy task.
//
// Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 corrupt artifact.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dynapyr/dynapyr.hpp"

namespace fs = std::filesystem;
using namespace dynapyr;

namespace {

enum Exit : int { kOk = 0, kFailure = 1, kConfig = 2, kNumerical = 3, kCorrupt = 4 };

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string flag_name(std::string_view key) {
  std::string s(key);
  for (auto& c : s)
    if (c == '_') c = '-';
  return "--" + s;
}

/// `--<key>` overrides for every config key, applied after the file.
struct Overrides {
  std::map<std::string, std::string> values;

  void add_to(CLI::App& cmd) {
    for (auto key : kConfigKeys) {
      auto& slot = values[std::string(key)];
      cmd.add_option(flag_name(key), slot, "override config key " + std::string(key));
    }
  }

  void apply(CLI::App& cmd, TrainConfig& cfg) const {
    for (const auto& [key, value] : values) {
      if (cmd.count(flag_name(key)) > 0) set_config_value(cfg, key, value);
    }
  }
};

/// Resolution order: built-in defaults, DYNAPYR_SEED, config file, flags.
TrainConfig resolve_config(const std::string& path, CLI::App& cmd, const Overrides& overrides) {
  TrainConfig cfg;
  if (const char* env = std::getenv("DYNAPYR_SEED"); env && *env) set_config_value(cfg, "seed", env);
  if (!path.empty()) cfg = load_config(path, cfg);
  overrides.apply(cmd, cfg);
  validate_config(cfg);
  return cfg;
}

std::string command_line(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

void write_manifest(const fs::path& dir, const TrainConfig& cfg, const std::string& cmdline) {
  std::string text = "# dynapyr run manifest; replay with: dynapyr train --config <this file> --out <dir>\n";
  text += "# command: " + cmdline + "\n";
  text += "# version: " + std::string(kVersion) + "\n";
  text += "# started: " + utc_now() + "\n";
  text += "# outputs: " + (dir / "manifest.cfg").string() + " " + (dir / "metrics.csv").string() + " " +
          (dir / "checkpoint.dyfp").string() + "\n";
  text += format_config(cfg);
  std::ofstream out(dir / "manifest.cfg", std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest in '" + dir.string() + "'");
  out << text;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create '" + dir.string() + "': " + ec.message());
}

/// Trains one config into `dir`: manifest first, then metrics and checkpoint.
TrainResult train_into(const fs::path& dir, const TrainConfig& cfg, const std::string& cmdline, bool verbose) {
  make_dir(dir);
  write_manifest(dir, cfg, cmdline);
  auto result = train(cfg, [&](const EpochMetrics& m) {
    if (!verbose) return;
    std::printf("epoch %zu loss_det %.6f loss_cost %.6f avg_cr %.1f mean_iou %.4f\n", m.epoch, m.loss_det, m.loss_cost, m.avg_cr,
                m.mean_iou);
    std::fflush(stdout);
  });
  write_metrics_csv((dir / "metrics.csv").string(), result.history);
  save_model((dir / "checkpoint.dyfp").string(), result.model);
  return result;
}

std::string summary_line(const EvalResult& r, const CostLedger& ledger) {
  const auto& m = r.metrics;
  char buf[512];
  std::snprintf(buf, sizeof buf, "images=%zu mean_iou=%.6f avg_cr=%.1f norm_cr=%.6f exec_rate=%.4f,%.4f,%.4f,%.4f", r.images.size(),
                m.mean_iou, m.avg_realized_cost, ledger.normalized(m.avg_realized_cost), m.exec_rate_per_level[0],
                m.exec_rate_per_level[1], m.exec_rate_per_level[2], m.exec_rate_per_level[3]);
  std::string s = buf;
  s += " histogram=";
  for (std::size_t k = 0; k < m.exec_block_histogram.size(); ++k) {
    if (k) s += ',';
    s += std::to_string(m.exec_block_histogram[k]);
  }
  return s;
}

std::string giga(Flops f) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%llu (%.6f GFLOPs)", static_cast<unsigned long long>(f), static_cast<double>(f) * 1e-9);
  return buf;
}

void print_flops(const TrainConfig& cfg) {
  const auto pcfg = cfg.model.pyramid();
  const auto ledger = cost_bounds(pcfg, cfg.alpha_budget);
  std::printf("variant            %s\n", std::string(to_string(cfg.model.variant)).c_str());
  std::printf("c_min              %s\n", giga(ledger.c_min).c_str());
  std::printf("c_max              %s\n", giga(ledger.c_max).c_str());
  std::printf("c_target           %.1f (alpha_budget %g)\n", ledger.c_target, cfg.alpha_budget);
  for (std::size_t l = 0; l < ledger.levels.size(); ++l) {
    const auto& lc = ledger.levels[l];
    std::printf("level P%zu           skip %llu gate %llu branches %llu\n", l + 2, static_cast<unsigned long long>(lc.skip),
                static_cast<unsigned long long>(lc.gate), static_cast<unsigned long long>(lc.branches));
  }
  const double reduction =
      ledger.c_max == 0 ? 0.0 : static_cast<double>(ledger.span()) / static_cast<double>(ledger.c_max);
  std::printf("reduction          %.6f ((c_max - c_min) / c_max)\n", reduction);
  std::printf("backbone (info)    %s\n", giga(backbone_flops(cfg.model)).c_str());
  std::printf("head (info)        %s\n", giga(head_flops(cfg.model)).c_str());
  std::printf("top-down (info)    %s\n", giga(topdown_flops(cfg.model)).c_str());
  std::printf("reference (non-reproducible): full detector 896.2G -> 537.5G FLOPs (down 40.0%%), published figure\n");
}

template <class T>
std::vector<T> parse_flag_list(const char* flag, const std::string& text) {
  if (text.empty()) throw ConfigError(flag, std::string("flag ") + flag + " needs a comma-separated list");
  return detail::parse_list<T>(flag, text);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic feature pyramid toolkit"};
  app.require_subcommand(1);
  const std::string cmdline = command_line(argc, argv);

  auto* train_cmd = app.add_subcommand("train", "train a pyramid variant on the synthetic task");
  std::string train_config, train_out;
  bool quiet = false;
  Overrides train_overrides;
  train_cmd->add_option("--config", train_config, "key = value config file");
  train_cmd->add_option("--out", train_out, "output directory")->required();
  train_cmd->add_flag("--quiet", quiet, "no per-epoch progress");
  train_overrides.add_to(*train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a generated test set");
  std::string eval_ckpt, eval_out = "images.csv", eval_decisions = "gate";
  std::uint64_t eval_data_seed = TrainConfig{}.test_data_seed();
  std::size_t eval_n = 500, eval_max_objects = TrainConfig{}.max_objects;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data-seed", eval_data_seed, "test set seed");
  eval_cmd->add_option("--n", eval_n, "number of test images");
  eval_cmd->add_option("--max-objects", eval_max_objects, "objects per image upper bound");
  eval_cmd->add_option("--decisions", eval_decisions, "gate | random:<seed> | execute | skip");
  eval_cmd->add_option("--out", eval_out, "per-image CSV path");

  auto* flops_cmd = app.add_subcommand("flops", "report the analytic cost ledger");
  std::string flops_config;
  Overrides flops_overrides;
  flops_cmd->add_option("--config", flops_config, "key = value config file");
  flops_overrides.add_to(*flops_cmd);

  auto* sweep_cmd = app.add_subcommand("sweep", "train and evaluate a grid of budgets");
  std::string sweep_config, sweep_out, alphas, lambdas, seeds;
  std::size_t jobs = 1;
  Overrides sweep_overrides;
  sweep_cmd->add_option("--config", sweep_config, "base key = value config file");
  sweep_cmd->add_option("--out", sweep_out, "output directory")->required();
  sweep_cmd->add_option("--alphas", alphas, "comma-separated alpha_budget values")->required();
  sweep_cmd->add_option("--lambdas", lambdas, "comma-separated lambda values")->required();
  sweep_cmd->add_option("--seeds", seeds, "comma-separated seeds (default: the config seed)");
  sweep_cmd->add_option("--jobs", jobs, "cells trained concurrently");
  sweep_overrides.add_to(*sweep_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train_cmd) {
      const auto cfg = resolve_config(train_config, *train_cmd, train_overrides);
      train_into(train_out, cfg, cmdline, !quiet);
      std::printf("wrote %s\n", (fs::path(train_out) / "metrics.csv").string().c_str());
    } else if (*eval_cmd) {
      const auto source = [&] {
        try {
          return DecisionSource::parse(eval_decisions);
        } catch (const std::invalid_argument& e) {
          throw ConfigError("decisions", e.what());
        }
      }();
      if (eval_n == 0) throw ConfigError("n", "--n must be positive");
      if (eval_max_objects == 0) throw ConfigError("max-objects", "--max-objects must be positive");
      const Model model = load_model(eval_ckpt);
      const auto data = gen_dataset(eval_data_seed, eval_n, eval_max_objects);
      EvalResult r;
      try {
        r = evaluate(model, data, source);
      } catch (const std::invalid_argument& e) {
        throw ConfigError("decisions", e.what());
      }
      write_images_csv(eval_out, r.images);
      std::printf("%s\n", summary_line(r, cost_bounds(model.config.pyramid())).c_str());
    } else if (*flops_cmd) {
      print_flops(resolve_config(flops_config, *flops_cmd, flops_overrides));
    } else if (*sweep_cmd) {
      const auto base = resolve_config(sweep_config, *sweep_cmd, sweep_overrides);
      const auto a = parse_flag_list<double>("alphas", alphas);
      const auto l = parse_flag_list<double>("lambdas", lambdas);
      const auto s = seeds.empty() ? std::vector<std::uint64_t>{base.seed} : parse_flag_list<std::uint64_t>("seeds", seeds);
      const auto configs = [&] {
        try {
          return sweep_configs(base, a, l, s);
        } catch (const std::invalid_argument& e) {
          throw ConfigError("", std::string("invalid sweep cell: ") + e.what());
        }
      }();
      for (const auto& c : configs) validate_config(c);
      std::vector<fs::path> dirs;
      for (std::size_t i = 0; i < configs.size(); ++i) {
        dirs.push_back(fs::path(sweep_out) / ("cell_" + std::to_string(i)));
        make_dir(dirs.back());
        write_manifest(dirs.back(), configs[i], cmdline);
      }
      const auto cells = sweep(base, a, l, s, jobs);
      std::vector<SweepRow> rows;
      for (std::size_t i = 0; i < cells.size(); ++i) {
        write_metrics_csv((dirs[i] / "metrics.csv").string(), cells[i].trained.history);
        save_model((dirs[i] / "checkpoint.dyfp").string(), cells[i].trained.model);
        rows.push_back(cells[i].row);
        std::printf("alpha=%g lambda=%g seed=%llu mean_iou=%.6f norm_cr=%.6f\n", cells[i].row.alpha, cells[i].row.lambda,
                    static_cast<unsigned long long>(cells[i].row.seed), cells[i].row.mean_iou, cells[i].row.norm_cr);
      }
      write_sweep_csv((fs::path(sweep_out) / "sweep.csv").string(), rows);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error" << (e.key().empty() ? "" : " [" + e.key() + "]") << ": " << e.what() << '\n';
    return kConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const CheckpointError& e) {
    std::cerr << "corrupt artifact: " << e.what() << '\n';
    return kCorrupt;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
