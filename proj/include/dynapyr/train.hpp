#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dynapyr/cost_model.hpp"
#include "dynapyr/dataset.hpp"
#include "dynapyr/model.hpp"

namespace dynapyr {

/// Raised when the training objective stops being finite.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::uint64_t seed = 1;       ///< weights, shuffling and gate noise
  std::uint64_t data_seed = 7;  ///< training set; the test set uses data_seed + 1
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double learning_rate = 0.05;
  double alpha_budget = 0.5;
  double lambda = 0.1;
  double tau = 1.0;
  std::size_t train_size = 2000;
  std::size_t test_size = 500;
  std::size_t max_objects = 6;
  ModelConfig model;

  BudgetConfig budget() const { return {alpha_budget, lambda}; }
  std::uint64_t test_data_seed() const { return data_seed + 1; }

  void validate() const {
    auto positive = [](std::size_t v, const char* key) {
      if (v == 0) throw std::invalid_argument(std::string(key) + " must be positive");
    };
    positive(epochs, "epochs");
    positive(batch_size, "batch_size");
    positive(train_size, "train_size");
    positive(test_size, "test_size");
    positive(max_objects, "max_objects");
    positive(model.pyramid_channels, "pyramid_channels");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
    budget().validate();
    model.pyramid().validate();
  }
};

/// One row of the per-epoch metrics file. Losses are means over batches;
/// cost, execution rates and IoU are means over training images.
struct EpochMetrics {
  std::size_t epoch = 0;
  double loss_det = 0.0;
  double loss_cost = 0.0;
  double loss_total = 0.0;
  double avg_cr = 0.0;
  std::array<double, kLevelCount> exec_rate{};
  double mean_iou = 0.0;
};

struct TrainResult {
  Model model;
  CostLedger ledger;
  std::vector<EpochMetrics> history;
};

/// Learning rate for a 0-based epoch: base rate, divided by 10 from 75% of
/// the schedule on.
inline double scheduled_lr(const TrainConfig& cfg, std::size_t epoch) {
  const auto decay_at = static_cast<std::size_t>(std::floor(0.75 * static_cast<double>(cfg.epochs)));
  return epoch >= decay_at ? cfg.learning_rate * 0.1 : cfg.learning_rate;
}

/// Objective of one minibatch: mean L_Det plus lambda times the resource
/// loss of the batch-mean realized cost. Penalising the batch mean rather
/// than each image leaves the gates free to spend more on harder images.
struct BatchLoss {
  Var total;
  double det = 0.0;
  double cost = 0.0;
};

inline BatchLoss batch_objective(const Model& model, const CostLedger& ledger, const BudgetConfig& budget,
                                 const std::vector<ModelForward>& fwds, const std::vector<const SyntheticSample*>& samples) {
  if (fwds.empty() || fwds.size() != samples.size()) {
    throw std::invalid_argument("batch_objective: " + std::to_string(fwds.size()) + " forwards for " +
                                std::to_string(samples.size()) + " samples");
  }
  const double inv = 1.0 / static_cast<double>(fwds.size());
  Var det, cost;
  for (std::size_t i = 0; i < fwds.size(); ++i) {
    Var d = detection_loss(fwds[i].logits, samples[i]->masks);
    det = det ? add(det, d) : d;
    if (model.config.variant == Variant::dyfpn) cost = cost ? add(cost, fwds[i].pyramid.cost) : fwds[i].pyramid.cost;
  }
  BatchLoss b;
  det = scale(det, inv);
  b.det = det.item();
  if (model.config.variant == Variant::dyfpn) {
    Var lc = resource_loss(scale(cost, inv), budget, ledger);
    b.cost = lc.item();
    b.total = total_loss(det, lc, budget.lambda);
  } else {
    b.total = det;
  }
  return b;
}

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Minibatch gradient descent on L_Det + lambda * L_C. Fully determined by
/// the config.
inline TrainResult train(const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  TrainResult result;
  result.model = Model::init(cfg.model, cfg.seed);
  result.ledger = cost_bounds(cfg.model.pyramid(), cfg.alpha_budget);
  const auto data = gen_dataset(cfg.data_seed, cfg.train_size, cfg.max_objects);
  auto params = result.model.parameters();
  const auto budget = cfg.budget();

  Rng rng = Rng(cfg.seed).fork(0x7A41);
  ForwardOptions opt;
  opt.mode = Mode::train;
  opt.tau = cfg.tau;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    const double lr = scheduled_lr(cfg, epoch);
    EpochMetrics m;
    m.epoch = epoch + 1;
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batches) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      for (auto& p : params) p.var.zero_grad();
      std::vector<ModelForward> fwds;
      std::vector<const SyntheticSample*> samples;
      for (std::size_t k = start; k < end; ++k) {
        samples.push_back(&data[order[k]]);
        fwds.push_back(model_forward(result.model, result.ledger, samples.back()->image, opt, rng));
        const auto& fwd = fwds.back();
        m.avg_cr += static_cast<double>(fwd.pyramid.realized_cost);
        for (std::size_t l = 0; l < kLevelCount; ++l) m.exec_rate[l] += fwd.pyramid.executed[l] ? 1.0 : 0.0;
        m.mean_iou += mask_iou(fwd.logits, samples.back()->masks);
      }
      const auto loss = batch_objective(result.model, result.ledger, budget, fwds, samples);
      const double lt = loss.total.item();
      if (!std::isfinite(lt)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(batches + 1));
      }
      backward(loss.total);
      m.loss_det += loss.det;
      m.loss_cost += loss.cost;
      total += lt;
      for (auto& p : params) {
        if (!p.var.has_grad()) continue;
        auto& v = p.var.mutable_value();
        const auto& g = p.var.node()->grad;
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
      }
    }
    const double nb = static_cast<double>(batches);
    m.loss_det /= nb;
    m.loss_cost /= nb;
    m.loss_total = total / nb;
    const double n = static_cast<double>(data.size());
    m.avg_cr /= n;
    for (auto& r : m.exec_rate) r /= n;
    m.mean_iou /= n;
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  for (auto& p : params) p.var.zero_grad();
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

struct DecisionSource {
  enum class Kind { gate, random, force_execute, force_skip };
  Kind kind = Kind::gate;
  std::uint64_t seed = 0;

  static DecisionSource gate() { return {Kind::gate, 0}; }
  static DecisionSource random(std::uint64_t seed) { return {Kind::random, seed}; }
  static DecisionSource execute() { return {Kind::force_execute, 0}; }
  static DecisionSource skip() { return {Kind::force_skip, 0}; }

  /// gate | random:<seed> | execute | skip
  static DecisionSource parse(const std::string& s) {
    if (s == "gate") return gate();
    if (s == "execute") return execute();
    if (s == "skip") return skip();
    if (s.rfind("random:", 0) == 0) {
      const std::string digits = s.substr(7);
      if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos) {
        throw std::invalid_argument("decision source '" + s + "': seed must be a non-negative integer");
      }
      return random(std::stoull(digits));
    }
    throw std::invalid_argument("unknown decision source '" + s + "'");
  }
};

struct ImageRecord {
  std::size_t image_index = 0;
  std::size_t object_count = 0;
  std::size_t executed_blocks = 0;
  std::vector<bool> executed;
  Flops realized_cost = 0;
  double iou = 0.0;
};

struct Metrics {
  double mean_iou = 0.0;
  double avg_realized_cost = 0.0;
  std::array<double, kLevelCount> exec_rate_per_level{};
  std::array<std::size_t, kLevelCount + 1> exec_block_histogram{};
};

struct EvalResult {
  Metrics metrics;
  std::vector<ImageRecord> images;
};

/// Test-mode pass over `data`; the decision source overrides the gates
/// unless it is `gate`.
inline EvalResult evaluate(const Model& model, const std::vector<SyntheticSample>& data, const DecisionSource& source) {
  const auto variant = model.config.variant;
  const auto kind = source.kind;
  using K = DecisionSource::Kind;
  if (variant == Variant::inception && kind != K::gate && kind != K::force_execute) {
    throw std::invalid_argument("evaluate: inception checkpoints only support gate/execute decisions");
  }
  if (variant == Variant::fpn && kind != K::gate && kind != K::force_skip) {
    throw std::invalid_argument("evaluate: fpn checkpoints only support gate/skip decisions");
  }
  const auto ledger = cost_bounds(model.config.pyramid());
  Rng gate_rng(0);  // test mode draws no noise
  Rng decision_rng(source.seed);

  EvalResult r;
  for (std::size_t i = 0; i < data.size(); ++i) {
    ForwardOptions opt;
    opt.mode = Mode::test;
    if (variant == Variant::dyfpn) {
      if (kind == K::force_execute) opt.forced = std::vector<bool>(kLevelCount, true);
      if (kind == K::force_skip) opt.forced = std::vector<bool>(kLevelCount, false);
      if (kind == K::random) {
        std::vector<bool> f(kLevelCount);
        for (std::size_t l = 0; l < kLevelCount; ++l) f[l] = decision_rng.coin();
        opt.forced = f;
      }
    }
    const auto fwd = model_forward(model, ledger, data[i].image, opt, gate_rng);
    ImageRecord rec;
    rec.image_index = i;
    rec.object_count = data[i].object_count;
    rec.executed = fwd.pyramid.executed;
    rec.executed_blocks = static_cast<std::size_t>(std::count(rec.executed.begin(), rec.executed.end(), true));
    rec.realized_cost = fwd.pyramid.realized_cost;
    rec.iou = mask_iou(fwd.logits, data[i].masks);
    r.images.push_back(std::move(rec));
  }

  auto& m = r.metrics;
  const double n = static_cast<double>(r.images.size());
  for (const auto& rec : r.images) {
    m.mean_iou += rec.iou;
    m.avg_realized_cost += static_cast<double>(rec.realized_cost);
    for (std::size_t l = 0; l < kLevelCount; ++l) m.exec_rate_per_level[l] += rec.executed[l] ? 1.0 : 0.0;
    ++m.exec_block_histogram[rec.executed_blocks];
  }
  m.mean_iou /= n;
  m.avg_realized_cost /= n;
  for (auto& v : m.exec_rate_per_level) v /= n;
  return r;
}

// ---------------------------------------------------------------------------
// Budget sweep

struct SweepRow {
  double alpha = 0.0;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  double mean_iou = 0.0;
  double avg_cr = 0.0;
  double norm_cr = 0.0;
};

struct SweepCell {
  TrainConfig config;
  TrainResult trained;
  EvalResult eval;
  SweepRow row;
};

/// Train + evaluate on the held-out set for one configuration.
inline SweepCell run_cell(const TrainConfig& cfg, const std::vector<SyntheticSample>& test) {
  SweepCell cell;
  cell.config = cfg;
  cell.trained = train(cfg);
  cell.eval = evaluate(cell.trained.model, test, DecisionSource::gate());
  const auto& ledger = cell.trained.ledger;
  cell.row = {cfg.alpha_budget, cfg.lambda, cfg.seed, cell.eval.metrics.mean_iou, cell.eval.metrics.avg_realized_cost,
              ledger.normalized(cell.eval.metrics.avg_realized_cost)};
  return cell;
}

/// Cell configs of a sweep, row-major over (alpha, lambda, seed).
inline std::vector<TrainConfig> sweep_configs(const TrainConfig& base, const std::vector<double>& alphas,
                                              const std::vector<double>& lambdas, const std::vector<std::uint64_t>& seeds) {
  if (alphas.empty() || lambdas.empty() || seeds.empty()) throw std::invalid_argument("sweep: empty parameter list");
  std::vector<TrainConfig> configs;
  for (double a : alphas)
    for (double l : lambdas)
      for (auto s : seeds) {
        TrainConfig c = base;
        c.alpha_budget = a;
        c.lambda = l;
        c.seed = s;
        c.validate();
        configs.push_back(c);
      }
  return configs;
}

/// One cell per (alpha, lambda, seed), row-major in that order. Cells share
/// the data seeds of `base`; up to `jobs` cells train concurrently.
inline std::vector<SweepCell> sweep(const TrainConfig& base, const std::vector<double>& alphas, const std::vector<double>& lambdas,
                                    const std::vector<std::uint64_t>& seeds, std::size_t jobs = 1) {
  const auto configs = sweep_configs(base, alphas, lambdas, seeds);
  const auto test = gen_dataset(base.test_data_seed(), base.test_size, base.max_objects);
  std::vector<SweepCell> cells(configs.size());
  std::vector<std::exception_ptr> errors(configs.size());
  jobs = std::max<std::size_t>(1, std::min(jobs, configs.size()));
  if (jobs == 1) {
    for (std::size_t i = 0; i < configs.size(); ++i) cells[i] = run_cell(configs[i], test);
    return cells;
  }
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      for (std::size_t i = w; i < configs.size(); i += jobs) {
        try {
          cells[i] = run_cell(configs[i], test);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return cells;
}

}  // namespace dynapyr
