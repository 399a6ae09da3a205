#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "support/test_util.hpp"

using namespace dynapyr;
using dynapyr::testing::random_tensor;
using dynapyr::testing::tiny_train_config;

namespace fs = std::filesystem;

namespace {

std::string config_error_key(const std::string& text) {
  try {
    validate_config(parse_config(text));
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<none>";
}

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("dynapyr_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Config, DefaultsSurviveFormatAndParse) {
  const TrainConfig defaults;
  const auto text = format_config(defaults);
  EXPECT_EQ(format_config(parse_config(text)), text);
  for (auto key : kConfigKeys) EXPECT_NE(text.find(std::string(key) + " = "), std::string::npos) << key;
}

TEST(Config, RoundTripsAwkwardValues) {
  TrainConfig cfg;
  cfg.learning_rate = 0.1 + 0.2;
  cfg.alpha_budget = 1.0 / 3.0;
  cfg.tau = 2.5e-3;
  cfg.seed = 18446744073709551615ull;
  cfg.model.variant = Variant::inception;
  cfg.model.kernels = {1, 3};
  cfg.model.dilations = {1, 4};
  const auto back = parse_config(format_config(cfg));
  EXPECT_EQ(back.learning_rate, cfg.learning_rate);
  EXPECT_EQ(back.alpha_budget, cfg.alpha_budget);
  EXPECT_EQ(back.tau, cfg.tau);
  EXPECT_EQ(back.seed, cfg.seed);
  EXPECT_EQ(back.model.variant, Variant::inception);
  EXPECT_EQ(back.model.dilations, cfg.model.dilations);
}

TEST(Config, CommentsBlankLinesAndOverlay) {
  TrainConfig base;
  base.epochs = 3;
  const auto cfg = parse_config("# header\n\n  lambda = 0.25   # trailing\r\nseed=9\n", base);
  EXPECT_EQ(cfg.lambda, 0.25);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.epochs, 3u);
}

TEST(Config, ErrorsNameTheKey) {
  EXPECT_EQ(config_error_key("bogus = 1\n"), "bogus");
  EXPECT_EQ(config_error_key("epochs = many\n"), "epochs");
  EXPECT_EQ(config_error_key("epochs = 0\n"), "epochs");
  EXPECT_EQ(config_error_key("alpha_budget = 1.5\n"), "alpha_budget");
  EXPECT_EQ(config_error_key("lambda = -0.1\n"), "lambda");
  EXPECT_EQ(config_error_key("tau = 0\n"), "tau");
  EXPECT_EQ(config_error_key("widths = 8,8,8\n"), "widths");
  EXPECT_EQ(config_error_key("widths = 6,8,8,8\n"), "widths");
  EXPECT_EQ(config_error_key("variant = resnet\n"), "variant");
  EXPECT_EQ(config_error_key("kernels = 1,3\n"), "dilations");
  EXPECT_EQ(config_error_key("lambda = 0\n"), "<none>");
  EXPECT_THROW(parse_config("just words\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/dynapyr.cfg"), ConfigError);
}

TEST(Checkpoint, EncodeDecodeIsBitExact) {
  Rng rng(1);
  std::vector<NamedTensor> tensors{{"a", random_tensor({3, 2, 2}, rng)},
                                   {"b", Tensor::vector({-0.0, 1e-310, std::numeric_limits<double>::infinity()})},
                                   {"c", Tensor::scalar(std::nan(""))}};
  const auto back = decode_checkpoint(encode_checkpoint(tensors));
  ASSERT_EQ(back.size(), tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    EXPECT_EQ(back[i].name, tensors[i].name);
    EXPECT_TRUE(bit_equal(back[i].tensor, tensors[i].tensor)) << tensors[i].name;
  }
}

TEST(Checkpoint, LayoutStartsWithMagicAndVersion) {
  const auto bytes = encode_checkpoint({{"x", Tensor::scalar(1.0)}});
  ASSERT_GE(bytes.size(), 10u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DYFP");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[6], 1);  // tensor count, little endian
}

TEST(Checkpoint, RejectsCorruption) {
  const auto good = encode_checkpoint({{"w", Tensor({2, 2}, 0.5)}});
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), CheckpointError);
  auto bad_version = good;
  bad_version[4] = 9;
  EXPECT_THROW(decode_checkpoint(bad_version), CheckpointError);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{12}, good.size() - 1}) {
    const std::vector<unsigned char> truncated(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(decode_checkpoint(truncated), CheckpointError) << "cut at " << cut;
  }
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), CheckpointError);
}

TEST(Checkpoint, ModelRoundTripPreservesOutputs) {
  const auto dir = scratch_dir("model");
  auto cfg = tiny_train_config();
  cfg.epochs = 1;
  const auto trained = train(cfg).model;
  const auto path = (dir / "model.ckpt").string();
  save_model(path, trained);
  const auto loaded = load_model(path);
  const auto pa = trained.parameters(), pb = loaded.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(bit_equal(pa[i].var.value(), pb[i].var.value())) << pa[i].name;
  EXPECT_EQ(loaded.config.widths, trained.config.widths);
  const auto data = gen_dataset(2, 10, 6);
  const auto ea = evaluate(trained, data, DecisionSource::gate()), eb = evaluate(loaded, data, DecisionSource::gate());
  EXPECT_EQ(ea.metrics.mean_iou, eb.metrics.mean_iou);
  EXPECT_EQ(ea.metrics.avg_realized_cost, eb.metrics.avg_realized_cost);

  save_model((dir / "again.ckpt").string(), loaded);
  std::ifstream a(path, std::ios::binary), b(dir / "again.ckpt", std::ios::binary);
  EXPECT_TRUE(std::equal(std::istreambuf_iterator<char>(a), {}, std::istreambuf_iterator<char>(b), {}));
}

TEST(Checkpoint, RejectsForeignTensorSets) {
  const auto good = model_tensors(Model::init(tiny_train_config().model, 1));
  auto renamed = good;
  renamed.back().name = "head.9.bias";
  EXPECT_THROW(model_from_tensors(renamed), CheckpointError);
  auto reshaped = good;
  reshaped.back().tensor = Tensor({2});
  EXPECT_THROW(model_from_tensors(reshaped), CheckpointError);
  auto extra = good;
  extra.push_back({"spare", Tensor::scalar(0.0)});
  EXPECT_THROW(model_from_tensors(extra), CheckpointError);
  EXPECT_THROW(read_checkpoint("/nonexistent/model.ckpt"), CheckpointError);
}

TEST(Csv, MetricsFormat) {
  EpochMetrics m;
  m.epoch = 3;
  m.loss_det = 0.5;
  m.loss_cost = 1.0 / 3.0;
  m.loss_total = 0.25;
  m.avg_cr = 12345.0;
  m.exec_rate = {0.0, 0.25, 0.5, 1.0};
  m.mean_iou = 2.0 / 3.0;
  EXPECT_EQ(metrics_csv({m}), std::string(kMetricsHeader) +
                                  "\n3,0.500000,0.333333,0.250000,12345.000000,0.000000,0.250000,0.500000,1.000000,0.666667\n");
}

TEST(Csv, ImagesAndSweepFormat) {
  ImageRecord r;
  r.image_index = 4;
  r.object_count = 2;
  r.executed_blocks = 3;
  r.realized_cost = 987654;
  r.iou = 0.125;
  EXPECT_EQ(images_csv({r}), std::string(kImagesHeader) + "\n4,2,3,987654,0.125000\n");
  const SweepRow row{0.2, 0.1, 3, 0.5, 100.0, 0.2};
  EXPECT_EQ(sweep_csv({row}), std::string(kSweepHeader) + "\n0.200000,0.100000,3,0.500000,100.000000,0.200000\n");
}

TEST(Csv, WritesLfOnlyFiles) {
  const auto dir = scratch_dir("csv");
  const auto path = (dir / "m.csv").string();
  write_metrics_csv(path, {EpochMetrics{}, EpochMetrics{}});
  std::ifstream in(path, std::ios::binary);
  const std::string text((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(text.find('\r'), std::string::npos);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
  EXPECT_THROW(write_metrics_csv((dir / "missing" / "m.csv").string(), {}), std::runtime_error);
}

TEST(Stats, AverageRanksShareTies) {
  const std::vector<double> xs{10, 20, 20, 5};
  EXPECT_EQ(average_ranks(xs), (std::vector<double>{2, 3.5, 3.5, 1}));
}

TEST(Stats, SpearmanMatchesClosedForm) {
  // Without ties rho = 1 - 6 sum d^2 / (n (n^2 - 1)).
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 5 + rng.below(30);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.uniform(0, 1);
      b[i] = rng.uniform(0, 1);
    }
    const auto ra = average_ranks(a), rb = average_ranks(b);
    double d2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
    const double nn = static_cast<double>(n);
    EXPECT_NEAR(spearman(a, b), 1.0 - 6.0 * d2 / (nn * (nn * nn - 1.0)), 1e-12);
  }
}

TEST(Stats, SpearmanEdgeCases) {
  const std::vector<double> up{1, 2, 3, 4}, down{8, 6, 4, 2}, flat{1, 1, 1, 1};
  EXPECT_DOUBLE_EQ(spearman(up, up), 1.0);
  EXPECT_DOUBLE_EQ(spearman(up, down), -1.0);
  EXPECT_TRUE(std::isnan(spearman(up, flat)));
  EXPECT_THROW(spearman(up, std::vector<double>{1, 2}), std::invalid_argument);
}

TEST(Stats, Median) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 3, 2}), 2.5);
  EXPECT_THROW(median({}), std::invalid_argument);
}
