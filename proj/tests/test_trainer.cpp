#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "ganet/objective.hpp"
#include "ganet/synthetic.hpp"
#include "ganet/trainer.hpp"
#include "testing_utils.hpp"

using namespace ganet;
using testing::random_tensor;

namespace fs = std::filesystem;

namespace {

NetworkConfig desk_config(FusionMode fusion) {
  NetworkConfig cfg;
  cfg.backbone_depth = BackboneDepth::kTiny;
  cfg.num_classes = 4;
  cfg.decoder_channels = 16;
  cfg.low_level_channels = 8;
  cfg.patch_size = 64;
  cfg.fusion = fusion;
  return cfg;
}

fs::path temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("ganet_trainer_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// JSONL records with wall_time stripped (the only non-deterministic field).
std::vector<std::string> read_log_stripped(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<std::string> records;
  std::string line;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    j.erase("wall_time");
    records.push_back(j.dump());
  }
  return records;
}

}  // namespace

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 1000, 0.01, 0.00002) == 0.01);
  CHECK(cosine_lr(1000, 1000, 0.01, 0.00002) == doctest::Approx(0.00002).epsilon(1e-15));
  CHECK(std::abs(cosine_lr(500, 1000, 0.01, 0.00002) - 0.00501) < 1e-9);
  // Monotone decreasing.
  double prev = 1.0;
  for (int s = 0; s <= 100; ++s) {
    const double lr = cosine_lr(s, 100, 0.01, 0.00002);
    CHECK(lr < prev + 1e-18);
    prev = lr;
  }
  CHECK_THROWS_AS((void)cosine_lr(-1, 100, 0.01, 0.001), ConfigError);
  CHECK_THROWS_AS((void)cosine_lr(101, 100, 0.01, 0.001), ConfigError);
  CHECK_THROWS_AS((void)cosine_lr(0, 0, 0.01, 0.001), ConfigError);
}

TEST_CASE("synchronized batch norm moment pooling") {
  // Single replica: identity.
  {
    auto pooled = sync_batch_norm_reduce({{0.3, 1.7, 8}});
    CHECK(pooled.mean == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(pooled.var == doctest::Approx(1.7).epsilon(1e-12));
    CHECK(pooled.count == 8);
  }
  // Identical replicas keep their stats.
  {
    auto pooled = sync_batch_norm_reduce({{1.0, 2.0, 4}, {1.0, 2.0, 4}});
    CHECK(pooled.mean == doctest::Approx(1.0));
    CHECK(pooled.var == doctest::Approx(2.0));
  }
  // Hand case: {mean 0, var 1, n 4} + {mean 2, var 1, n 4} -> mean 1, var 2.
  {
    auto pooled = sync_batch_norm_reduce({{0.0, 1.0, 4}, {2.0, 1.0, 4}});
    CHECK(pooled.mean == doctest::Approx(1.0));
    CHECK(pooled.var == doctest::Approx(2.0));
  }
  // Pooled moments equal concatenated-batch moments for k in {1,2,4}.
  {
    Rng rng(3);
    for (int k : {1, 2, 4}) {
      const std::int64_t per = 6;
      Tensor all({k * per, 2, 3, 3});
      for (std::int64_t i = 0; i < all.numel(); ++i) all.data()[i] = rng.normal() * 2.0 + 0.5;
      const auto direct = ops::batch_moments(all);
      for (int c = 0; c < 2; ++c) {
        std::vector<ReplicaMoments> shards;
        for (int r = 0; r < k; ++r) {
          Tensor shard({per, 2, 3, 3});
          std::copy_n(all.data() + r * per * 2 * 9, per * 2 * 9, shard.data());
          const auto m = ops::batch_moments(shard);
          shards.push_back({m.mean[static_cast<std::size_t>(c)],
                            m.var[static_cast<std::size_t>(c)], m.count});
        }
        const auto pooled = sync_batch_norm_reduce(shards);
        CHECK(std::abs(pooled.mean - direct.mean[static_cast<std::size_t>(c)]) < 1e-6);
        CHECK(std::abs(pooled.var - direct.var[static_cast<std::size_t>(c)]) < 1e-6);
      }
    }
  }
  CHECK_THROWS_AS((void)sync_batch_norm_reduce({{0.0, 1.0, 0}}), ConfigError);
}

TEST_CASE("momentum sgd closed form") {
  // One parameter, loss 0.5*theta^2 so grad = theta; lr 0.1, momentum 0.9.
  Tensor theta({1}, {1.0});
  theta.set_requires_grad(true);
  std::vector<nn::ParamRef> params{{"theta", theta, false}};
  SgdOptimizer opt(params, 0.9, 0.0);

  theta.mutable_grad()[0] = theta.data()[0];
  opt.step(0.1);
  CHECK(theta.data()[0] == 0.9);  // v=1, theta=1-0.1
  theta.zero_grad();
  theta.mutable_grad()[0] = theta.data()[0];
  opt.step(0.1);
  CHECK(theta.data()[0] == 0.72);  // v=0.9*1+0.9=1.8, theta=0.9-0.18

  // Weight decay adds wd*theta to the gradient, except for no-decay params.
  Tensor w({1}, {2.0});
  w.set_requires_grad(true);
  Tensor b({1}, {2.0});
  b.set_requires_grad(true);
  SgdOptimizer opt2({{"w", w, false}, {"b", b, true}}, 0.0, 0.5);
  w.ensure_grad();
  b.ensure_grad();
  opt2.step(1.0);
  CHECK(w.data()[0] == doctest::Approx(1.0));  // grad = 0 + 0.5*2
  CHECK(b.data()[0] == doctest::Approx(2.0));

  // Zero learning rate leaves parameters bitwise unchanged.
  Rng rng(4);
  auto net = build_network(desk_config(FusionMode::kSum), rng);
  SgdOptimizer opt3(net->named_parameters(), 0.9, 0.0005);
  Tensor x = random_tensor({1, 3, 64, 64}, rng);
  IntTensor labels({1, 64, 64});
  for (auto& v : labels.data) v = static_cast<std::int32_t>(rng.uniform_int(0, 3));
  Tensor target = Tensor::full({1, 1, 64, 64}, 0.5);
  auto before = net->named_parameters();
  std::vector<Tensor> snapshot;
  for (auto& p : before) snapshot.push_back(p.tensor.clone());
  opt3.zero_grad();
  auto pred = net->forward(x);
  total_loss(pred, labels, target, {1, 1, 1, 1}, kNoIgnore, 1.0).total_tensor.backward();
  opt3.step(0.0);
  auto after = net->named_parameters();
  for (std::size_t i = 0; i < after.size(); ++i)
    CHECK(testing::bitwise_equal(after[i].tensor, snapshot[i]));
}

TEST_CASE("replica gradient averaging equals concatenated-batch gradients") {
  // Two shards of two samples trained with synchronized statistics: the mean
  // of per-shard gradients (each computed with the full batch present, the
  // other shard masked out of the loss) must equal the gradient of the mean
  // loss over the whole batch.
  Rng rng(5);
  auto net = build_network(desk_config(FusionMode::kSum), rng);
  net->set_training(true);

  Tensor x = random_tensor({4, 3, 64, 64}, rng);
  IntTensor labels({4, 64, 64});
  for (auto& v : labels.data) v = static_cast<std::int32_t>(rng.uniform_int(0, 3));
  Tensor target({4, 1, 64, 64});
  for (std::int64_t i = 0; i < target.numel(); ++i) target.data()[i] = rng.uniform();
  const std::vector<double> weights{1.0, 1.0, 1.0, 1.0};

  auto shard_loss = [&](int shard) {
    IntTensor masked = labels;
    std::vector<std::uint8_t> height_mask(4 * 64 * 64, 0);
    for (int b = 0; b < 4; ++b) {
      const bool in_shard = (b / 2) == shard;
      for (std::int64_t i = 0; i < 64 * 64; ++i) {
        if (!in_shard)
          masked.data[static_cast<std::size_t>(b * 64 * 64 + i)] = 99;  // ignore
        else
          height_mask[static_cast<std::size_t>(b * 64 * 64 + i)] = 1;
      }
    }
    auto pred = net->forward(x);
    return total_loss(pred, masked, target, weights, 99, 0.7, &height_mask).total_tensor;
  };

  auto grads_of = [&](const Tensor& loss) {
    net->zero_grad();
    loss.backward();
    std::vector<std::vector<double>> out;
    for (auto& p : net->named_parameters()) out.push_back(p.tensor.grad());
    return out;
  };

  const auto g0 = grads_of(shard_loss(0));
  const auto g1 = grads_of(shard_loss(1));
  // Full batch: mean loss over everything, lambda identical.
  net->zero_grad();
  auto pred = net->forward(x);
  auto full = total_loss(pred, labels, target, weights, kNoIgnore, 0.7).total_tensor;
  full.backward();
  const auto params = net->named_parameters();
  double max_err = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& gf = params[p].tensor.grad();
    for (std::size_t i = 0; i < gf.size(); ++i) {
      const double averaged = 0.5 * (g0[p][i] + g1[p][i]);
      max_err = std::max(max_err,
                         std::abs(averaged - gf[i]) / std::max({1.0, std::abs(gf[i])}));
    }
  }
  CHECK(max_err < 1e-5);
}

TEST_CASE("training on the synthetic task decreases the loss deterministically") {
  const fs::path dir = temp_dir("run");
  SyntheticOptions opt;
  opt.num_tiles = 6;
  opt.tile_size = 96;
  DatasetManifest manifest = write_synthetic_dataset(dir / "data", opt, 7);
  TrainingData data = TrainingData::prepare(manifest);
  CHECK(data.num_classes == 4);
  CHECK(data.class_weights.size() == 4);

  TrainConfig tc;
  tc.epochs = 2;
  tc.steps_per_epoch = 25;
  tc.batch_size = 2;
  tc.lr_init = 0.02;
  tc.lr_min = 0.002;
  tc.lambda = 1.0;
  tc.seed = 11;
  tc.val_stride = 32;

  Rng init(11);
  auto net = build_network(desk_config(FusionMode::kSum), init);
  TrainOutcome out = train(*net, data, tc, dir / "run_a");
  CHECK(out.total_steps == 50);
  CHECK(fs::exists(out.metrics_log));
  CHECK(fs::exists(out.last_checkpoint));
  CHECK(fs::exists(out.best_checkpoint));

  // Loss decreases: mean of last 10 steps below mean of first 10.
  std::ifstream log(out.metrics_log);
  std::vector<double> totals;
  std::string line;
  while (std::getline(log, line)) {
    auto j = nlohmann::json::parse(line);
    if (j.contains("total")) totals.push_back(j["total"]);
  }
  REQUIRE(totals.size() == 50);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += totals[static_cast<std::size_t>(i)];
    last += totals[totals.size() - 1 - static_cast<std::size_t>(i)];
  }
  CHECK(last / 10.0 < first / 10.0);

  // Re-running with the same seed reproduces the log (minus wall_time).
  Rng init_b(11);
  auto net_b = build_network(desk_config(FusionMode::kSum), init_b);
  TrainOutcome out_b = train(*net_b, data, tc, dir / "run_b");
  CHECK(read_log_stripped(out.metrics_log) == read_log_stripped(out_b.metrics_log));

  // Checkpoint round trip: bitwise-identical eval predictions.
  auto loaded = load_checkpoint(out.last_checkpoint);
  CHECK(loaded.has_trainer_state);
  CHECK(loaded.trainer_state.global_step == 50);
  net->set_training(false);
  loaded.model->set_training(false);
  autograd::NoGradGuard ng;
  Rng probe(99);
  Tensor x = random_tensor({2, 3, 64, 64}, probe);
  auto pred_orig = net->forward(x);
  auto pred_loaded = loaded.model->forward(x);
  CHECK(testing::bitwise_equal(pred_orig.seg_logits, pred_loaded.seg_logits));
  CHECK(testing::bitwise_equal(pred_orig.height, pred_loaded.height));

  // Momentum buffers round trip through the checkpoint.
  SgdOptimizer opt_restore(loaded.model->named_parameters(), tc.momentum, tc.weight_decay);
  opt_restore.load_momentum_buffers(loaded.trainer_state.momentum);
  CHECK(opt_restore.momentum_buffers() == loaded.trainer_state.momentum);
  fs::remove_all(dir);
}

TEST_CASE("train rejects invalid configs and bad data") {
  TrainConfig tc;
  tc.lr_min = 0.5;
  tc.lr_init = 0.1;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  TrainConfig tc2;
  tc2.replicas = 0;
  CHECK_THROWS_AS(tc2.validate(), ConfigError);
}
