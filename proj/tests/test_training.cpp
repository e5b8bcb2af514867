#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "semimoe/checkpoint.hpp"
#include "semimoe/evaluation.hpp"
#include "semimoe/training.hpp"

using namespace semimoe;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_cfg() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.base_channels = 4;
  cfg.depth = 2;
  cfg.labeled_ratio = 0.25;
  cfg.seed = 11;
  cfg.lr = 0.05;
  return cfg;
}

Dataset tiny_dataset(int64_t n_train = 8, int64_t n_test = 4, int64_t hw = 32,
                     uint64_t seed = 3) {
  auto pairs = synth_generate(n_train + n_test, hw, hw, seed);
  Dataset ds;
  ds.height = hw;
  ds.width = hw;
  for (int64_t i = 0; i < n_train + n_test; ++i) {
    Sample s;
    s.id = "img_" + std::to_string(i);
    s.image = pairs[static_cast<size_t>(i)].image;
    s.mask = pairs[static_cast<size_t>(i)].mask;
    (i < n_train ? ds.train : ds.test).push_back(std::move(s));
  }
  return ds;
}

std::vector<std::vector<double>> snapshot(const ParamList& params) {
  std::vector<std::vector<double>> out;
  for (const auto& p : params) out.push_back(p.var.value().vec());
  return out;
}

}  // namespace

TEST_CASE("phase discipline: unsupervised step leaves gates bit-identical") {
  auto cfg = tiny_cfg();
  auto ds = tiny_dataset();
  TrainState state = init_state(cfg);
  const Split split = split_train(8, {cfg.labeled_ratio, cfg.fold, cfg.n_folds, cfg.seed});

  auto gates_before = snapshot(state.gate_params());
  auto experts_before = snapshot(state.bundle.params());
  Variable ub = make_unlabeled_batch(ds.train, split.unlabeled, cfg, 0, 0);
  LossBreakdown bd;
  unsupervised_step(state, ub, 1.5, bd);
  // Gate parameters: bit-identical. Expert parameters: changed.
  auto gates_after = snapshot(state.gate_params());
  CHECK(gates_before == gates_after);
  CHECK(experts_before != snapshot(state.bundle.params()));
  for (const auto& [t, v] : bd.unsup) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
  }

  // Supervised step on the same state: gates now change, sigma too.
  const double sigma_before = state.sigma.sigma[0].value()[0];
  LabeledBatch lb = make_labeled_batch(ds.train, split.labeled, cfg, 0, 0);
  supervised_step(state, lb);
  CHECK(gates_after != snapshot(state.gate_params()));
  CHECK(state.sigma.sigma[0].value()[0] != sigma_before);
}

TEST_CASE("sigma also moves during unsupervised steps") {
  auto cfg = tiny_cfg();
  auto ds = tiny_dataset();
  TrainState state = init_state(cfg);
  const Split split = split_train(8, {cfg.labeled_ratio, cfg.fold, cfg.n_folds, cfg.seed});
  const double sigma_before = state.sigma.sigma[0].value()[0];
  LossBreakdown bd;
  unsupervised_step(state, make_unlabeled_batch(ds.train, split.unlabeled, cfg, 0, 0), 2.0, bd);
  CHECK(state.sigma.sigma[0].value()[0] != sigma_before);
}

TEST_CASE("supervised overfit drives losses down on a fixed batch") {
  auto cfg = tiny_cfg();
  cfg.base_channels = 8;
  cfg.depth = 3;
  cfg.lr = 0.05;
  auto ds = tiny_dataset(4, 1, 32, 5);
  TrainState state = init_state(cfg);
  const Split split = split_train(4, {1.0, 0, 1, cfg.seed});
  LabeledBatch lb = make_labeled_batch(ds.train, split.labeled, cfg, 0, 0);
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 50; ++step) {
    LossBreakdown bd = supervised_step(state, lb);
    const double sum = bd.sup.at(Task::kSeg) + bd.sup.at(Task::kSdf) + bd.sup.at(Task::kBnd);
    if (step == 0) first = sum;
    last = sum;
  }
  CHECK(last < 0.5 * first);
}

TEST_CASE("lambda used at each iteration equals the schedule") {
  auto cfg = tiny_cfg();
  cfg.epochs = 3;
  auto ds = tiny_dataset();
  const auto dir = fs::temp_directory_path() / "semimoe_test_lambda";
  fs::remove_all(dir);
  TrainState state = init_state(cfg);
  train(state, ds, dir.string());

  std::ifstream f(dir / "metrics.jsonl");
  REQUIRE(f.good());
  std::string line;
  int64_t rows = 0;
  int64_t prev_epoch = -1, prev_iter = -1;
  while (std::getline(f, line)) {
    auto j = nlohmann::json::parse(line);
    if (j["type"] != "iter") continue;
    ++rows;
    const int64_t epoch = j["epoch"].get<int64_t>();
    const int64_t iter = j["iter"].get<int64_t>();
    CHECK(j["lambda"].get<double>() ==
          lambda_schedule(epoch, cfg.lambda_max, cfg.effective_ramp()));
    // Monotone (epoch, iter) ordering of the stream.
    CHECK((epoch > prev_epoch || (epoch == prev_epoch && iter > prev_iter)));
    prev_epoch = epoch;
    prev_iter = iter;
    // Recomposition: total = sup_weighted + lambda * unsup_weighted.
    const double total = j["total"].get<double>();
    const double recomposed =
        j["sup_weighted"].get<double>() + j["lambda"].get<double>() * j["unsup_weighted"].get<double>();
    CHECK(std::fabs(total - recomposed) <= 1e-9);
  }
  CHECK(rows == 3 * iters_per_epoch(cfg, 8));
  fs::remove_all(dir);
}

TEST_CASE("labeled_ratio = 1 degenerates to supervised-only training") {
  auto cfg = tiny_cfg();
  cfg.labeled_ratio = 1.0;
  cfg.epochs = 1;
  auto ds = tiny_dataset();
  TrainState state = init_state(cfg);
  const TrainSummary s = train(state, ds, "");
  CHECK(s.final_dice > 0.0);
  CHECK(state.epoch == 1);
}

TEST_CASE("two runs with identical seeds are bit-identical") {
  auto cfg = tiny_cfg();
  cfg.epochs = 2;
  auto ds = tiny_dataset();
  TrainState a = init_state(cfg);
  TrainState b = init_state(cfg);
  const TrainSummary sa = train(a, ds, "");
  const TrainSummary sb = train(b, ds, "");
  CHECK(sa.final_dice == sb.final_dice);
  CHECK(sa.best_dice == sb.best_dice);
  CHECK(snapshot(a.all_params()) == snapshot(b.all_params()));
}

TEST_CASE("checkpoint round-trip restores bit-identical forward outputs") {
  auto cfg = tiny_cfg();
  auto ds = tiny_dataset();
  TrainState state = init_state(cfg);
  train(state, ds, "");

  const auto path = (fs::temp_directory_path() / "semimoe_test_ckpt.bin").string();
  save_checkpoint(path, state);
  TrainState loaded = load_checkpoint(path);
  CHECK(loaded.epoch == state.epoch);
  CHECK(loaded.iteration == state.iteration);
  CHECK(loaded.best_dice == state.best_dice);
  CHECK(snapshot(loaded.all_params()) == snapshot(state.all_params()));

  NoGradGuard inference;
  Tensor probe({1, 3, 32, 32});
  for (int64_t i = 0; i < probe.numel(); ++i) probe[i] = (i % 7) / 7.0;
  auto out_a = state.bundle.forward_one(Task::kSeg, constant(probe));
  auto out_b = loaded.bundle.forward_one(Task::kSeg, constant(probe));
  CHECK(out_a.prediction.value().vec() == out_b.prediction.value().vec());
  fs::remove(path);
}

TEST_CASE("resume after checkpoint matches the uninterrupted run exactly") {
  auto cfg = tiny_cfg();
  cfg.epochs = 2;
  auto ds = tiny_dataset();

  // Uninterrupted 2-epoch run.
  TrainState full = init_state(cfg);
  train(full, ds, "");

  // 1 epoch, checkpoint, reload, 1 more epoch.
  TrainConfig partial_cfg = cfg;
  partial_cfg.epochs = 1;
  TrainState part = init_state(partial_cfg);
  train(part, ds, "");
  const auto path = (fs::temp_directory_path() / "semimoe_test_resume.bin").string();
  part.cfg.epochs = 2;
  save_checkpoint(path, part);
  TrainState resumed = load_checkpoint(path);
  CHECK(resumed.epoch == 1);
  train(resumed, ds, "");
  CHECK(snapshot(resumed.all_params()) == snapshot(full.all_params()));
  fs::remove(path);
}

TEST_CASE("checkpoint rejects foreign files and wrong schema") {
  const auto path = (fs::temp_directory_path() / "semimoe_test_bad.bin").string();
  {
    std::ofstream f(path, std::ios::binary);
    f << "not a checkpoint at all";
  }
  CHECK_THROWS(load_checkpoint(path));
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write("SMOECKPT", 8);
    const uint32_t wrong = 999;
    f.write(reinterpret_cast<const char*>(&wrong), 4);
    const uint64_t zero = 0;
    f.write(reinterpret_cast<const char*>(&zero), 8);
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("schema"), std::runtime_error);
  fs::remove(path);
}

TEST_CASE("single_gate config trains and derives auxiliary pseudo-labels") {
  auto cfg = tiny_cfg();
  cfg.single_gate = true;
  cfg.epochs = 1;
  auto ds = tiny_dataset();
  TrainState state = init_state(cfg);
  CHECK(state.gates.gate_tasks() == std::vector<Task>{Task::kSeg});
  const TrainSummary s = train(state, ds, "");
  CHECK(std::isfinite(s.final_dice));
}

TEST_CASE("linear_sum_loss config trains with frozen sigma") {
  auto cfg = tiny_cfg();
  cfg.linear_sum_loss = true;
  cfg.epochs = 1;
  auto ds = tiny_dataset();
  TrainState state = init_state(cfg);
  train(state, ds, "");
  for (const auto& s : state.sigma.sigma) CHECK(s.value()[0] == 0.0);
}

TEST_CASE("two-expert subset trains") {
  auto cfg = tiny_cfg();
  cfg.experts = "seg,bnd";
  cfg.epochs = 1;
  auto ds = tiny_dataset();
  TrainState state = init_state(cfg);
  const TrainSummary s = train(state, ds, "");
  CHECK(std::isfinite(s.final_dice));
  CHECK(state.bundle.tasks().size() == 2);
}
