#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "semimoe/evaluation.hpp"
#include "semimoe/report.hpp"
#include "semimoe/training.hpp"

using namespace semimoe;

namespace {

Tensor mask_from(std::initializer_list<double> vals, int64_t H, int64_t W) {
  return Tensor({H, W}, std::vector<double>(vals));
}

}  // namespace

TEST_CASE("dice and jaccard basic values") {
  Tensor a = mask_from({1, 1, 0, 0}, 2, 2);
  CHECK(dice_score(a, a) == 1.0);
  CHECK(jaccard_score(a, a) == 1.0);

  Tensor b = mask_from({0, 0, 1, 1}, 2, 2);
  CHECK(dice_score(a, b) == 0.0);
  CHECK(jaccard_score(a, b) == 0.0);

  Tensor empty = mask_from({0, 0, 0, 0}, 2, 2);
  CHECK(dice_score(empty, empty) == 1.0);
  CHECK(jaccard_score(empty, empty) == 1.0);

  CHECK_THROWS(dice_score(a, Tensor({3, 3})));
}

TEST_CASE("dice 0.5 case: |P|=4, |T|=4, overlap 2") {
  Tensor p({4, 4}), t({4, 4});
  p.at2(0, 0) = p.at2(0, 1) = p.at2(0, 2) = p.at2(0, 3) = 1.0;
  t.at2(0, 2) = t.at2(0, 3) = t.at2(1, 0) = t.at2(1, 1) = 1.0;
  CHECK(dice_score(p, t) == doctest::Approx(0.5));
  CHECK(jaccard_score(p, t) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("jaccard identity J = D / (2 - D) on random masks") {
  Rng rng(31, SeedTag::kTestMisc, 1);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor p({8, 8}), t({8, 8});
    for (int64_t i = 0; i < 64; ++i) {
      p[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
      t[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
    }
    const double d = dice_score(p, t);
    const double j = jaccard_score(p, t);
    CHECK(std::fabs(j - d / (2.0 - d)) <= 1e-12);
    CHECK(j <= d + 1e-12);
  }
}

TEST_CASE("evaluate: deterministic and bounded") {
  TrainConfig cfg;
  cfg.base_channels = 4;
  cfg.depth = 2;
  cfg.epochs = 1;
  TrainState state = init_state(cfg);
  auto pairs = synth_generate(5, 32, 32, 17);
  std::vector<Sample> test;
  for (size_t i = 0; i < pairs.size(); ++i) {
    Sample s;
    s.id = std::to_string(i);
    s.image = pairs[i].image;
    s.mask = pairs[i].mask;
    test.push_back(std::move(s));
  }
  const EvalScores a = evaluate(state.bundle, state.gates, test);
  const EvalScores b = evaluate(state.bundle, state.gates, test, 2);  // different batching
  CHECK(a.dice == b.dice);
  CHECK(a.dice_gate == b.dice_gate);
  CHECK(a.dice >= 0.0);
  CHECK(a.dice <= 1.0);
  CHECK(a.jaccard <= a.dice + 1e-12);
  CHECK(a.n_images == 5);
  CHECK(a.gate_weight_mean.at(Task::kSeg).size() == 3);
  CHECK_THROWS(evaluate(state.bundle, state.gates, {}));
}

TEST_CASE("report statistics follow the population convention") {
  CHECK(mean_of({0.90, 0.91, 0.89}) == doctest::Approx(0.90));
  CHECK(std_of({0.90, 0.91, 0.89}) == doctest::Approx(0.0082).epsilon(0.01));
  CHECK(std_of({0.5}) == 0.0);
}

TEST_CASE("apply_ablation covers the experiment variants") {
  TrainConfig base;
  CHECK(apply_ablation(base, "full").experts == "seg,sdf,bnd");
  CHECK(apply_ablation(base, "seg+sdf").experts == "seg,sdf");
  CHECK(apply_ablation(base, "seg+bnd").experts == "seg,bnd");
  CHECK(apply_ablation(base, "single_gate").single_gate);
  CHECK(apply_ablation(base, "linear_sum").linear_sum_loss);
  CHECK(apply_ablation(base, "supervised_only").lambda_max == 0.0);
  CHECK_THROWS(apply_ablation(base, "nope"));
}

TEST_CASE("run_matrix: cell accounting, ordering, and failure isolation") {
  TrainConfig base;
  base.depth = 2;
  base.base_channels = 4;
  base.epochs = 1;
  base.labeled_ratio = 0.25;

  auto pairs = synth_generate(12, 32, 32, 23);
  Dataset ds;
  ds.height = ds.width = 32;
  for (size_t i = 0; i < pairs.size(); ++i) {
    Sample s;
    s.id = std::to_string(i);
    s.image = pairs[i].image;
    s.mask = pairs[i].mask;
    (i < 8 ? ds.train : ds.test).push_back(std::move(s));
  }

  const std::vector<std::string> ablations{"full", "supervised_only"};
  const std::vector<MatrixRepeat> repeats{{1, 0}, {2, 0}};
  EvalReport report = run_matrix(base, ablations, repeats, ds, "", 2);
  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[0].ablation == "full");
  CHECK(report.rows[1].ablation == "supervised_only");
  for (const auto& row : report.rows) {
    CHECK(row.n_ok == 2);
    CHECK(row.cells.size() == 2);
  }
  const std::string text = format_report_text(report);
  CHECK(text.find("full") != std::string::npos);

  // A failing cell is recorded and does not sink the matrix.
  TrainConfig broken = base;
  broken.labeled_ratio = 0.01;  // 0.08 labeled images -> error
  EvalReport rep2 = run_matrix(broken, {"full"}, {{1, 0}}, ds, "", 1);
  CHECK(rep2.rows[0].n_ok == 0);
  CHECK_FALSE(rep2.rows[0].cells[0].ok);
  CHECK(!rep2.rows[0].cells[0].error.empty());
}
