#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "semimoe/model.hpp"
#include "support/gradcheck.hpp"

using namespace semimoe;
using semimoe::testing::random_tensor;

namespace {

BundleConfig desk_cfg() {
  BundleConfig cfg;
  cfg.depth = 3;
  cfg.base_channels = 8;
  return cfg;
}

std::vector<double> flatten_params(const ExpertBundle& b) {
  std::vector<double> all;
  for (const auto& p : b.params())
    all.insert(all.end(), p.var.value().vec().begin(), p.var.value().vec().end());
  return all;
}

}  // namespace

TEST_CASE("same seed gives bit-identical parameters") {
  auto a = ExpertBundle::build(desk_cfg(), 42);
  auto b = ExpertBundle::build(desk_cfg(), 42);
  CHECK(flatten_params(a) == flatten_params(b));
  auto c = ExpertBundle::build(desk_cfg(), 43);
  CHECK(flatten_params(a) != flatten_params(c));
}

TEST_CASE("feature and prediction shape contract") {
  auto bundle = ExpertBundle::build(desk_cfg(), 1);
  Rng rng(0, SeedTag::kTestMisc, 20);
  auto x = constant(random_tensor({1, 3, 64, 64}, rng, 0.0, 1.0));
  NoGradGuard inference;
  auto outs = bundle.forward(x);
  for (const auto& [task, out] : outs) {
    CHECK(out.features.shape() == std::vector<int64_t>{1, 8, 64, 64});
    const int64_t hc = head_channels(task);
    CHECK(out.prediction.shape() == std::vector<int64_t>{1, hc, 64, 64});
  }
  auto x2 = constant(random_tensor({2, 3, 64, 64}, rng, 0.0, 1.0));
  auto seg = bundle.forward_one(Task::kSeg, x2);
  CHECK(seg.prediction.shape() == std::vector<int64_t>{2, 2, 64, 64});
}

TEST_CASE("indivisible spatial dims raise a shape error") {
  auto bundle = ExpertBundle::build(desk_cfg(), 1);
  Rng rng(0, SeedTag::kTestMisc, 21);
  auto x = constant(random_tensor({1, 3, 66, 64}, rng));
  CHECK_THROWS(bundle.forward_one(Task::kSeg, x));
}

TEST_CASE("bundle parameter count is three independent experts") {
  auto bundle = ExpertBundle::build(desk_cfg(), 7);
  BundleConfig single = desk_cfg();
  single.tasks = {Task::kSeg};
  auto one = ExpertBundle::build(single, 7);
  // seg/bnd heads have 2 output channels, sdf has 1: exact 3x holds for
  // everything except the sdf head row.
  const int64_t head_in = desk_cfg().base_channels;
  CHECK(bundle.param_count() == 3 * one.param_count() - (head_in + 1));
}

TEST_CASE("mismatched feature_channels is a config error") {
  std::vector<ExpertConfig> cfgs(3);
  cfgs[0].task = Task::kSeg;
  cfgs[1].task = Task::kSdf;
  cfgs[2].task = Task::kBnd;
  cfgs[1].base_channels = 16;
  CHECK_THROWS(build_bundle(cfgs, 5));
  cfgs[1].base_channels = 8;
  CHECK_NOTHROW(build_bundle(cfgs, 5));
}

TEST_CASE("zero-weight head yields an all-zero prediction") {
  auto bundle = ExpertBundle::build(desk_cfg(), 3);
  for (auto& p : bundle.params())
    if (p.name.find("/head/") != std::string::npos) p.var.value_mut().fill(0.0);
  Rng rng(0, SeedTag::kTestMisc, 22);
  auto x = constant(random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0));
  NoGradGuard inference;
  auto out = bundle.forward_one(Task::kSeg, x);
  for (int64_t i = 0; i < out.prediction.numel(); ++i) CHECK(out.prediction.value()[i] == 0.0);
}

TEST_CASE("forward is deterministic in inference mode") {
  auto bundle = ExpertBundle::build(desk_cfg(), 11);
  Rng rng(0, SeedTag::kTestMisc, 23);
  auto x = constant(random_tensor({2, 3, 16, 16}, rng, 0.0, 1.0));
  NoGradGuard inference;
  auto a = bundle.forward_one(Task::kBnd, x);
  auto b = bundle.forward_one(Task::kBnd, x);
  CHECK(a.prediction.value().vec() == b.prediction.value().vec());
}

TEST_CASE("no parameter aliasing across experts") {
  auto bundle = ExpertBundle::build(desk_cfg(), 13);
  std::vector<std::vector<double>> before;
  ParamList params = bundle.params();
  for (const auto& p : params) before.push_back(p.var.value().vec());
  for (auto& p : params)
    if (p.name.rfind("expert/seg", 0) == 0)
      for (int64_t i = 0; i < p.var.numel(); ++i) p.var.value_mut()[i] += 1.0;
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].name.rfind("expert/seg", 0) == 0) continue;
    CHECK(params[i].var.value().vec() == before[i]);
  }
}

TEST_CASE("autodiff gradients match finite differences through an expert") {
  BundleConfig cfg = desk_cfg();
  cfg.base_channels = 4;
  auto bundle = ExpertBundle::build(cfg, 17);
  Rng rng(0, SeedTag::kTestMisc, 24);
  auto x = constant(random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0));
  auto f = [&] {
    auto out = bundle.forward_one(Task::kSeg, x);
    return sum_all(out.prediction);
  };
  // A handful of trunk weights sampled from every layer kind.
  ParamList params = bundle.params();
  std::vector<Variable> probes;
  for (const auto& p : params)
    if (p.name.rfind("expert/seg", 0) == 0) probes.push_back(p.var);
  Rng idx_rng(0, SeedTag::kTestMisc, 25);
  auto res = semimoe::testing::gradcheck_sampled(f, probes, idx_rng, 2, 1e-4);
  CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("shared encoder variant reduces parameters and still runs") {
  auto cfg = desk_cfg();
  cfg.shared_encoder = true;
  auto shared = ExpertBundle::build(cfg, 19);
  auto indep = ExpertBundle::build(desk_cfg(), 19);
  CHECK(shared.param_count() < indep.param_count());
  Rng rng(0, SeedTag::kTestMisc, 26);
  auto x = constant(random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0));
  NoGradGuard inference;
  auto outs = shared.forward(x);
  CHECK(outs.size() == 3);
}
