#include "semimoe/training.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "semimoe/checkpoint.hpp"
#include "semimoe/runtime.hpp"
#include "semimoe/evaluation.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace semimoe {

ParamList TrainState::all_params() const {
  ParamList out = bundle.params();
  for (const auto& p : gates.params()) out.push_back(p);
  for (const auto& p : sigma.params()) out.push_back(p);
  return out;
}

ParamList TrainState::unsup_params() const {
  ParamList out = bundle.params();
  for (const auto& p : sigma.params()) out.push_back(p);
  return out;
}

ParamList TrainState::gate_params() const { return gates.params(); }

TrainState init_state(const TrainConfig& cfg) {
  tune_allocator();
  cfg.validate();
  TrainState st;
  st.cfg = cfg;
  BundleConfig bc;
  bc.depth = cfg.depth;
  bc.base_channels = cfg.base_channels;
  bc.tasks = cfg.task_list();
  bc.shared_encoder = cfg.shared_encoder;
  st.bundle = ExpertBundle::build(bc, cfg.seed);
  GateConfig gc;
  gc.num_experts = static_cast<int64_t>(bc.tasks.size());
  gc.feature_channels = cfg.base_channels;
  gc.reduction = cfg.gate_reduction;
  gc.dropout_rate = cfg.gate_dropout;
  const std::vector<Task> gate_tasks =
      cfg.single_gate ? std::vector<Task>{Task::kSeg} : bc.tasks;
  st.gates = GateStack::build(gc, gate_tasks, cfg.seed);
  st.sigma = UncertaintyParams::create(bc.tasks, 0.0);
  st.opt = SgdOptimizer(cfg.lr, cfg.momentum, cfg.weight_decay);
  return st;
}

int64_t iters_per_epoch(const TrainConfig& cfg, int64_t n_train) {
  return (n_train + cfg.batch_size - 1) / cfg.batch_size;
}

namespace {

// Augmentation / sampling streams are salted with the global iteration
// and the slot so every draw is a pure function of (seed, epoch, iter).
uint64_t batch_salt(int64_t epoch, int64_t iter) {
  return static_cast<uint64_t>(epoch) * 1000003ULL + static_cast<uint64_t>(iter);
}

}  // namespace

LabeledBatch make_labeled_batch(const std::vector<Sample>& train,
                                const std::vector<int64_t>& labeled_idx, const TrainConfig& cfg,
                                int64_t epoch, int64_t iter) {
  if (labeled_idx.empty()) throw std::invalid_argument("labeled set is empty");
  const int64_t B = cfg.batch_size;
  Rng pick(cfg.seed, SeedTag::kBatchLabeled, batch_salt(epoch, iter));
  LabeledBatch out;
  Tensor images, masks, sdfs, bnds;
  for (int64_t b = 0; b < B; ++b) {
    const int64_t idx = labeled_idx[static_cast<size_t>(pick.next_index(
        static_cast<int64_t>(labeled_idx.size())))];
    const Sample& src = train[static_cast<size_t>(idx)];
    const uint64_t aug_seed =
        seed_hash({cfg.seed, static_cast<uint64_t>(SeedTag::kAugment), batch_salt(epoch, iter),
                   static_cast<uint64_t>(b)});
    Sample aug = augment(src, aug_seed, cfg.crop_augment);
    if (!aug.mask) throw std::invalid_argument("labeled sample " + src.id + " has no mask");
    const LabelTriple labels = derive_labels(*aug.mask);
    const int64_t H = aug.image.size(1), W = aug.image.size(2);
    if (b == 0) {
      images = Tensor({B, 3, H, W});
      masks = Tensor({B, H, W});
      sdfs = Tensor({B, 1, H, W});
      bnds = Tensor({B, H, W});
    }
    std::copy_n(aug.image.data(), 3 * H * W, images.data() + b * 3 * H * W);
    std::copy_n(labels.mask.data(), H * W, masks.data() + b * H * W);
    std::copy_n(labels.sdf.data(), H * W, sdfs.data() + b * H * W);
    std::copy_n(labels.boundary.data(), H * W, bnds.data() + b * H * W);
  }
  out.images = constant(std::move(images));
  out.labels.mask = std::move(masks);
  out.labels.sdf = std::move(sdfs);
  out.labels.boundary = std::move(bnds);
  return out;
}

Variable make_unlabeled_batch(const std::vector<Sample>& train,
                              const std::vector<int64_t>& unlabeled_idx, const TrainConfig& cfg,
                              int64_t epoch, int64_t iter) {
  if (unlabeled_idx.empty()) throw std::invalid_argument("unlabeled set is empty");
  const int64_t B = cfg.batch_size;
  Rng pick(cfg.seed, SeedTag::kBatchUnlabeled, batch_salt(epoch, iter));
  Tensor images;
  for (int64_t b = 0; b < B; ++b) {
    const int64_t idx = unlabeled_idx[static_cast<size_t>(pick.next_index(
        static_cast<int64_t>(unlabeled_idx.size())))];
    // Labels were stripped at split time; operate on the image alone.
    Sample stripped;
    stripped.id = train[static_cast<size_t>(idx)].id;
    stripped.image = train[static_cast<size_t>(idx)].image;
    if (cfg.augment_unlabeled) {
      const uint64_t aug_seed =
          seed_hash({cfg.seed, static_cast<uint64_t>(SeedTag::kAugment), batch_salt(epoch, iter),
                     1000 + static_cast<uint64_t>(b)});
      stripped = augment(stripped, aug_seed, cfg.crop_augment);
    }
    const int64_t H = stripped.image.size(1), W = stripped.image.size(2);
    if (b == 0) images = Tensor({B, 3, H, W});
    std::copy_n(stripped.image.data(), 3 * H * W, images.data() + b * 3 * H * W);
  }
  return constant(std::move(images));
}

namespace {

Variable phase_objective(const std::map<Task, Variable>& task_losses, const TrainState& state) {
  if (state.cfg.linear_sum_loss) return linear_weighting(task_losses);
  return adaptive_weighting(task_losses, state.sigma, state.cfg.gamma);
}

void record_gate_means(const std::map<Task, GateOutput>& gouts, LossBreakdown& bd) {
  for (const auto& [task, gout] : gouts) {
    const auto& w = gout.weights.value();
    std::vector<double> mean(static_cast<size_t>(w.size(1)), 0.0);
    for (int64_t b = 0; b < w.size(0); ++b)
      for (int64_t m = 0; m < w.size(1); ++m) mean[static_cast<size_t>(m)] += w.at2(b, m);
    for (auto& v : mean) v /= static_cast<double>(w.size(0));
    bd.gate_weight_mean[task] = std::move(mean);
  }
}

}  // namespace

LossBreakdown supervised_step(TrainState& state, const LabeledBatch& batch) {
  const TrainConfig& cfg = state.cfg;
  const ParamList all = state.all_params();
  SgdOptimizer::zero_grad(all);

  auto outs = state.bundle.forward(batch.images);
  auto xg = concat_features(outs, state.bundle.tasks());
  Rng dropout_rng(cfg.seed, SeedTag::kDropout, static_cast<uint64_t>(state.iteration), 0);
  auto gouts = state.gates.forward(xg, &dropout_rng);
  auto task_losses = supervised_task_losses(outs, gouts, batch.labels);
  Variable objective = phase_objective(task_losses, state);
  backward(objective);
  state.opt.step(all);

  LossBreakdown bd;
  bd.gamma = cfg.gamma;
  for (const auto& [t, v] : task_losses) bd.sup[t] = v.value()[0];
  for (size_t i = 0; i < state.sigma.tasks.size(); ++i)
    bd.sigma[state.sigma.tasks[i]] = state.sigma.sigma[i].value()[0];
  bd.sup_weighted = objective.value()[0];
  if (!cfg.linear_sum_loss)
    bd.sup_reg = uncertainty_regularizer(state.sigma, cfg.gamma).value()[0];
  bd.total = bd.sup_weighted;
  record_gate_means(gouts, bd);
  return bd;
}

void unsupervised_step(TrainState& state, const Variable& images, double lambda,
                       LossBreakdown& bd) {
  const TrainConfig& cfg = state.cfg;
  SgdOptimizer::zero_grad(state.all_params());

  auto outs = state.bundle.forward(images);
  auto xg = concat_features(outs, state.bundle.tasks());
  Rng dropout_rng(cfg.seed, SeedTag::kDropout, static_cast<uint64_t>(state.iteration), 1);
  auto gouts = state.gates.forward(xg, &dropout_rng);
  auto pseudo = make_pseudo_labels(gouts, state.bundle.tasks(), cfg.single_gate);
  auto task_losses = unsupervised_task_losses(outs, pseudo);

  Variable weighted = phase_objective(task_losses, state);
  Variable objective;
  if (cfg.linear_sum_loss || cfg.lambda_scales_regularizer) {
    objective = mul_scalar(weighted, lambda);
  } else {
    // Alternative composition: lambda scales only the task terms, the
    // sigma regularizer enters once unscaled.
    Variable tasks_only = linear_weighting([&] {
      std::map<Task, Variable> weighted_tasks;
      for (const auto& [t, v] : task_losses)
        weighted_tasks.emplace(t, mul(exp_v(neg(state.sigma.get(t))), v));
      return weighted_tasks;
    }());
    objective = add(mul_scalar(tasks_only, lambda),
                    uncertainty_regularizer(state.sigma, cfg.gamma));
  }
  backward(objective);
  // Gate parameters are excluded from this update.
  state.opt.step(state.unsup_params());

  for (const auto& [t, v] : task_losses) bd.unsup[t] = v.value()[0];
  for (size_t i = 0; i < state.sigma.tasks.size(); ++i)
    bd.sigma[state.sigma.tasks[i]] = state.sigma.sigma[i].value()[0];
  bd.unsup_weighted = weighted.value()[0];
  if (!cfg.linear_sum_loss)
    bd.unsup_reg = uncertainty_regularizer(state.sigma, cfg.gamma).value()[0];
  bd.lambda = lambda;
  // objective is exactly the quantity the optimizer saw for this phase.
  bd.total = bd.sup_weighted + objective.value()[0];
}

namespace {

json breakdown_to_json(const LossBreakdown& bd, int64_t epoch, int64_t iter) {
  json j;
  j["type"] = "iter";
  j["epoch"] = epoch;
  j["iter"] = iter;
  j["lambda"] = bd.lambda;
  for (const auto& [t, v] : bd.sup) j["sup"][task_name(t)] = v;
  for (const auto& [t, v] : bd.unsup) j["unsup"][task_name(t)] = v;
  for (const auto& [t, v] : bd.sigma) j["sigma"][task_name(t)] = v;
  for (const auto& [t, v] : bd.gate_weight_mean) j["gate_w"][task_name(t)] = v;
  j["sup_weighted"] = bd.sup_weighted;
  j["unsup_weighted"] = bd.unsup_weighted;
  j["total"] = bd.total;
  return j;
}

}  // namespace

TrainSummary train(TrainState& state, const Dataset& ds, const std::string& out_dir,
                   bool verbose) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig& cfg = state.cfg;
  if (ds.train.empty()) throw std::invalid_argument("train: empty train set");

  SplitSpec spec{cfg.labeled_ratio, cfg.fold, cfg.n_folds, cfg.seed};
  const Split split = split_train(static_cast<int64_t>(ds.train.size()), spec);
  if (split.labeled.empty()) throw std::invalid_argument("train: labeled set is empty");
  const bool use_unsup = !split.unlabeled.empty() && cfg.lambda_max > 0.0;

  std::ofstream metrics;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    metrics.open(fs::path(out_dir) / "metrics.jsonl",
                 state.iteration > 0 ? std::ios::app : std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot open metrics stream in " + out_dir);
  }

  const int64_t ipe = iters_per_epoch(cfg, static_cast<int64_t>(ds.train.size()));
  TrainSummary summary;
  summary.best_dice = state.best_dice;
  summary.best_epoch = state.best_epoch;

  for (int64_t epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    if (cfg.poly_lr_decay)
      state.opt.set_lr(cfg.lr *
                       std::pow(1.0 - static_cast<double>(epoch) / cfg.epochs, 0.9));
    const double lambda = lambda_schedule(epoch, cfg.lambda_max, cfg.effective_ramp());
    for (int64_t it = 0; it < ipe; ++it) {
      LabeledBatch lb = make_labeled_batch(ds.train, split.labeled, cfg, epoch, it);
      LossBreakdown bd = supervised_step(state, lb);
      bd.lambda = lambda;
      if (use_unsup) {
        Variable ub = make_unlabeled_batch(ds.train, split.unlabeled, cfg, epoch, it);
        unsupervised_step(state, ub, lambda, bd);
      }
      ++state.iteration;
      if (metrics.is_open()) metrics << breakdown_to_json(bd, epoch, it).dump() << "\n";
    }
    state.epoch = epoch + 1;

    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs - 1) {
      const EvalScores ev = evaluate(state.bundle, state.gates, ds.test);
      const bool is_best = ev.dice > state.best_dice;
      if (is_best) {
        state.best_dice = ev.dice;
        state.best_epoch = epoch;
        summary.best_dice = ev.dice;
        summary.best_jaccard = ev.jaccard;
        summary.best_epoch = epoch;
        if (!out_dir.empty())
          save_checkpoint((fs::path(out_dir) / "ckpt_best.bin").string(), state);
      }
      summary.final_dice = ev.dice;
      summary.final_jaccard = ev.jaccard;
      summary.final_gate_dice = ev.dice_gate;
      if (metrics.is_open()) {
        json j;
        j["type"] = "eval";
        j["epoch"] = epoch;
        j["dice"] = ev.dice;
        j["jaccard"] = ev.jaccard;
        j["dice_gate"] = ev.dice_gate;
        j["jaccard_gate"] = ev.jaccard_gate;
        for (const auto& [t, v] : ev.gate_weight_mean) j["gate_w"][task_name(t)] = v;
        j["best"] = is_best;
        metrics << j.dump() << "\n";
      }
      if (verbose)
        std::cout << "epoch " << epoch << "  dice " << ev.dice << "  jaccard " << ev.jaccard
                  << "  (gate " << ev.dice_gate << ")  lambda " << lambda << "\n";
    }
  }
  if (!out_dir.empty()) save_checkpoint((fs::path(out_dir) / "ckpt_last.bin").string(), state);
  summary.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return summary;
}

}  // namespace semimoe
