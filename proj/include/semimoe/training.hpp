#pragma once

#include <optional>
#include <string>

#include "semimoe/config.hpp"
#include "semimoe/data.hpp"
#include "semimoe/gating.hpp"
#include "semimoe/losses.hpp"
#include "semimoe/model.hpp"
#include "semimoe/optimizer.hpp"

namespace semimoe {

// Everything a run owns. A state is mutated by exactly one training loop;
// evaluation only reads it.
struct TrainState {
  TrainConfig cfg;
  ExpertBundle bundle;
  GateStack gates;
  UncertaintyParams sigma;
  SgdOptimizer opt;
  int64_t epoch = 0;      // completed epochs
  int64_t iteration = 0;  // completed iterations (global)
  double best_dice = -1.0;
  int64_t best_epoch = -1;

  ParamList all_params() const;
  // The unsupervised phase updates experts and sigma; gate parameters are
  // excluded from that optimizer step.
  ParamList unsup_params() const;
  ParamList gate_params() const;
};

TrainState init_state(const TrainConfig& cfg);

struct LabeledBatch {
  Variable images;  // B×3×H×W
  LabelBatch labels;
};

// Batch assembly: indices drawn independently with replacement per
// iteration, each sample augmented, labels re-derived from the
// transformed mask. Everything is a pure function of (cfg.seed, epoch,
// iter), which makes resumed runs identical to uninterrupted ones.
LabeledBatch make_labeled_batch(const std::vector<Sample>& train,
                                const std::vector<int64_t>& labeled_idx, const TrainConfig& cfg,
                                int64_t epoch, int64_t iter);
Variable make_unlabeled_batch(const std::vector<Sample>& train,
                              const std::vector<int64_t>& unlabeled_idx, const TrainConfig& cfg,
                              int64_t epoch, int64_t iter);

// One optimizer step on the labeled batch updating experts, gates and
// sigma. Returns the per-task breakdown (unsup fields empty).
LossBreakdown supervised_step(TrainState& state, const LabeledBatch& batch);

// One optimizer step on the unlabeled batch: pseudo-labels from the
// gates (stop-gradient), loss on expert predictions, update restricted
// to experts and sigma. Fills the unsup fields of the breakdown.
void unsupervised_step(TrainState& state, const Variable& images, double lambda,
                       LossBreakdown& breakdown);

struct TrainSummary {
  double best_dice = 0.0;
  double best_jaccard = 0.0;
  int64_t best_epoch = -1;
  double final_dice = 0.0;
  double final_jaccard = 0.0;
  double final_gate_dice = 0.0;
  double wall_seconds = 0.0;
};

// The full loop: per iteration one supervised step then one unsupervised
// step (skipped when there is no unlabeled data or lambda_max == 0);
// evaluation on the test set every cfg.eval_every epochs; best-Dice
// checkpoint retained. out_dir may be empty to keep everything in
// memory (no files written).
TrainSummary train(TrainState& state, const Dataset& ds, const std::string& out_dir,
                   bool verbose = false);

int64_t iters_per_epoch(const TrainConfig& cfg, int64_t n_train);

}  // namespace semimoe
