#pragma once

#include <map>
#include <vector>

#include "semimoe/gating.hpp"
#include "semimoe/model.hpp"

namespace semimoe {

// Batched ground truth derived from binary masks.
struct LabelBatch {
  Tensor mask;      // B×H×W, {0,1}
  Tensor sdf;       // B×1×H×W, [-1,1]
  Tensor boundary;  // B×H×W, {0,1}
};

// Soft Dice on the softmax foreground channel, smoothed with eps in both
// numerator and denominator, averaged over the batch.
Variable dice_loss(const Variable& logits, const Tensor& target, double eps = 1.0);

// Mean over all elements of (tanh(raw) - target)^2.
Variable sdf_loss(const Variable& raw, const Tensor& target);

// Per-task learnable uncertainty scalars.
struct UncertaintyParams {
  std::vector<Task> tasks;
  std::vector<Variable> sigma;  // aligned with tasks, each shape {1}

  static UncertaintyParams create(const std::vector<Task>& tasks, double init = 0.0);
  Variable get(Task t) const;
  double value(Task t) const { return get(t).value()[0]; }
  ParamList params() const;
};

// Supervised per-task losses: expert prediction term plus gate prediction
// term (when a gate exists for the task). Gradients flow into experts and
// gates.
std::map<Task, Variable> supervised_task_losses(const std::map<Task, ExpertOutput>& experts,
                                                const std::map<Task, GateOutput>& gates,
                                                const LabelBatch& labels);

// Pseudo-labels from the gate outputs, detached from the graph:
// seg/bnd = channel argmax, sdf = tanh of the raw fused map. In
// single-gate mode only the seg gate exists and the sdf/bnd targets are
// derived per sample from the seg pseudo-mask via the label transforms.
std::map<Task, Tensor> make_pseudo_labels(const std::map<Task, GateOutput>& gates,
                                          const std::vector<Task>& tasks, bool single_gate);

// Unsupervised per-task losses of expert predictions against the pseudo
// targets. Only expert parameters (and sigma via the weighting) receive
// gradients.
std::map<Task, Variable> unsupervised_task_losses(const std::map<Task, ExpertOutput>& experts,
                                                  const std::map<Task, Tensor>& pseudo);

// gamma * sum_j exp(sigma_j).
Variable uncertainty_regularizer(const UncertaintyParams& sigma, double gamma);

// sum_m exp(-sigma_m) * L_m + gamma * sum_m exp(sigma_m). gamma must be
// positive.
Variable adaptive_weighting(const std::map<Task, Variable>& task_losses,
                            const UncertaintyParams& sigma, double gamma);

// Plain unweighted sum of the task losses (ablation variant).
Variable linear_weighting(const std::map<Task, Variable>& task_losses);

// Warm-up: lambda_max * exp(-5 * (1 - min(epoch / ramp_epochs, 1))^2).
double lambda_schedule(int64_t epoch, double lambda_max, int64_t ramp_epochs);

// Scalar snapshot of one training iteration, serialized to the metrics
// stream. total = sup_weighted + lambda * unsup_weighted.
struct LossBreakdown {
  std::map<Task, double> sup;
  std::map<Task, double> unsup;
  std::map<Task, double> sigma;
  std::map<Task, std::vector<double>> gate_weight_mean;  // per gate, per expert
  double lambda = 0.0;
  double gamma = 0.0;
  double sup_weighted = 0.0;
  double unsup_weighted = 0.0;
  double sup_reg = 0.0;    // regularizer share inside sup_weighted
  double unsup_reg = 0.0;  // regularizer share inside unsup_weighted
  double total = 0.0;
};

}  // namespace semimoe
