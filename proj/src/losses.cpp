#include "semimoe/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "semimoe/label_transforms.hpp"

namespace semimoe {

namespace {

void check_binary_target(const Tensor& target) {
  for (int64_t i = 0; i < target.numel(); ++i)
    if (target[i] != 0.0 && target[i] != 1.0)
      throw std::invalid_argument("dice target must be binary");
}

}  // namespace

Variable dice_loss(const Variable& logits, const Tensor& target, double eps) {
  const auto& s = logits.shape();
  if (s.size() != 4 || s[1] != 2) throw std::invalid_argument("dice_loss: expected B×2×H×W logits");
  if (target.dim() != 3 || target.size(0) != s[0] || target.size(1) != s[2] ||
      target.size(2) != s[3])
    throw std::invalid_argument("dice_loss: target shape mismatch");
  check_binary_target(target);

  Variable p = select_channel(softmax_dim1(logits), 1);
  Variable q = constant(target);
  Variable inter = sum_per_sample(mul(p, q));
  Variable sums = add(sum_per_sample(p), sum_per_sample(q));
  Variable dice = div(add_scalar(mul_scalar(inter, 2.0), eps), add_scalar(sums, eps));
  return mean_all(rsub_scalar(1.0, dice));
}

Variable sdf_loss(const Variable& raw, const Tensor& target) {
  const auto& s = raw.shape();
  if (s.size() != 4 || s[1] != 1) throw std::invalid_argument("sdf_loss: expected B×1×H×W input");
  if (target.shape() != s) throw std::invalid_argument("sdf_loss: target shape mismatch");
  Variable d = sub(tanh_v(raw), constant(target));
  return mean_all(mul(d, d));
}

UncertaintyParams UncertaintyParams::create(const std::vector<Task>& tasks, double init) {
  UncertaintyParams up;
  up.tasks = tasks;
  for (size_t i = 0; i < tasks.size(); ++i) up.sigma.push_back(make_param(Tensor({1}, init)));
  return up;
}

Variable UncertaintyParams::get(Task t) const {
  for (size_t i = 0; i < tasks.size(); ++i)
    if (tasks[i] == t) return sigma[i];
  throw std::invalid_argument(std::string("no sigma for task ") + task_name(t));
}

ParamList UncertaintyParams::params() const {
  ParamList out;
  for (size_t i = 0; i < tasks.size(); ++i)
    out.push_back({std::string("sigma/") + task_name(tasks[i]), sigma[i], false});
  return out;
}

std::map<Task, Variable> supervised_task_losses(const std::map<Task, ExpertOutput>& experts,
                                                const std::map<Task, GateOutput>& gates,
                                                const LabelBatch& labels) {
  std::map<Task, Variable> losses;
  for (const auto& [task, expert] : experts) {
    Variable term;
    switch (task) {
      case Task::kSeg:
        term = dice_loss(expert.prediction, labels.mask);
        break;
      case Task::kBnd:
        term = dice_loss(expert.prediction, labels.boundary);
        break;
      case Task::kSdf:
        term = sdf_loss(expert.prediction, labels.sdf);
        break;
    }
    auto git = gates.find(task);
    if (git != gates.end()) {
      Variable gate_term;
      switch (task) {
        case Task::kSeg:
          gate_term = dice_loss(git->second.fused, labels.mask);
          break;
        case Task::kBnd:
          gate_term = dice_loss(git->second.fused, labels.boundary);
          break;
        case Task::kSdf:
          gate_term = sdf_loss(git->second.fused, labels.sdf);
          break;
      }
      term = add(term, gate_term);
    }
    losses.emplace(task, term);
  }
  return losses;
}

std::map<Task, Tensor> make_pseudo_labels(const std::map<Task, GateOutput>& gates,
                                          const std::vector<Task>& tasks, bool single_gate) {
  auto seg_it = gates.find(Task::kSeg);
  if (seg_it == gates.end())
    throw std::invalid_argument("make_pseudo_labels: seg gate output required");

  std::map<Task, Tensor> pseudo;
  const Tensor seg_mask = argmax_channel(seg_it->second.fused.value());
  pseudo.emplace(Task::kSeg, seg_mask);

  const int64_t B = seg_mask.size(0), H = seg_mask.size(1), W = seg_mask.size(2);
  for (Task t : tasks) {
    if (t == Task::kSeg) continue;
    if (!single_gate) {
      auto it = gates.find(t);
      if (it == gates.end())
        throw std::invalid_argument(std::string("make_pseudo_labels: missing gate for ") +
                                    task_name(t));
      if (t == Task::kSdf) {
        const Tensor& raw = it->second.fused.value();
        Tensor target(raw.shape());
        for (int64_t i = 0; i < raw.numel(); ++i) target[i] = std::tanh(raw[i]);
        pseudo.emplace(t, std::move(target));
      } else {
        pseudo.emplace(t, argmax_channel(it->second.fused.value()));
      }
      continue;
    }
    // Single-gate variant: derive the auxiliary targets from the seg
    // pseudo-mask with the deterministic label transforms.
    if (t == Task::kSdf) {
      Tensor target({B, 1, H, W});
      for (int64_t b = 0; b < B; ++b) {
        Tensor m({H, W});
        std::copy_n(seg_mask.data() + b * H * W, H * W, m.data());
        const Tensor s = compute_sdf(m);
        std::copy_n(s.data(), H * W, target.data() + b * H * W);
      }
      pseudo.emplace(t, std::move(target));
    } else {
      Tensor target({B, H, W});
      for (int64_t b = 0; b < B; ++b) {
        Tensor m({H, W});
        std::copy_n(seg_mask.data() + b * H * W, H * W, m.data());
        const Tensor bd = extract_boundary(m);
        std::copy_n(bd.data(), H * W, target.data() + b * H * W);
      }
      pseudo.emplace(t, std::move(target));
    }
  }
  return pseudo;
}

std::map<Task, Variable> unsupervised_task_losses(const std::map<Task, ExpertOutput>& experts,
                                                  const std::map<Task, Tensor>& pseudo) {
  std::map<Task, Variable> losses;
  for (const auto& [task, expert] : experts) {
    auto it = pseudo.find(task);
    if (it == pseudo.end())
      throw std::invalid_argument(std::string("unsupervised loss: missing pseudo-label for ") +
                                  task_name(task));
    if (task == Task::kSdf)
      losses.emplace(task, sdf_loss(expert.prediction, it->second));
    else
      losses.emplace(task, dice_loss(expert.prediction, it->second));
  }
  return losses;
}

Variable uncertainty_regularizer(const UncertaintyParams& sigma, double gamma) {
  if (gamma <= 0.0) throw std::invalid_argument("gamma must be positive");
  Variable acc;
  for (const auto& s : sigma.sigma) {
    Variable term = exp_v(s);
    acc = acc.defined() ? add(acc, term) : term;
  }
  return mul_scalar(acc, gamma);
}

Variable adaptive_weighting(const std::map<Task, Variable>& task_losses,
                            const UncertaintyParams& sigma, double gamma) {
  if (gamma <= 0.0) throw std::invalid_argument("gamma must be positive");
  Variable acc;
  for (const auto& [task, loss] : task_losses) {
    Variable term = mul(exp_v(neg(sigma.get(task))), loss);
    acc = acc.defined() ? add(acc, term) : term;
  }
  if (!acc.defined()) throw std::invalid_argument("adaptive_weighting: no task losses");
  return add(acc, uncertainty_regularizer(sigma, gamma));
}

Variable linear_weighting(const std::map<Task, Variable>& task_losses) {
  Variable acc;
  for (const auto& [task, loss] : task_losses)
    acc = acc.defined() ? add(acc, loss) : loss;
  if (!acc.defined()) throw std::invalid_argument("linear_weighting: no task losses");
  return acc;
}

double lambda_schedule(int64_t epoch, double lambda_max, int64_t ramp_epochs) {
  if (epoch < 0) throw std::invalid_argument("lambda_schedule: epoch must be >= 0");
  if (ramp_epochs <= 0) return lambda_max;
  const double t = std::min(static_cast<double>(epoch) / static_cast<double>(ramp_epochs), 1.0);
  const double u = 1.0 - t;
  return lambda_max * std::exp(-5.0 * u * u);
}

}  // namespace semimoe
