#pragma once

#include <map>
#include <string>

#include "semimoe/model.hpp"

namespace semimoe {

// Momentum SGD with decoupled-by-flag weight decay:
//   g = grad + wd * p   (wd only where NamedParam.decay)
//   v = momentum * v + g
//   p = p - lr * v
// Velocity buffers are keyed by parameter name and created lazily, so a
// step may be (and during the unsupervised phase is) restricted to a
// subset of the parameters.
class SgdOptimizer {
 public:
  SgdOptimizer() = default;
  SgdOptimizer(double lr, double momentum, double weight_decay)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const ParamList& params);
  static void zero_grad(const ParamList& params);

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }

  // Checkpoint plumbing.
  const std::map<std::string, Tensor>& velocity() const { return velocity_; }
  void set_velocity(std::map<std::string, Tensor> v) { velocity_ = std::move(v); }

 private:
  double lr_ = 0.01;
  double momentum_ = 0.0;
  double weight_decay_ = 0.0;
  std::map<std::string, Tensor> velocity_;
};

}  // namespace semimoe
