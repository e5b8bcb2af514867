#include "semimoe/optimizer.hpp"

namespace semimoe {

void SgdOptimizer::step(const ParamList& params) {
  for (const auto& p : params) {
    auto [it, inserted] = velocity_.try_emplace(p.name, Tensor(p.var.shape()));
    Tensor& v = it->second;
    if (!inserted && !v.same_shape(p.var.value()))
      throw std::invalid_argument("optimizer: shape change for parameter " + p.name);
    const int64_t n = p.var.numel();
    const bool has_grad = p.var.has_grad();
    const double* g = has_grad ? p.var.grad().data() : nullptr;
    double* vd = v.data();
    double* pd = p.var.value_mut().data();
    for (int64_t i = 0; i < n; ++i) {
      double gi = g ? g[i] : 0.0;
      if (p.decay) gi += weight_decay_ * pd[i];
      vd[i] = momentum_ * vd[i] + gi;
      pd[i] -= lr_ * vd[i];
    }
  }
}

void SgdOptimizer::zero_grad(const ParamList& params) {
  for (const auto& p : params) p.var.zero_grad();
}

}  // namespace semimoe
