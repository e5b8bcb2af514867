#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "semimoe/autodiff.hpp"

namespace semimoe::testing {

// Central-difference gradient check. `f` must rebuild the graph from the
// current parameter values on every call and return a scalar Variable.
// Returns the worst relative error over all entries of all params.
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // "param#/index" of the worst entry
};

inline double rel_err(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-6});
  return std::fabs(a - b) / denom;
}

inline GradCheckResult gradcheck(const std::function<Variable()>& f,
                                 std::vector<Variable> params, double h = 1e-5) {
  for (auto& p : params) p.zero_grad();
  Variable out = f();
  backward(out);

  GradCheckResult res;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const int64_t n = p.numel();
    for (int64_t i = 0; i < n; ++i) {
      const double orig = p.value()[i];
      const double step = h * std::max(1.0, std::fabs(orig));
      p.value_mut()[i] = orig + step;
      const double fp = f().value()[0];
      p.value_mut()[i] = orig - step;
      const double fm = f().value()[0];
      p.value_mut()[i] = orig;
      const double fd = (fp - fm) / (2.0 * step);
      const double ad = p.has_grad() ? p.grad()[i] : 0.0;
      const double e = rel_err(fd, ad);
      if (e > res.max_rel_err) {
        res.max_rel_err = e;
        res.worst = "param" + std::to_string(pi) + "/" + std::to_string(i);
      }
    }
  }
  return res;
}

// Checks a handful of randomly chosen entries instead of every one.
inline GradCheckResult gradcheck_sampled(const std::function<Variable()>& f,
                                         std::vector<Variable> params, Rng& rng,
                                         int64_t per_param, double h = 1e-5) {
  for (auto& p : params) p.zero_grad();
  Variable out = f();
  backward(out);

  GradCheckResult res;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const int64_t n = p.numel();
    for (int64_t k = 0; k < std::min(per_param, n); ++k) {
      const int64_t i = rng.next_index(n);
      const double orig = p.value()[i];
      const double step = h * std::max(1.0, std::fabs(orig));
      p.value_mut()[i] = orig + step;
      const double fp = f().value()[0];
      p.value_mut()[i] = orig - step;
      const double fm = f().value()[0];
      p.value_mut()[i] = orig;
      const double fd = (fp - fm) / (2.0 * step);
      const double ad = p.has_grad() ? p.grad()[i] : 0.0;
      const double e = rel_err(fd, ad);
      if (e > res.max_rel_err) {
        res.max_rel_err = e;
        res.worst = "param" + std::to_string(pi) + "/" + std::to_string(i);
      }
    }
  }
  return res;
}

inline Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace semimoe::testing
