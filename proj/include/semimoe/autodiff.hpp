#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "semimoe/rng.hpp"
#include "semimoe/tensor.hpp"

namespace semimoe {

// Reverse-mode automatic differentiation over Tensor values.
//
// Graphs are built define-by-run: every op allocates a Node holding the
// forward value, links to its parent nodes, and registers a closure that
// scatters the node's gradient into its parents. backward() walks the
// reachable nodes in reverse creation order, which is a valid topological
// order because parents always exist before their children.
//
// Determinism contract: all reductions are sequential loops (or Eigen
// single-threaded GEMM) with a fixed accumulation order, so identical
// inputs give bit-identical values and gradients, independent of how many
// other threads are running their own graphs (node ids are thread-local).

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool grad_alloc = false;
  bool requires_grad = false;
  uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (!grad_alloc) {
      grad = Tensor(value.shape());
      grad_alloc = true;
    }
    return grad;
  }
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

class Variable {
 public:
  Variable() = default;
  explicit Variable(detail::NodePtr node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  // The handle is shared; mutating the pointee through a const handle is
  // allowed (optimizer updates, FD probes).
  Tensor& value_mut() const { return node_->value; }
  const std::vector<int64_t>& shape() const { return node_->value.shape(); }
  int64_t numel() const { return node_->value.numel(); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad_alloc; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad_mut() const { return node_->ensure_grad(); }
  void zero_grad() const {
    if (node_->grad_alloc) node_->grad.fill(0.0);
  }

  const detail::NodePtr& node() const { return node_; }

 private:
  detail::NodePtr node_;
};

// Leaf constructors.
Variable make_param(Tensor value);  // requires_grad = true
Variable constant(Tensor value);    // requires_grad = false

// Leaf copy of v's value, cut off from the graph (stop-gradient).
Variable detach(const Variable& v);

// Propagates d(root)/d(node) into every reachable node that requires
// grad, accumulating into .grad. root must be scalar (numel == 1).
void backward(const Variable& root);

// RAII guard disabling graph recording (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

// ---- elementwise (identical shapes) ----
Variable add(const Variable& a, const Variable& b);
Variable sub(const Variable& a, const Variable& b);
Variable mul(const Variable& a, const Variable& b);
Variable div(const Variable& a, const Variable& b);

// ---- scalar broadcast ----
Variable add_scalar(const Variable& a, double s);
Variable mul_scalar(const Variable& a, double s);
Variable rsub_scalar(double s, const Variable& a);  // s - a

// ---- unary ----
Variable neg(const Variable& a);
Variable exp_v(const Variable& a);
Variable tanh_v(const Variable& a);
Variable relu(const Variable& a);

// ---- reductions ----
Variable sum_all(const Variable& a);         // -> {1}
Variable mean_all(const Variable& a);        // -> {1}
Variable sum_per_sample(const Variable& a);  // {B, ...} -> {B}

// ---- structure ----
Variable select_channel(const Variable& x, int64_t c);    // B×C×H×W -> B×H×W
Variable concat_ch(const Variable& a, const Variable& b); // along dim 1
Variable stack_group(const std::vector<Variable>& xs);    // M of B×C×H×W -> B×M×C×H×W

// ---- neural network ----
// x: B×Cin×H×W, w: Cout×Cin×k×k, bias: {Cout}; stride 1, zero padding.
Variable conv2d(const Variable& x, const Variable& w, const Variable& bias, int64_t pad);
// x: B×F, w: O×F, bias: {O}.
Variable linear(const Variable& x, const Variable& w, const Variable& bias);
Variable group_norm(const Variable& x, const Variable& gamma, const Variable& beta,
                    int64_t groups, double eps = 1e-5);
Variable maxpool2(const Variable& x);   // 2×2, stride 2; H, W must be even
Variable upsample2(const Variable& x);  // nearest-neighbor 2×
// rng == nullptr or rate == 0 -> identity (inference path).
Variable dropout(const Variable& x, double rate, Rng* rng);
Variable softmax_dim1(const Variable& x);     // over channels of B×K×...
Variable softmax_lastdim(const Variable& x);  // over last axis of B×M
// B×M×C×H×W -> B×(M·C): global average over H×W, expert-major flatten.
Variable gap_flatten(const Variable& xg);
// Convex fusion: out[b] = sum_i w[b,i] * xg[b,i]; xg: B×M×C×H×W, w: B×M.
Variable weighted_expert_sum(const Variable& xg, const Variable& w);

// Non-differentiable helper: per-pixel argmax over channel axis.
// x: B×K×H×W -> B×H×W holding class indices (as doubles).
Tensor argmax_channel(const Tensor& x);

}  // namespace semimoe
