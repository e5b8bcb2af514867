#include "semimoe/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace semimoe {

namespace {

using detail::Node;
using detail::NodePtr;

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

thread_local uint64_t t_next_id = 1;
thread_local bool t_grad_enabled = true;

NodePtr new_node(Tensor value, std::vector<NodePtr> parents) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = t_next_id++;
  if (t_grad_enabled) {
    for (const auto& p : parents)
      if (p && p->requires_grad) {
        n->requires_grad = true;
        break;
      }
    if (n->requires_grad) n->parents = std::move(parents);
  }
  return n;
}

void check_same_shape(const Variable& a, const Variable& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.value().shape_str() +
                                " vs " + b.value().shape_str());
}

// Elementwise binary op skeleton.
template <typename Fwd, typename Bwd>
Variable ew_binary(const Variable& a, const Variable& b, const char* name, Fwd fwd, Bwd bwd) {
  check_same_shape(a, b, name);
  const int64_t n = a.numel();
  Tensor out(a.shape());
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
  auto node = new_node(std::move(out), {a.node(), b.node()});
  if (node->requires_grad) {
    auto na = a.node();
    auto nb = b.node();
    node->backward_fn = [na, nb, bwd](Node& self) {
      const int64_t n = self.value.numel();
      const double* g = self.grad.data();
      const double* pa = na->value.data();
      const double* pb = nb->value.data();
      if (na->requires_grad) {
        double* da = na->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) da[i] += bwd(pa[i], pb[i], g[i], true);
      }
      if (nb->requires_grad) {
        double* db = nb->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) db[i] += bwd(pa[i], pb[i], g[i], false);
      }
    };
  }
  return Variable(node);
}

template <typename Fwd, typename Bwd>
Variable ew_unary(const Variable& a, Fwd fwd, Bwd bwd) {
  const int64_t n = a.numel();
  Tensor out(a.shape());
  const double* pa = a.value().data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
  auto node = new_node(std::move(out), {a.node()});
  if (node->requires_grad) {
    auto na = a.node();
    node->backward_fn = [na, bwd](Node& self) {
      const int64_t n = self.value.numel();
      const double* g = self.grad.data();
      const double* px = na->value.data();
      const double* py = self.value.data();
      double* da = na->ensure_grad().data();
      for (int64_t i = 0; i < n; ++i) da[i] += bwd(px[i], py[i]) * g[i];
    };
  }
  return Variable(node);
}

}  // namespace

Variable make_param(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = t_next_id++;
  n->requires_grad = true;
  return Variable(n);
}

Variable constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = t_next_id++;
  return Variable(n);
}

Variable detach(const Variable& v) { return constant(v.value()); }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }
bool grad_enabled() { return t_grad_enabled; }

void backward(const Variable& root) {
  if (root.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
  if (!root.requires_grad()) throw std::invalid_argument("backward: root does not require grad");

  // Collect reachable grad-requiring nodes.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.node().get()};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents)
      if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });

  root.node()->ensure_grad().fill(1.0);
  for (Node* n : order) {
    if (n->backward_fn && n->grad_alloc) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// elementwise

Variable add(const Variable& a, const Variable& b) {
  return ew_binary(a, b, "add", [](double x, double y) { return x + y; },
                   [](double, double, double g, bool) { return g; });
}

Variable sub(const Variable& a, const Variable& b) {
  return ew_binary(a, b, "sub", [](double x, double y) { return x - y; },
                   [](double, double, double g, bool first) { return first ? g : -g; });
}

Variable mul(const Variable& a, const Variable& b) {
  return ew_binary(a, b, "mul", [](double x, double y) { return x * y; },
                   [](double x, double y, double g, bool first) { return first ? g * y : g * x; });
}

Variable div(const Variable& a, const Variable& b) {
  return ew_binary(a, b, "div", [](double x, double y) { return x / y; },
                   [](double x, double y, double g, bool first) {
                     return first ? g / y : -g * x / (y * y);
                   });
}

Variable add_scalar(const Variable& a, double s) {
  return ew_unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Variable mul_scalar(const Variable& a, double s) {
  return ew_unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Variable rsub_scalar(double s, const Variable& a) {
  return ew_unary(a, [s](double x) { return s - x; }, [](double, double) { return -1.0; });
}

Variable neg(const Variable& a) { return mul_scalar(a, -1.0); }

Variable exp_v(const Variable& a) {
  return ew_unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Variable tanh_v(const Variable& a) {
  return ew_unary(a, [](double x) { return std::tanh(x); },
                  [](double, double y) { return 1.0 - y * y; });
}

Variable relu(const Variable& a) {
  return ew_unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// reductions

Variable sum_all(const Variable& a) {
  Tensor out({1}, a.value().sum());
  auto node = new_node(std::move(out), {a.node()});
  if (node->requires_grad) {
    auto na = a.node();
    node->backward_fn = [na](Node& self) {
      const double g = self.grad[0];
      double* da = na->ensure_grad().data();
      const int64_t n = na->value.numel();
      for (int64_t i = 0; i < n; ++i) da[i] += g;
    };
  }
  return Variable(node);
}

Variable mean_all(const Variable& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  Tensor out({1}, a.value().sum() * inv);
  auto node = new_node(std::move(out), {a.node()});
  if (node->requires_grad) {
    auto na = a.node();
    node->backward_fn = [na, inv](Node& self) {
      const double g = self.grad[0] * inv;
      double* da = na->ensure_grad().data();
      const int64_t n = na->value.numel();
      for (int64_t i = 0; i < n; ++i) da[i] += g;
    };
  }
  return Variable(node);
}

Variable sum_per_sample(const Variable& a) {
  const int64_t B = a.shape()[0];
  const int64_t S = a.numel() / B;
  Tensor out({B});
  const double* pa = a.value().data();
  for (int64_t b = 0; b < B; ++b) {
    double acc = 0.0;
    for (int64_t i = 0; i < S; ++i) acc += pa[b * S + i];
    out[b] = acc;
  }
  auto node = new_node(std::move(out), {a.node()});
  if (node->requires_grad) {
    auto na = a.node();
    node->backward_fn = [na, B, S](Node& self) {
      const double* g = self.grad.data();
      double* da = na->ensure_grad().data();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < S; ++i) da[b * S + i] += g[b];
    };
  }
  return Variable(node);
}

// ---------------------------------------------------------------------------
// structure

Variable select_channel(const Variable& x, int64_t c) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("select_channel: expected 4-D input");
  const int64_t B = s[0], C = s[1], HW = s[2] * s[3];
  if (c < 0 || c >= C) throw std::invalid_argument("select_channel: channel out of range");
  Tensor out({B, s[2], s[3]});
  const double* px = x.value().data();
  double* po = out.data();
  for (int64_t b = 0; b < B; ++b)
    std::copy_n(px + (b * C + c) * HW, HW, po + b * HW);
  auto node = new_node(std::move(out), {x.node()});
  if (node->requires_grad) {
    auto nx = x.node();
    node->backward_fn = [nx, B, C, HW, c](Node& self) {
      const double* g = self.grad.data();
      double* dx = nx->ensure_grad().data();
      for (int64_t b = 0; b < B; ++b) {
        double* d = dx + (b * C + c) * HW;
        const double* gg = g + b * HW;
        for (int64_t i = 0; i < HW; ++i) d[i] += gg[i];
      }
    };
  }
  return Variable(node);
}

Variable concat_ch(const Variable& a, const Variable& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
    throw std::invalid_argument("concat_ch: incompatible shapes");
  const int64_t B = sa[0], Ca = sa[1], Cb = sb[1], HW = sa[2] * sa[3];
  Tensor out({B, Ca + Cb, sa[2], sa[3]});
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for (int64_t bi = 0; bi < B; ++bi) {
    std::copy_n(pa + bi * Ca * HW, Ca * HW, po + bi * (Ca + Cb) * HW);
    std::copy_n(pb + bi * Cb * HW, Cb * HW, po + bi * (Ca + Cb) * HW + Ca * HW);
  }
  auto node = new_node(std::move(out), {a.node(), b.node()});
  if (node->requires_grad) {
    auto na = a.node();
    auto nb = b.node();
    node->backward_fn = [na, nb, B, Ca, Cb, HW](Node& self) {
      const double* g = self.grad.data();
      if (na->requires_grad) {
        double* da = na->ensure_grad().data();
        for (int64_t bi = 0; bi < B; ++bi) {
          const double* gg = g + bi * (Ca + Cb) * HW;
          double* d = da + bi * Ca * HW;
          for (int64_t i = 0; i < Ca * HW; ++i) d[i] += gg[i];
        }
      }
      if (nb->requires_grad) {
        double* db = nb->ensure_grad().data();
        for (int64_t bi = 0; bi < B; ++bi) {
          const double* gg = g + bi * (Ca + Cb) * HW + Ca * HW;
          double* d = db + bi * Cb * HW;
          for (int64_t i = 0; i < Cb * HW; ++i) d[i] += gg[i];
        }
      }
    };
  }
  return Variable(node);
}

Variable stack_group(const std::vector<Variable>& xs) {
  if (xs.empty()) throw std::invalid_argument("stack_group: empty input");
  const auto& s0 = xs[0].shape();
  if (s0.size() != 4) throw std::invalid_argument("stack_group: expected 4-D inputs");
  for (const auto& x : xs)
    if (x.shape() != s0) throw std::invalid_argument("stack_group: shape mismatch across inputs");
  const int64_t M = static_cast<int64_t>(xs.size());
  const int64_t B = s0[0], CHW = s0[1] * s0[2] * s0[3];
  Tensor out({B, M, s0[1], s0[2], s0[3]});
  double* po = out.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t m = 0; m < M; ++m)
      std::copy_n(xs[m].value().data() + b * CHW, CHW, po + (b * M + m) * CHW);
  std::vector<NodePtr> parents;
  parents.reserve(xs.size());
  for (const auto& x : xs) parents.push_back(x.node());
  auto node = new_node(std::move(out), parents);
  if (node->requires_grad) {
    node->backward_fn = [parents, M, B, CHW](Node& self) {
      const double* g = self.grad.data();
      for (int64_t m = 0; m < M; ++m) {
        if (!parents[m]->requires_grad) continue;
        double* d = parents[m]->ensure_grad().data();
        for (int64_t b = 0; b < B; ++b) {
          const double* gg = g + (b * M + m) * CHW;
          double* dd = d + b * CHW;
          for (int64_t i = 0; i < CHW; ++i) dd[i] += gg[i];
        }
      }
    };
  }
  return Variable(node);
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

// Gathers k×k patches of one sample into a (Cin·k·k) × (Ho·Wo) matrix.
void im2col(const double* x, int64_t Cin, int64_t H, int64_t W, int64_t k, int64_t pad,
            int64_t Ho, int64_t Wo, double* col) {
  for (int64_t ci = 0; ci < Cin; ++ci) {
    const double* xc = x + ci * H * W;
    for (int64_t ky = 0; ky < k; ++ky) {
      for (int64_t kx = 0; kx < k; ++kx) {
        double* row = col + ((ci * k + ky) * k + kx) * Ho * Wo;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          const int64_t iy = oy - pad + ky;
          double* r = row + oy * Wo;
          if (iy < 0 || iy >= H) {
            std::fill_n(r, Wo, 0.0);
            continue;
          }
          const double* xr = xc + iy * W;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const int64_t ix = ox - pad + kx;
            r[ox] = (ix >= 0 && ix < W) ? xr[ix] : 0.0;
          }
        }
      }
    }
  }
}

}  // namespace

Variable conv2d(const Variable& x, const Variable& w, const Variable& bias, int64_t pad) {
  const auto& sx = x.shape();
  const auto& sw = w.shape();
  if (sx.size() != 4 || sw.size() != 4) throw std::invalid_argument("conv2d: expected 4-D tensors");
  const int64_t B = sx[0], Cin = sx[1], H = sx[2], W = sx[3];
  const int64_t Cout = sw[0], k = sw[2];
  if (sw[1] != Cin || sw[3] != k) throw std::invalid_argument("conv2d: weight shape mismatch");
  if (bias.numel() != Cout) throw std::invalid_argument("conv2d: bias shape mismatch");
  const int64_t Ho = H + 2 * pad - k + 1;
  const int64_t Wo = W + 2 * pad - k + 1;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: output would be empty");
  const int64_t K = Cin * k * k;
  const int64_t P = Ho * Wo;
  const bool pointwise = (k == 1 && pad == 0);

  Tensor out({B, Cout, Ho, Wo});
  CMapRM wm(w.value().data(), Cout, K);
  // Patch matrices are kept for the backward pass; for 1×1 kernels the
  // input itself is the patch matrix.
  auto cols = std::make_shared<std::vector<double>>();
  if (!pointwise) cols->resize(static_cast<size_t>(B) * K * P);

  for (int64_t b = 0; b < B; ++b) {
    const double* colb;
    if (pointwise) {
      colb = x.value().data() + b * Cin * H * W;
    } else {
      double* cb = cols->data() + b * K * P;
      im2col(x.value().data() + b * Cin * H * W, Cin, H, W, k, pad, Ho, Wo, cb);
      colb = cb;
    }
    CMapRM cm(colb, K, P);
    MapRM om(out.data() + b * Cout * P, Cout, P);
    om.noalias() = wm * cm;
    for (int64_t co = 0; co < Cout; ++co) om.row(co).array() += bias.value()[co];
  }

  auto node = new_node(std::move(out), {x.node(), w.node(), bias.node()});
  if (node->requires_grad) {
    auto nx = x.node();
    auto nw = w.node();
    auto nb = bias.node();
    if (pointwise) cols.reset();
    node->backward_fn = [nx, nw, nb, cols, B, Cin, H, W, Cout, k, pad, Ho, Wo, K, P,
                         pointwise](Node& self) {
      const double* g = self.grad.data();
      CMapRM wm(nw->value.data(), Cout, K);
      if (nb->requires_grad) {
        double* db = nb->ensure_grad().data();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t co = 0; co < Cout; ++co) {
            double acc = 0.0;
            const double* gg = g + (b * Cout + co) * P;
            for (int64_t i = 0; i < P; ++i) acc += gg[i];
            db[co] += acc;
          }
      }
      if (nw->requires_grad) {
        MapRM dwm(nw->ensure_grad().data(), Cout, K);
        for (int64_t b = 0; b < B; ++b) {
          const double* colb =
              pointwise ? nx->value.data() + b * Cin * H * W : cols->data() + b * K * P;
          CMapRM cm(colb, K, P);
          CMapRM gm(g + b * Cout * P, Cout, P);
          dwm.noalias() += gm * cm.transpose();
        }
      }
      if (nx->requires_grad) {
        double* dx = nx->ensure_grad().data();
        if (pointwise) {
          for (int64_t b = 0; b < B; ++b) {
            CMapRM gm(g + b * Cout * P, Cout, P);
            MapRM dxm(dx + b * Cin * P, Cin, P);
            dxm.noalias() += wm.transpose() * gm;
          }
        } else {
          // dX is the full correlation of dY with the spatially flipped,
          // channel-transposed kernel; expressing it as im2col + GEMM
          // keeps the whole backward on the fast path.
          std::vector<double> wflip(static_cast<size_t>(Cin) * Cout * k * k);
          const double* wsrc = nw->value.data();
          for (int64_t co = 0; co < Cout; ++co)
            for (int64_t ci = 0; ci < Cin; ++ci)
              for (int64_t ky = 0; ky < k; ++ky)
                for (int64_t kx = 0; kx < k; ++kx)
                  wflip[((ci * Cout + co) * k + (k - 1 - ky)) * k + (k - 1 - kx)] =
                      wsrc[((co * Cin + ci) * k + ky) * k + kx];
          const int64_t K2 = Cout * k * k;
          const int64_t pad2 = k - 1 - pad;
          std::vector<double> gcol(static_cast<size_t>(K2) * H * W);
          CMapRM wfm(wflip.data(), Cin, K2);
          for (int64_t b = 0; b < B; ++b) {
            im2col(g + b * Cout * P, Cout, Ho, Wo, k, pad2, H, W, gcol.data());
            CMapRM gcm(gcol.data(), K2, H * W);
            MapRM dxm(dx + b * Cin * H * W, Cin, H * W);
            dxm.noalias() += wfm * gcm;
          }
        }
      }
    };
  }
  return Variable(node);
}

// ---------------------------------------------------------------------------
// linear

Variable linear(const Variable& x, const Variable& w, const Variable& bias) {
  const auto& sx = x.shape();
  const auto& sw = w.shape();
  if (sx.size() != 2 || sw.size() != 2 || sx[1] != sw[1])
    throw std::invalid_argument("linear: shape mismatch");
  const int64_t B = sx[0], F = sx[1], O = sw[0];
  if (bias.numel() != O) throw std::invalid_argument("linear: bias shape mismatch");
  Tensor out({B, O});
  CMapRM xm(x.value().data(), B, F);
  CMapRM wm(w.value().data(), O, F);
  MapRM om(out.data(), B, O);
  om.noalias() = xm * wm.transpose();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t o = 0; o < O; ++o) om(b, o) += bias.value()[o];
  auto node = new_node(std::move(out), {x.node(), w.node(), bias.node()});
  if (node->requires_grad) {
    auto nx = x.node();
    auto nw = w.node();
    auto nb = bias.node();
    node->backward_fn = [nx, nw, nb, B, F, O](Node& self) {
      CMapRM gm(self.grad.data(), B, O);
      if (nx->requires_grad) {
        CMapRM wm(nw->value.data(), O, F);
        MapRM dxm(nx->ensure_grad().data(), B, F);
        dxm.noalias() += gm * wm;
      }
      if (nw->requires_grad) {
        CMapRM xm(nx->value.data(), B, F);
        MapRM dwm(nw->ensure_grad().data(), O, F);
        dwm.noalias() += gm.transpose() * xm;
      }
      if (nb->requires_grad) {
        double* db = nb->ensure_grad().data();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t o = 0; o < O; ++o) db[o] += gm(b, o);
      }
    };
  }
  return Variable(node);
}

// ---------------------------------------------------------------------------
// group norm

Variable group_norm(const Variable& x, const Variable& gamma, const Variable& beta,
                    int64_t groups, double eps) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("group_norm: expected 4-D input");
  const int64_t B = s[0], C = s[1], HW = s[2] * s[3];
  if (C % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
  if (gamma.numel() != C || beta.numel() != C)
    throw std::invalid_argument("group_norm: affine shape mismatch");
  const int64_t Cg = C / groups;
  const int64_t n = Cg * HW;

  Tensor out(s);
  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * groups * 2);
  const double* px = x.value().data();
  double* po = out.data();
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t g = 0; g < groups; ++g) {
      const double* xg = px + (b * C + g * Cg) * HW;
      double mean = 0.0;
      for (int64_t i = 0; i < n; ++i) mean += xg[i];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double d = xg[i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(n);
      const double invstd = 1.0 / std::sqrt(var + eps);
      (*stats)[(b * groups + g) * 2] = mean;
      (*stats)[(b * groups + g) * 2 + 1] = invstd;
      for (int64_t c = 0; c < Cg; ++c) {
        const int64_t ch = g * Cg + c;
        const double ga = gamma.value()[ch];
        const double be = beta.value()[ch];
        const double* xr = px + (b * C + ch) * HW;
        double* orow = po + (b * C + ch) * HW;
        for (int64_t i = 0; i < HW; ++i) orow[i] = ga * (xr[i] - mean) * invstd + be;
      }
    }
  }

  auto node = new_node(std::move(out), {x.node(), gamma.node(), beta.node()});
  if (node->requires_grad) {
    auto nx = x.node();
    auto ng = gamma.node();
    auto nb = beta.node();
    node->backward_fn = [nx, ng, nb, stats, B, C, HW, groups, Cg, n](Node& self) {
      const double* g = self.grad.data();
      const double* px = nx->value.data();
      const double* pgamma = ng->value.data();
      double* dgamma = ng->requires_grad ? ng->ensure_grad().data() : nullptr;
      double* dbeta = nb->requires_grad ? nb->ensure_grad().data() : nullptr;
      double* dx = nx->requires_grad ? nx->ensure_grad().data() : nullptr;
      for (int64_t b = 0; b < B; ++b) {
        for (int64_t gi = 0; gi < groups; ++gi) {
          const double mean = (*stats)[(b * groups + gi) * 2];
          const double invstd = (*stats)[(b * groups + gi) * 2 + 1];
          // Group-wide sums of dxhat and dxhat*xhat.
          double s1 = 0.0, s2 = 0.0;
          for (int64_t c = 0; c < Cg; ++c) {
            const int64_t ch = gi * Cg + c;
            const double ga = pgamma[ch];
            const double* gr = g + (b * C + ch) * HW;
            const double* xr = px + (b * C + ch) * HW;
            for (int64_t i = 0; i < HW; ++i) {
              const double xh = (xr[i] - mean) * invstd;
              const double dxh = gr[i] * ga;
              s1 += dxh;
              s2 += dxh * xh;
            }
          }
          for (int64_t c = 0; c < Cg; ++c) {
            const int64_t ch = gi * Cg + c;
            const double ga = pgamma[ch];
            const double* gr = g + (b * C + ch) * HW;
            const double* xr = px + (b * C + ch) * HW;
            double acc_dg = 0.0, acc_db = 0.0;
            double* dxr = dx ? dx + (b * C + ch) * HW : nullptr;
            for (int64_t i = 0; i < HW; ++i) {
              const double xh = (xr[i] - mean) * invstd;
              acc_dg += gr[i] * xh;
              acc_db += gr[i];
              if (dxr) {
                const double dxh = gr[i] * ga;
                dxr[i] += invstd * (dxh - (s1 + xh * s2) / static_cast<double>(n));
              }
            }
            if (dgamma) dgamma[ch] += acc_dg;
            if (dbeta) dbeta[ch] += acc_db;
          }
        }
      }
    };
  }
  return Variable(node);
}

// ---------------------------------------------------------------------------
// pooling / resampling

Variable maxpool2(const Variable& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("maxpool2: expected 4-D input");
  const int64_t B = s[0], C = s[1], H = s[2], W = s[3];
  if (H % 2 != 0 || W % 2 != 0) throw std::invalid_argument("maxpool2: H and W must be even");
  const int64_t Ho = H / 2, Wo = W / 2;
  Tensor out({B, C, Ho, Wo});
  auto arg = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(out.numel()));
  const double* px = x.value().data();
  double* po = out.data();
  int64_t oi = 0;
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double* plane = px + bc * H * W;
    for (int64_t oy = 0; oy < Ho; ++oy) {
      for (int64_t ox = 0; ox < Wo; ++ox, ++oi) {
        const int64_t base = (2 * oy) * W + 2 * ox;
        double best = plane[base];
        uint8_t bi = 0;
        const double cands[3] = {plane[base + 1], plane[base + W], plane[base + W + 1]};
        for (uint8_t j = 0; j < 3; ++j)
          if (cands[j] > best) {
            best = cands[j];
            bi = static_cast<uint8_t>(j + 1);
          }
        po[oi] = best;
        (*arg)[static_cast<size_t>(oi)] = bi;
      }
    }
  }
  auto node = new_node(std::move(out), {x.node()});
  if (node->requires_grad) {
    auto nx = x.node();
    node->backward_fn = [nx, arg, B, C, H, W, Ho, Wo](Node& self) {
      const double* g = self.grad.data();
      double* dx = nx->ensure_grad().data();
      int64_t oi = 0;
      for (int64_t bc = 0; bc < B * C; ++bc) {
        double* plane = dx + bc * H * W;
        for (int64_t oy = 0; oy < Ho; ++oy)
          for (int64_t ox = 0; ox < Wo; ++ox, ++oi) {
            const uint8_t a = (*arg)[static_cast<size_t>(oi)];
            const int64_t off = (2 * oy + (a >> 1)) * W + 2 * ox + (a & 1);
            plane[off] += g[oi];
          }
      }
    };
  }
  return Variable(node);
}

Variable upsample2(const Variable& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("upsample2: expected 4-D input");
  const int64_t B = s[0], C = s[1], H = s[2], W = s[3];
  Tensor out({B, C, 2 * H, 2 * W});
  const double* px = x.value().data();
  double* po = out.data();
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double* ip = px + bc * H * W;
    double* op = po + bc * 4 * H * W;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x2 = 0; x2 < W; ++x2) {
        const double v = ip[y * W + x2];
        double* o0 = op + (2 * y) * 2 * W + 2 * x2;
        o0[0] = v;
        o0[1] = v;
        o0[2 * W] = v;
        o0[2 * W + 1] = v;
      }
  }
  auto node = new_node(std::move(out), {x.node()});
  if (node->requires_grad) {
    auto nx = x.node();
    node->backward_fn = [nx, B, C, H, W](Node& self) {
      const double* g = self.grad.data();
      double* dx = nx->ensure_grad().data();
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const double* gp = g + bc * 4 * H * W;
        double* dp = dx + bc * H * W;
        for (int64_t y = 0; y < H; ++y)
          for (int64_t x2 = 0; x2 < W; ++x2) {
            const double* g0 = gp + (2 * y) * 2 * W + 2 * x2;
            dp[y * W + x2] += g0[0] + g0[1] + g0[2 * W] + g0[2 * W + 1];
          }
      }
    };
  }
  return Variable(node);
}

Variable dropout(const Variable& x, double rate, Rng* rng) {
  if (rng == nullptr || rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  const int64_t n = x.numel();
  const double keep = 1.0 - rate;
  auto mask = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  Tensor out(x.shape());
  const double* px = x.value().data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i) {
    const double m = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
    (*mask)[static_cast<size_t>(i)] = m;
    po[i] = px[i] * m;
  }
  auto node = new_node(std::move(out), {x.node()});
  if (node->requires_grad) {
    auto nx = x.node();
    node->backward_fn = [nx, mask](Node& self) {
      const int64_t n = self.value.numel();
      const double* g = self.grad.data();
      double* dx = nx->ensure_grad().data();
      for (int64_t i = 0; i < n; ++i) dx[i] += g[i] * (*mask)[static_cast<size_t>(i)];
    };
  }
  return Variable(node);
}

// ---------------------------------------------------------------------------
// softmax

namespace {

// Softmax over axis 1 of a tensor viewed as B×K×S.
Variable softmax_impl(const Variable& x, int64_t B, int64_t K, int64_t S) {
  Tensor out(x.shape());
  const double* px = x.value().data();
  double* po = out.data();
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t s = 0; s < S; ++s) {
      const int64_t base = b * K * S + s;
      double mx = px[base];
      for (int64_t c = 1; c < K; ++c) mx = std::max(mx, px[base + c * S]);
      double Z = 0.0;
      for (int64_t c = 0; c < K; ++c) {
        const double e = std::exp(px[base + c * S] - mx);
        po[base + c * S] = e;
        Z += e;
      }
      const double inv = 1.0 / Z;
      for (int64_t c = 0; c < K; ++c) po[base + c * S] *= inv;
    }
  }
  auto node = new_node(std::move(out), {x.node()});
  if (node->requires_grad) {
    auto nx = x.node();
    node->backward_fn = [nx, B, K, S](Node& self) {
      const double* g = self.grad.data();
      const double* p = self.value.data();
      double* dx = nx->ensure_grad().data();
      for (int64_t b = 0; b < B; ++b) {
        for (int64_t s = 0; s < S; ++s) {
          const int64_t base = b * K * S + s;
          double dot = 0.0;
          for (int64_t c = 0; c < K; ++c) dot += p[base + c * S] * g[base + c * S];
          for (int64_t c = 0; c < K; ++c)
            dx[base + c * S] += p[base + c * S] * (g[base + c * S] - dot);
        }
      }
    };
  }
  return Variable(node);
}

}  // namespace

Variable softmax_dim1(const Variable& x) {
  const auto& s = x.shape();
  if (s.size() < 2) throw std::invalid_argument("softmax_dim1: expected rank >= 2");
  int64_t S = 1;
  for (size_t i = 2; i < s.size(); ++i) S *= s[i];
  return softmax_impl(x, s[0], s[1], S);
}

Variable softmax_lastdim(const Variable& x) {
  const auto& s = x.shape();
  if (s.size() != 2) throw std::invalid_argument("softmax_lastdim: expected 2-D input");
  return softmax_impl(x, s[0], s[1], 1);
}

// ---------------------------------------------------------------------------
// gating helpers

Variable gap_flatten(const Variable& xg) {
  const auto& s = xg.shape();
  if (s.size() != 5) throw std::invalid_argument("gap_flatten: expected 5-D input");
  const int64_t B = s[0], M = s[1], C = s[2], HW = s[3] * s[4];
  const double inv = 1.0 / static_cast<double>(HW);
  Tensor out({B, M * C});
  const double* px = xg.value().data();
  double* po = out.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t mc = 0; mc < M * C; ++mc) {
      const double* p = px + (b * M * C + mc) * HW;
      double acc = 0.0;
      for (int64_t i = 0; i < HW; ++i) acc += p[i];
      po[b * M * C + mc] = acc * inv;
    }
  auto node = new_node(std::move(out), {xg.node()});
  if (node->requires_grad) {
    auto nx = xg.node();
    node->backward_fn = [nx, B, M, C, HW, inv](Node& self) {
      const double* g = self.grad.data();
      double* dx = nx->ensure_grad().data();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t mc = 0; mc < M * C; ++mc) {
          const double gv = g[b * M * C + mc] * inv;
          double* d = dx + (b * M * C + mc) * HW;
          for (int64_t i = 0; i < HW; ++i) d[i] += gv;
        }
    };
  }
  return Variable(node);
}

Variable weighted_expert_sum(const Variable& xg, const Variable& w) {
  const auto& s = xg.shape();
  const auto& sw = w.shape();
  if (s.size() != 5 || sw.size() != 2 || sw[0] != s[0] || sw[1] != s[1])
    throw std::invalid_argument("weighted_expert_sum: shape mismatch");
  const int64_t B = s[0], M = s[1], CHW = s[2] * s[3] * s[4];
  Tensor out({B, s[2], s[3], s[4]});
  const double* px = xg.value().data();
  const double* pw = w.value().data();
  double* po = out.data();
  for (int64_t b = 0; b < B; ++b) {
    double* ob = po + b * CHW;
    std::fill_n(ob, CHW, 0.0);
    for (int64_t m = 0; m < M; ++m) {
      const double wv = pw[b * M + m];
      const double* xb = px + (b * M + m) * CHW;
      for (int64_t i = 0; i < CHW; ++i) ob[i] += wv * xb[i];
    }
  }
  auto node = new_node(std::move(out), {xg.node(), w.node()});
  if (node->requires_grad) {
    auto nx = xg.node();
    auto nw = w.node();
    node->backward_fn = [nx, nw, B, M, CHW](Node& self) {
      const double* g = self.grad.data();
      const double* px = nx->value.data();
      const double* pw = nw->value.data();
      if (nx->requires_grad) {
        double* dx = nx->ensure_grad().data();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t m = 0; m < M; ++m) {
            const double wv = pw[b * M + m];
            const double* gb = g + b * CHW;
            double* d = dx + (b * M + m) * CHW;
            for (int64_t i = 0; i < CHW; ++i) d[i] += wv * gb[i];
          }
      }
      if (nw->requires_grad) {
        double* dw = nw->ensure_grad().data();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t m = 0; m < M; ++m) {
            const double* gb = g + b * CHW;
            const double* xb = px + (b * M + m) * CHW;
            double acc = 0.0;
            for (int64_t i = 0; i < CHW; ++i) acc += gb[i] * xb[i];
            dw[b * M + m] += acc;
          }
      }
    };
  }
  return Variable(node);
}

Tensor argmax_channel(const Tensor& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("argmax_channel: expected 4-D input");
  const int64_t B = s[0], K = s[1], HW = s[2] * s[3];
  Tensor out({B, s[2], s[3]});
  const double* px = x.data();
  double* po = out.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < HW; ++i) {
      int64_t best = 0;
      double bv = px[b * K * HW + i];
      for (int64_t c = 1; c < K; ++c) {
        const double v = px[(b * K + c) * HW + i];
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      po[b * HW + i] = static_cast<double>(best);
    }
  return out;
}

}  // namespace semimoe
