#include "semimoe/label_transforms.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace semimoe {

namespace {

constexpr double kBig = 1e18;  // stand-in for +inf inside the envelope scan

// 1-D squared-distance transform via the lower envelope of parabolas.
// f holds squared distances (kBig where unseeded); d receives the result.
void dt1d(const double* f, double* d, int64_t n, int64_t* v, double* z) {
  int64_t k = 0;
  v[0] = 0;
  z[0] = -kBig;
  z[1] = kBig;
  for (int64_t q = 1; q < n; ++q) {
    double s;
    while (true) {
      const int64_t p = v[k];
      s = ((f[q] + static_cast<double>(q * q)) - (f[p] + static_cast<double>(p * p))) /
          (2.0 * static_cast<double>(q - p));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kBig;
  }
  k = 0;
  for (int64_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double dq = static_cast<double>(q - v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

}  // namespace

void validate_mask(const Tensor& mask) {
  if (mask.dim() != 2) throw std::invalid_argument("mask must be 2-D");
  if (mask.size(0) < 1 || mask.size(1) < 1) throw std::invalid_argument("mask must be non-empty");
  for (int64_t i = 0; i < mask.numel(); ++i)
    if (mask[i] != 0.0 && mask[i] != 1.0)
      throw std::invalid_argument("mask values must be exactly 0 or 1");
}

Tensor distance_to_set(const Tensor& indicator) {
  validate_mask(indicator);
  const int64_t H = indicator.size(0), W = indicator.size(1);

  bool any = false;
  for (int64_t i = 0; i < H * W; ++i)
    if (indicator[i] == 1.0) {
      any = true;
      break;
    }
  Tensor out({H, W});
  if (!any) {
    out.fill(std::numeric_limits<double>::infinity());
    return out;
  }

  std::vector<double> sq(static_cast<size_t>(H * W));
  for (int64_t i = 0; i < H * W; ++i) sq[static_cast<size_t>(i)] = indicator[i] == 1.0 ? 0.0 : kBig;

  const int64_t nmax = std::max(H, W);
  std::vector<double> f(static_cast<size_t>(nmax)), d(static_cast<size_t>(nmax));
  std::vector<int64_t> v(static_cast<size_t>(nmax));
  std::vector<double> z(static_cast<size_t>(nmax + 1));

  // Pass 1: columns.
  for (int64_t x = 0; x < W; ++x) {
    for (int64_t y = 0; y < H; ++y) f[static_cast<size_t>(y)] = sq[static_cast<size_t>(y * W + x)];
    dt1d(f.data(), d.data(), H, v.data(), z.data());
    for (int64_t y = 0; y < H; ++y) sq[static_cast<size_t>(y * W + x)] = d[static_cast<size_t>(y)];
  }
  // Pass 2: rows.
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x) f[static_cast<size_t>(x)] = sq[static_cast<size_t>(y * W + x)];
    dt1d(f.data(), d.data(), W, v.data(), z.data());
    for (int64_t x = 0; x < W; ++x)
      out[y * W + x] = std::sqrt(d[static_cast<size_t>(x)]);
  }
  return out;
}

Tensor distance_transform(const Tensor& mask, DistanceTarget target) {
  validate_mask(mask);
  if (target == DistanceTarget::kForeground) return distance_to_set(mask);
  Tensor inv(mask.shape());
  for (int64_t i = 0; i < mask.numel(); ++i) inv[i] = 1.0 - mask[i];
  return distance_to_set(inv);
}

Tensor extract_boundary(const Tensor& mask) {
  validate_mask(mask);
  const int64_t H = mask.size(0), W = mask.size(1);
  Tensor out({H, W});

  bool any0 = false, any1 = false;
  for (int64_t i = 0; i < H * W; ++i) (mask[i] == 1.0 ? any1 : any0) = true;
  if (!any0 || !any1) return out;  // degenerate: empty boundary

  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x) {
      if (mask.at2(y, x) != 1.0) continue;
      const bool eroded = y > 0 && y < H - 1 && x > 0 && x < W - 1 &&
                          mask.at2(y - 1, x) == 1.0 && mask.at2(y + 1, x) == 1.0 &&
                          mask.at2(y, x - 1) == 1.0 && mask.at2(y, x + 1) == 1.0;
      if (!eroded) out.at2(y, x) = 1.0;
    }
  }
  return out;
}

Tensor compute_sdf(const Tensor& mask) {
  validate_mask(mask);
  const int64_t H = mask.size(0), W = mask.size(1);

  const Tensor boundary = extract_boundary(mask);
  bool has_boundary = false;
  for (int64_t i = 0; i < H * W; ++i)
    if (boundary[i] == 1.0) {
      has_boundary = true;
      break;
    }
  if (!has_boundary) {
    // All-0 or all-1 mask: no boundary exists, emit a constant map.
    return Tensor({H, W}, mask[0] == 1.0 ? 1.0 : -1.0);
  }

  const Tensor dist = distance_to_set(boundary);
  Tensor sdf({H, W});
  double max_pos = 0.0, max_neg = 0.0;
  for (int64_t i = 0; i < H * W; ++i) {
    const double s = mask[i] == 1.0 ? dist[i] : -dist[i];
    sdf[i] = s;
    if (s > max_pos) max_pos = s;
    if (-s > max_neg) max_neg = -s;
  }
  // Each sign is scaled by its own per-image extreme so both stay
  // informative when interior and exterior extents are unbalanced.
  const double pos_scale = max_pos > 0.0 ? 1.0 / max_pos : 1.0;
  const double neg_scale = max_neg > 0.0 ? 1.0 / max_neg : 1.0;
  for (int64_t i = 0; i < H * W; ++i) {
    const double s = sdf[i] > 0.0 ? sdf[i] * pos_scale : sdf[i] * neg_scale;
    sdf[i] = std::clamp(s, -1.0, 1.0);
  }
  return sdf;
}

}  // namespace semimoe
