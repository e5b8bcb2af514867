#include "semimoe/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace semimoe::oracle {

Tensor distance_exhaustive(const Tensor& indicator) {
  const int64_t H = indicator.size(0), W = indicator.size(1);
  std::vector<std::pair<int64_t, int64_t>> targets;
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      if (indicator.at2(y, x) == 1.0) targets.emplace_back(y, x);

  Tensor out({H, W});
  if (targets.empty()) {
    out.fill(std::numeric_limits<double>::infinity());
    return out;
  }
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& [ty, tx] : targets) {
        const double dy = static_cast<double>(y - ty);
        const double dx = static_cast<double>(x - tx);
        best = std::min(best, dy * dy + dx * dx);
      }
      out.at2(y, x) = std::sqrt(best);
    }
  }
  return out;
}

Tensor boundary_by_definition(const Tensor& mask) {
  const int64_t H = mask.size(0), W = mask.size(1);
  Tensor out({H, W});
  int64_t fg = 0;
  for (int64_t i = 0; i < H * W; ++i) fg += mask[i] == 1.0 ? 1 : 0;
  if (fg == 0 || fg == H * W) return out;

  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x) {
      if (mask.at2(y, x) != 1.0) continue;
      const bool edge = y == 0 || y == H - 1 || x == 0 || x == W - 1;
      const bool bg_neighbor =
          (y > 0 && mask.at2(y - 1, x) == 0.0) || (y < H - 1 && mask.at2(y + 1, x) == 0.0) ||
          (x > 0 && mask.at2(y, x - 1) == 0.0) || (x < W - 1 && mask.at2(y, x + 1) == 0.0);
      if (edge || bg_neighbor) out.at2(y, x) = 1.0;
    }
  }
  return out;
}

Tensor sdf_by_definition(const Tensor& mask) {
  const int64_t H = mask.size(0), W = mask.size(1);
  const Tensor boundary = boundary_by_definition(mask);
  bool any = false;
  for (int64_t i = 0; i < H * W; ++i)
    if (boundary[i] == 1.0) any = true;
  if (!any) return Tensor({H, W}, mask[0] == 1.0 ? 1.0 : -1.0);

  const Tensor dist = distance_exhaustive(boundary);
  Tensor sdf({H, W});
  double max_pos = 0.0, max_neg = 0.0;
  for (int64_t i = 0; i < H * W; ++i) {
    const double s = mask[i] == 1.0 ? dist[i] : -dist[i];
    sdf[i] = s;
    max_pos = std::max(max_pos, s);
    max_neg = std::max(max_neg, -s);
  }
  for (int64_t i = 0; i < H * W; ++i) {
    double s = sdf[i];
    s = s > 0.0 ? (max_pos > 0.0 ? s / max_pos : s) : (max_neg > 0.0 ? s / max_neg : s);
    sdf[i] = std::clamp(s, -1.0, 1.0);
  }
  return sdf;
}

}  // namespace semimoe::oracle
