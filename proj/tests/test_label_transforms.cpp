#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "semimoe/label_transforms.hpp"
#include "semimoe/oracle.hpp"
#include "semimoe/rng.hpp"

using namespace semimoe;

namespace {

Tensor random_mask(int64_t H, int64_t W, Rng& rng, double p_fg = 0.4) {
  Tensor m({H, W});
  for (int64_t i = 0; i < H * W; ++i) m[i] = rng.bernoulli(p_fg) ? 1.0 : 0.0;
  return m;
}

// Blobby masks exercise larger distance fields than iid noise.
Tensor blob_mask(int64_t H, int64_t W, Rng& rng) {
  Tensor m({H, W});
  const int64_t nblobs = 1 + rng.next_index(3);
  for (int64_t b = 0; b < nblobs; ++b) {
    const double cy = rng.uniform(0, static_cast<double>(H));
    const double cx = rng.uniform(0, static_cast<double>(W));
    const double r = rng.uniform(2.0, static_cast<double>(std::min(H, W)) / 2.5);
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        const double dy = y - cy, dx = x - cx;
        if (dy * dy + dx * dx <= r * r) m.at2(y, x) = 1.0;
      }
  }
  return m;
}

}  // namespace

TEST_CASE("distance_transform: 1-D adjacency example") {
  Tensor m({1, 3}, {1.0, 0.0, 0.0});
  Tensor d = distance_transform(m, DistanceTarget::kForeground);
  CHECK(d[0] == doctest::Approx(0.0));
  CHECK(d[1] == doctest::Approx(1.0));
  CHECK(d[2] == doctest::Approx(2.0));
}

TEST_CASE("distance_transform: all-ones mask is identically zero") {
  Tensor m({4, 4}, 1.0);
  Tensor d = distance_transform(m, DistanceTarget::kForeground);
  for (int64_t i = 0; i < 16; ++i) CHECK(d[i] == 0.0);
}

TEST_CASE("distance_transform: empty target set gives +inf sentinel") {
  Tensor m({3, 3});
  Tensor d = distance_transform(m, DistanceTarget::kForeground);
  for (int64_t i = 0; i < 9; ++i) CHECK(std::isinf(d[i]));
}

TEST_CASE("distance_transform: rejects invalid masks") {
  CHECK_THROWS(distance_transform(Tensor({2, 2}, {0.0, 0.5, 1.0, 0.0}),
                                  DistanceTarget::kForeground));
  CHECK_THROWS(validate_mask(Tensor({4})));
}

TEST_CASE("distance_transform matches exhaustive search on 50 random 32x32 masks") {
  Rng rng(42, SeedTag::kTestMisc, 1);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor m = trial % 2 == 0 ? random_mask(32, 32, rng, 0.3) : blob_mask(32, 32, rng);
    Tensor fast = distance_transform(m, DistanceTarget::kForeground);
    Tensor slow = oracle::distance_exhaustive(m);
    for (int64_t i = 0; i < m.numel(); ++i) CHECK(std::fabs(fast[i] - slow[i]) <= 1e-6);
  }
}

TEST_CASE("distance_transform to background matches exhaustive search") {
  Rng rng(42, SeedTag::kTestMisc, 2);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor m = blob_mask(24, 17, rng);
    Tensor inv({24, 17});
    for (int64_t i = 0; i < m.numel(); ++i) inv[i] = 1.0 - m[i];
    Tensor fast = distance_transform(m, DistanceTarget::kBackground);
    Tensor slow = oracle::distance_exhaustive(inv);
    for (int64_t i = 0; i < m.numel(); ++i) CHECK(std::fabs(fast[i] - slow[i]) <= 1e-6);
  }
}

TEST_CASE("extract_boundary: all-zero and all-one masks give empty boundary") {
  Tensor z({5, 5});
  Tensor b = extract_boundary(z);
  CHECK(b.sum() == 0.0);
  Tensor o({5, 5}, 1.0);
  CHECK(extract_boundary(o).sum() == 0.0);
}

TEST_CASE("extract_boundary: 4x4 solid block inside 8x8 leaves a 12-pixel ring") {
  Tensor m({8, 8});
  for (int64_t y = 2; y < 6; ++y)
    for (int64_t x = 2; x < 6; ++x) m.at2(y, x) = 1.0;
  Tensor b = extract_boundary(m);
  CHECK(b.sum() == 12.0);
  // Interior 2x2 survives erosion, so it is not boundary.
  CHECK(b.at2(3, 3) == 0.0);
  CHECK(b.at2(3, 4) == 0.0);
  CHECK(b.at2(4, 3) == 0.0);
  CHECK(b.at2(4, 4) == 0.0);
  CHECK(b.at2(2, 2) == 1.0);
}

TEST_CASE("extract_boundary matches definition on random masks") {
  Rng rng(42, SeedTag::kTestMisc, 3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor m = trial % 2 == 0 ? random_mask(20, 20, rng) : blob_mask(20, 20, rng);
    Tensor fast = extract_boundary(m);
    Tensor slow = oracle::boundary_by_definition(m);
    CHECK(fast.vec() == slow.vec());
  }
}

TEST_CASE("extract_boundary: boundary pixels are foreground, near background or edge") {
  Rng rng(42, SeedTag::kTestMisc, 4);
  Tensor m = blob_mask(30, 30, rng);
  Tensor b = extract_boundary(m);
  const int64_t H = 30, W = 30;
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      if (b.at2(y, x) != 1.0) continue;
      CHECK(m.at2(y, x) == 1.0);
      bool ok = y == 0 || y == H - 1 || x == 0 || x == W - 1;
      for (int64_t dy = -1; dy <= 1 && !ok; ++dy)
        for (int64_t dx = -1; dx <= 1 && !ok; ++dx) {
          const int64_t ny = y + dy, nx = x + dx;
          if (ny >= 0 && ny < H && nx >= 0 && nx < W && m.at2(ny, nx) == 0.0) ok = true;
        }
      CHECK(ok);
    }
}

TEST_CASE("extract_boundary is idempotent on 1-pixel-thick foreground") {
  Rng rng(42, SeedTag::kTestMisc, 5);
  Tensor m = blob_mask(26, 26, rng);
  Tensor b1 = extract_boundary(m);
  if (b1.sum() > 0.0) {
    Tensor b2 = extract_boundary(b1);
    CHECK(b1.vec() == b2.vec());
  }
}

TEST_CASE("compute_sdf: zero exactly on boundary pixels, signs match regions") {
  Rng rng(42, SeedTag::kTestMisc, 6);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor m = blob_mask(24, 24, rng);
    Tensor b = extract_boundary(m);
    if (b.sum() == 0.0) continue;
    Tensor s = compute_sdf(m);
    for (int64_t i = 0; i < m.numel(); ++i) {
      CHECK(std::fabs(s[i]) <= 1.0);
      if (b[i] == 1.0)
        CHECK(s[i] == 0.0);
      else if (m[i] == 1.0)
        CHECK(s[i] > 0.0);
      else
        CHECK(s[i] < 0.0);
    }
  }
}

TEST_CASE("compute_sdf: single center pixel of 5x5") {
  Tensor m({5, 5});
  m.at2(2, 2) = 1.0;
  Tensor s = compute_sdf(m);
  // The sole foreground pixel is itself boundary, value 0; everything
  // else is negative, with corners most negative and scaled to -1.
  CHECK(s.at2(2, 2) == 0.0);
  double minv = 0.0;
  for (int64_t i = 0; i < 25; ++i) minv = std::min(minv, s[i]);
  CHECK(minv == doctest::Approx(-1.0));
  CHECK(s.at2(0, 0) == doctest::Approx(-1.0));
  for (int64_t i = 0; i < 25; ++i)
    if (i != 12) CHECK(s[i] < 0.0);
}

TEST_CASE("compute_sdf: interior positive case, max |value| = 1 per sign") {
  Tensor m({7, 7});
  for (int64_t y = 2; y < 5; ++y)
    for (int64_t x = 2; x < 5; ++x) m.at2(y, x) = 1.0;
  Tensor s = compute_sdf(m);
  CHECK(s.at2(3, 3) == doctest::Approx(1.0));  // deepest interior pixel
  CHECK(s.at2(0, 0) == doctest::Approx(-1.0));
  CHECK(s.at2(2, 2) == 0.0);
}

TEST_CASE("compute_sdf: degenerate masks give constant maps") {
  Tensor z({4, 6});
  Tensor s0 = compute_sdf(z);
  for (int64_t i = 0; i < s0.numel(); ++i) CHECK(s0[i] == -1.0);
  Tensor o({4, 6}, 1.0);
  Tensor s1 = compute_sdf(o);
  for (int64_t i = 0; i < s1.numel(); ++i) CHECK(s1[i] == 1.0);
}

TEST_CASE("compute_sdf matches brute-force oracle on random masks") {
  Rng rng(42, SeedTag::kTestMisc, 7);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor m = trial % 2 == 0 ? random_mask(16, 16, rng, 0.35) : blob_mask(16, 16, rng);
    Tensor fast = compute_sdf(m);
    Tensor slow = oracle::sdf_by_definition(m);
    for (int64_t i = 0; i < m.numel(); ++i) CHECK(std::fabs(fast[i] - slow[i]) <= 1e-6);
  }
}

TEST_CASE("compute_sdf on mask and complement both match the oracle") {
  Rng rng(42, SeedTag::kTestMisc, 8);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor m = blob_mask(18, 18, rng);
    Tensor mc({18, 18});
    for (int64_t i = 0; i < m.numel(); ++i) mc[i] = 1.0 - m[i];
    Tensor sa = compute_sdf(m);
    Tensor sb = compute_sdf(mc);
    Tensor oa = oracle::sdf_by_definition(m);
    Tensor ob = oracle::sdf_by_definition(mc);
    for (int64_t i = 0; i < m.numel(); ++i) {
      CHECK(std::fabs(sa[i] - oa[i]) <= 1e-6);
      CHECK(std::fabs(sb[i] - ob[i]) <= 1e-6);
    }
  }
}

TEST_CASE("label transforms are pure: repeated calls bit-identical") {
  Rng rng(42, SeedTag::kTestMisc, 9);
  Tensor m = blob_mask(21, 33, rng);
  CHECK(distance_transform(m, DistanceTarget::kForeground).vec() ==
        distance_transform(m, DistanceTarget::kForeground).vec());
  CHECK(extract_boundary(m).vec() == extract_boundary(m).vec());
  CHECK(compute_sdf(m).vec() == compute_sdf(m).vec());
}
