#include "semimoe/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "semimoe/image_io.hpp"
#include "semimoe/label_transforms.hpp"
#include "semimoe/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace semimoe {

LabelTriple derive_labels(const Tensor& mask) {
  LabelTriple t;
  t.mask = mask;
  t.sdf = compute_sdf(mask);
  t.boundary = extract_boundary(mask);
  return t;
}

namespace {

struct Gland {
  double cy, cx;        // center
  double ry, rx;        // radii
  double angle;         // rotation
  double amp[4];        // radial deformation amplitudes, harmonics 2..5
  double phase[4];
  double reach() const { return std::max(ry, rx) * 1.2; }
};

bool inside_gland(const Gland& g, double y, double x) {
  const double dy = y - g.cy, dx = x - g.cx;
  const double ca = std::cos(g.angle), sa = std::sin(g.angle);
  const double u = (ca * dx + sa * dy) / g.rx;
  const double v = (-sa * dx + ca * dy) / g.ry;
  const double rho = std::sqrt(u * u + v * v);
  const double theta = std::atan2(v, u);
  double limit = 1.0;
  for (int k = 0; k < 4; ++k) limit += g.amp[k] * std::cos((k + 2) * theta + g.phase[k]);
  return rho <= limit;
}

Tensor render_mask(const std::vector<Gland>& glands, int64_t H, int64_t W) {
  Tensor mask({H, W});
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      for (const auto& g : glands)
        if (inside_gland(g, static_cast<double>(y), static_cast<double>(x))) {
          mask.at2(y, x) = 1.0;
          break;
        }
  return mask;
}

std::vector<Gland> sample_glands(int64_t H, int64_t W, Rng& rng) {
  const int64_t n = 2 + rng.next_index(5);  // 2..6
  const double scale = static_cast<double>(std::min(H, W));
  std::vector<Gland> glands;
  for (int64_t j = 0; j < n; ++j) {
    Gland g;
    g.ry = rng.uniform(0.10, 0.22) * scale;
    g.rx = rng.uniform(0.10, 0.22) * scale;
    g.angle = rng.uniform(0.0, M_PI);
    for (int k = 0; k < 4; ++k) {
      g.amp[k] = rng.uniform(-0.09, 0.09);
      g.phase[k] = rng.uniform(0.0, 2.0 * M_PI);
    }
    if (j > 0 && rng.bernoulli(0.4)) {
      // Touching pair: place next to an existing gland.
      const Gland& prev = glands[static_cast<size_t>(rng.next_index(j))];
      const double dir = rng.uniform(0.0, 2.0 * M_PI);
      const double dist = (prev.reach() + g.reach()) * rng.uniform(0.75, 0.95);
      g.cy = prev.cy + dist * std::sin(dir);
      g.cx = prev.cx + dist * std::cos(dir);
    } else {
      g.cy = rng.uniform(0.12, 0.88) * static_cast<double>(H);
      g.cx = rng.uniform(0.12, 0.88) * static_cast<double>(W);
    }
    glands.push_back(g);
  }
  return glands;
}

// Smooth per-image texture: a coarse noise grid upsampled bilinearly.
Tensor value_noise(int64_t H, int64_t W, Rng& rng, int64_t cells = 8) {
  Tensor coarse({cells + 1, cells + 1});
  for (int64_t i = 0; i < coarse.numel(); ++i) coarse[i] = rng.uniform(-1.0, 1.0);
  Tensor out({H, W});
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      const double gy = static_cast<double>(y) / static_cast<double>(H - 1) * cells;
      const double gx = static_cast<double>(x) / static_cast<double>(W - 1) * cells;
      const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(gy), cells - 1);
      const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(gx), cells - 1);
      const double fy = gy - static_cast<double>(y0), fx = gx - static_cast<double>(x0);
      const double v00 = coarse.at2(y0, x0), v01 = coarse.at2(y0, x0 + 1);
      const double v10 = coarse.at2(y0 + 1, x0), v11 = coarse.at2(y0 + 1, x0 + 1);
      out.at2(y, x) = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
    }
  return out;
}

Tensor render_image(const Tensor& mask, Rng& rng) {
  const int64_t H = mask.size(0), W = mask.size(1);
  // Stain-like per-image jitter applied to all base colors.
  const double jr = rng.uniform(-0.05, 0.05);
  const double jg = rng.uniform(-0.05, 0.05);
  const double jb = rng.uniform(-0.05, 0.05);
  const double stroma[3] = {0.85 + jr, 0.70 + jg, 0.80 + jb};
  const double lumen[3] = {0.93 + jr, 0.88 + jg, 0.92 + jb};
  const double rim[3] = {0.44 + jr, 0.28 + jg, 0.52 + jb};
  const double rim_width = rng.uniform(1.6, 2.8);

  // Distance from gland pixels to the background controls the rim band.
  Tensor inverse({H, W});
  for (int64_t i = 0; i < H * W; ++i) inverse[i] = 1.0 - mask[i];
  const Tensor din = distance_to_set(inverse);

  Tensor texture = value_noise(H, W, rng);
  Tensor image({3, H, W});
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      const double* base;
      double tex_amp;
      if (mask.at2(y, x) == 1.0) {
        const bool in_rim = std::isfinite(din.at2(y, x)) && din.at2(y, x) <= rim_width;
        base = in_rim ? rim : lumen;
        tex_amp = in_rim ? 0.04 : 0.025;
      } else {
        base = stroma;
        tex_amp = 0.06;
      }
      const double t = texture.at2(y, x) * tex_amp;
      for (int64_t c = 0; c < 3; ++c) {
        const double noise = rng.uniform(-0.015, 0.015);
        image.at3(c, y, x) = std::clamp(base[c] + t + noise, 0.0, 1.0);
      }
    }
  return image;
}

}  // namespace

std::vector<GeneratedPair> synth_generate(int64_t n, int64_t H, int64_t W, uint64_t seed) {
  if (n < 1) throw std::invalid_argument("synth_generate: n must be >= 1");
  if (H < 32 || W < 32) throw std::invalid_argument("synth_generate: H and W must be >= 32");
  std::vector<GeneratedPair> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    Tensor mask;
    uint64_t attempt = 0;
    for (;; ++attempt) {
      Rng rng(seed, SeedTag::kDataGen, static_cast<uint64_t>(i), attempt);
      mask = render_mask(sample_glands(H, W, rng), H, W);
      const double frac = mask.sum() / static_cast<double>(H * W);
      if (frac >= 0.05 && frac <= 0.6) break;
      if (attempt > 200) throw std::runtime_error("synth_generate: rejection sampling stuck");
    }
    Rng rng(seed, SeedTag::kDataGen, static_cast<uint64_t>(i), attempt + 1000);
    GeneratedPair pair;
    pair.image = render_image(mask, rng);
    pair.mask = std::move(mask);
    out.push_back(std::move(pair));
  }
  return out;
}

namespace {

std::string pair_id(int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%04lld", static_cast<long long>(i));
  return buf;
}

}  // namespace

void write_dataset(const std::string& dir, const std::vector<GeneratedPair>& pairs,
                   int64_t n_test, uint64_t seed, bool force) {
  const fs::path root(dir);
  if (fs::exists(root) && !fs::is_empty(root) && !force)
    throw std::runtime_error(dir + " exists and is not empty (use --force to overwrite)");
  if (n_test < 0 || n_test >= static_cast<int64_t>(pairs.size()))
    throw std::invalid_argument("write_dataset: n_test out of range");
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");

  const int64_t n = static_cast<int64_t>(pairs.size());
  json manifest;
  manifest["n"] = n;
  manifest["seed"] = seed;
  manifest["height"] = pairs[0].mask.size(0);
  manifest["width"] = pairs[0].mask.size(1);
  json ids = json::array();
  json split = json::object();
  for (int64_t i = 0; i < n; ++i) {
    const std::string id = pair_id(i);
    ids.push_back(id);
    split[id] = i < n - n_test ? "train" : "test";
    write_rgb_png((root / "images" / (id + ".png")).string(), pairs[static_cast<size_t>(i)].image);
    write_mask_png((root / "masks" / (id + ".png")).string(), pairs[static_cast<size_t>(i)].mask);
  }
  manifest["ids"] = ids;
  manifest["split"] = split;
  std::ofstream f(root / "manifest.json");
  f << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream f(root / "manifest.json");
  if (!f) throw std::runtime_error("cannot open " + (root / "manifest.json").string());
  json manifest = json::parse(f);
  Dataset ds;
  ds.height = manifest.at("height").get<int64_t>();
  ds.width = manifest.at("width").get<int64_t>();
  for (const auto& idj : manifest.at("ids")) {
    const std::string id = idj.get<std::string>();
    Sample s;
    s.id = id;
    s.image = read_rgb_png((root / "images" / (id + ".png")).string());
    s.mask = read_mask_png((root / "masks" / (id + ".png")).string());
    const std::string sp = manifest.at("split").at(id).get<std::string>();
    if (sp == "train")
      ds.train.push_back(std::move(s));
    else if (sp == "test")
      ds.test.push_back(std::move(s));
    else
      throw std::runtime_error("unknown split assignment '" + sp + "' for " + id);
  }
  return ds;
}

Split split_train(int64_t n_train, const SplitSpec& spec) {
  if (spec.labeled_ratio <= 0.0 || spec.labeled_ratio > 1.0)
    throw std::invalid_argument("labeled_ratio must be in (0, 1]");
  if (spec.n_folds < 1 || spec.fold < 0 || spec.fold >= spec.n_folds)
    throw std::invalid_argument("invalid fold / n_folds");
  const int64_t n_lab =
      static_cast<int64_t>(std::floor(spec.labeled_ratio * static_cast<double>(n_train)));
  if (n_lab < 1) throw std::invalid_argument("labeled_ratio * n_train must be >= 1");

  std::vector<int64_t> order(static_cast<size_t>(n_train));
  for (int64_t i = 0; i < n_train; ++i) order[static_cast<size_t>(i)] = i;
  Rng rng(spec.seed, SeedTag::kSplit);
  for (int64_t i = n_train - 1; i > 0; --i)
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.next_index(i + 1))]);

  Split out;
  std::vector<bool> is_labeled(static_cast<size_t>(n_train), false);
  const int64_t start = (spec.fold * n_lab) % n_train;
  for (int64_t k = 0; k < n_lab; ++k) {
    const int64_t idx = order[static_cast<size_t>((start + k) % n_train)];
    is_labeled[static_cast<size_t>(idx)] = true;
  }
  for (int64_t i = 0; i < n_train; ++i)
    (is_labeled[static_cast<size_t>(i)] ? out.labeled : out.unlabeled).push_back(i);
  return out;
}

Tensor dihedral_transform(const Tensor& grid, int element) {
  if (element < 0 || element > 7) throw std::invalid_argument("dihedral element must be in [0,8)");
  const int64_t H = grid.size(0), W = grid.size(1);
  const int rot = element & 3;
  const bool flip = (element & 4) != 0;
  if (rot % 2 == 1 && H != W)
    throw std::invalid_argument("quarter-turn rotations require a square grid");
  const int64_t Ho = rot % 2 == 0 ? H : W;
  const int64_t Wo = rot % 2 == 0 ? W : H;
  Tensor out({Ho, Wo});
  for (int64_t y = 0; y < Ho; ++y)
    for (int64_t x = 0; x < Wo; ++x) {
      int64_t sy = y, sx = x;
      if (flip) sx = Wo - 1 - sx;
      // Map output coordinates back through the inverse rotation.
      switch (rot) {
        case 0: break;
        case 1: {
          const int64_t ty = sx, tx = H - 1 - sy;
          sy = ty;
          sx = tx;
          break;
        }
        case 2: {
          sy = H - 1 - sy;
          sx = W - 1 - sx;
          break;
        }
        case 3: {
          const int64_t ty = W - 1 - sx, tx = sy;
          sy = ty;
          sx = tx;
          break;
        }
      }
      out.at2(y, x) = grid.at2(sy, sx);
    }
  return out;
}

namespace {

Tensor dihedral_image(const Tensor& image, int element) {
  const int64_t H = image.size(1), W = image.size(2);
  Tensor out;
  for (int64_t c = 0; c < 3; ++c) {
    Tensor plane({H, W});
    std::copy_n(image.data() + c * H * W, H * W, plane.data());
    Tensor t = dihedral_transform(plane, element);
    if (c == 0) out = Tensor({3, t.size(0), t.size(1)});
    std::copy_n(t.data(), t.numel(), out.data() + c * t.numel());
  }
  return out;
}

}  // namespace

Sample augment(const Sample& s, uint64_t seed, bool crop) {
  Rng rng(seed, SeedTag::kAugment);
  Sample out;
  out.id = s.id;
  out.image = s.image;
  if (s.mask) out.mask = *s.mask;

  if (crop) {
    // The in-place nearest lookup above would read already-written cells;
    // operate on a copy of the mask instead.
    const int64_t H = out.image.size(1), W = out.image.size(2);
    Tensor mask_src = out.mask ? *out.mask : Tensor({H, W});
    Tensor mask_dst({H, W});
    const int64_t ch = std::max<int64_t>(8, (H * 7) / 8);
    const int64_t cw = std::max<int64_t>(8, (W * 7) / 8);
    const int64_t oy = rng.next_index(H - ch + 1);
    const int64_t ox = rng.next_index(W - cw + 1);
    Tensor new_image({3, H, W});
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        const double sy = oy + (static_cast<double>(y) + 0.5) * ch / H - 0.5;
        const double sx = ox + (static_cast<double>(x) + 0.5) * cw / W - 0.5;
        const int64_t y0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(sy)), 0, H - 1);
        const int64_t x0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(sx)), 0, W - 1);
        const int64_t y1 = std::min<int64_t>(y0 + 1, H - 1);
        const int64_t x1 = std::min<int64_t>(x0 + 1, W - 1);
        const double fy = std::clamp(sy - y0, 0.0, 1.0), fx = std::clamp(sx - x0, 0.0, 1.0);
        for (int64_t c = 0; c < 3; ++c)
          new_image.at3(c, y, x) =
              (1 - fy) * ((1 - fx) * out.image.at3(c, y0, x0) + fx * out.image.at3(c, y0, x1)) +
              fy * ((1 - fx) * out.image.at3(c, y1, x0) + fx * out.image.at3(c, y1, x1));
        const int64_t ny = std::clamp<int64_t>(static_cast<int64_t>(std::lround(sy)), 0, H - 1);
        const int64_t nx = std::clamp<int64_t>(static_cast<int64_t>(std::lround(sx)), 0, W - 1);
        mask_dst.at2(y, x) = mask_src.at2(ny, nx);
      }
    out.image = std::move(new_image);
    if (out.mask) out.mask = std::move(mask_dst);
  }

  const int64_t H = out.image.size(1), W = out.image.size(2);
  // Rotations and transposition change the grid shape on non-square
  // images; restrict to the shape-preserving subgroup there.
  const int d = H == W ? static_cast<int>(rng.next_index(8))
                       : static_cast<int>(rng.next_index(4)) * 2;  // {0, 2, 4, 6}
  if (d != 0) {
    out.image = dihedral_image(out.image, d);
    if (out.mask) out.mask = dihedral_transform(*out.mask, d);
  }
  return out;
}

}  // namespace semimoe
