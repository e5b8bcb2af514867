#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "semimoe/data.hpp"
#include "semimoe/image_io.hpp"
#include "semimoe/label_transforms.hpp"

using namespace semimoe;
namespace fs = std::filesystem;

TEST_CASE("synth_generate: deterministic, unique sizes, bounded foreground") {
  auto a = synth_generate(8, 48, 48, 123);
  auto b = synth_generate(8, 48, 48, 123);
  REQUIRE(a.size() == 8);
  for (size_t i = 0; i < 8; ++i) {
    CHECK(a[i].image.vec() == b[i].image.vec());
    CHECK(a[i].mask.vec() == b[i].mask.vec());
    const double frac = a[i].mask.sum() / static_cast<double>(48 * 48);
    CHECK(frac >= 0.05);
    CHECK(frac <= 0.6);
    for (int64_t j = 0; j < a[i].image.numel(); ++j) {
      CHECK(a[i].image[j] >= 0.0);
      CHECK(a[i].image[j] <= 1.0);
    }
  }
  auto c = synth_generate(4, 48, 48, 124);
  CHECK(c[0].mask.vec() != a[0].mask.vec());
  CHECK_THROWS(synth_generate(4, 16, 48, 1));
  CHECK_THROWS(synth_generate(0, 48, 48, 1));
}

TEST_CASE("dataset round-trips through the on-disk layout") {
  const auto dir = fs::temp_directory_path() / "semimoe_test_ds";
  fs::remove_all(dir);
  auto pairs = synth_generate(10, 32, 32, 7);
  write_dataset(dir.string(), pairs, 3, 7, false);
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK_THROWS(write_dataset(dir.string(), pairs, 3, 7, false));  // non-empty, no force

  Dataset ds = load_dataset(dir.string());
  CHECK(ds.train.size() == 7);
  CHECK(ds.test.size() == 3);
  CHECK(ds.height == 32);
  std::set<std::string> ids;
  for (const auto& s : ds.train) ids.insert(s.id);
  for (const auto& s : ds.test) ids.insert(s.id);
  CHECK(ids.size() == 10);
  // Masks survive the 0/255 encoding exactly.
  CHECK(ds.train[0].mask.has_value());
  CHECK(ds.train[0].mask->vec() == pairs[0].mask.vec());
  // Images survive up to 8-bit quantization.
  for (int64_t i = 0; i < ds.train[0].image.numel(); ++i)
    CHECK(std::fabs(ds.train[0].image[i] - pairs[0].image[i]) <= 0.5 / 255.0 + 1e-12);
  fs::remove_all(dir);
}

TEST_CASE("split: ratio arithmetic and determinism") {
  SplitSpec spec{0.1, 0, 3, 99};
  Split s = split_train(100, spec);
  CHECK(s.labeled.size() == 10);
  CHECK(s.unlabeled.size() == 90);
  Split s2 = split_train(100, spec);
  CHECK(s.labeled == s2.labeled);

  // Partition: disjoint and covering.
  std::set<int64_t> all(s.labeled.begin(), s.labeled.end());
  for (int64_t idx : s.unlabeled) CHECK(all.insert(idx).second);
  CHECK(all.size() == 100);
}

TEST_CASE("split: folds rotate the labeled subset") {
  std::set<std::vector<int64_t>> labeled_sets;
  for (int64_t fold = 0; fold < 3; ++fold) {
    SplitSpec spec{0.1, fold, 3, 5};
    labeled_sets.insert(split_train(120, spec).labeled);
  }
  CHECK(labeled_sets.size() == 3);
}

TEST_CASE("split: full ratio leaves no unlabeled data") {
  SplitSpec spec{1.0, 0, 3, 5};
  Split s = split_train(50, spec);
  CHECK(s.labeled.size() == 50);
  CHECK(s.unlabeled.empty());
}

TEST_CASE("split: rejects bad ratios") {
  CHECK_THROWS(split_train(5, SplitSpec{0.05, 0, 3, 1}));  // 0.25 images
  CHECK_THROWS(split_train(5, SplitSpec{0.0, 0, 3, 1}));
  CHECK_THROWS(split_train(5, SplitSpec{0.5, 3, 3, 1}));  // fold out of range
}

TEST_CASE("dihedral transforms: identity, involution, group closure") {
  auto pairs = synth_generate(1, 32, 32, 55);
  const Tensor& m = pairs[0].mask;
  CHECK(dihedral_transform(m, 0).vec() == m.vec());
  // Horizontal flip twice restores the original.
  CHECK(dihedral_transform(dihedral_transform(m, 4), 4).vec() == m.vec());
  // Four quarter turns restore the original.
  Tensor r = m;
  for (int i = 0; i < 4; ++i) r = dihedral_transform(r, 1);
  CHECK(r.vec() == m.vec());
  // rot180 equals two quarter turns.
  CHECK(dihedral_transform(dihedral_transform(m, 1), 1).vec() == dihedral_transform(m, 2).vec());
  // All 8 elements are distinct on a generic mask.
  std::set<std::vector<double>> images;
  for (int d = 0; d < 8; ++d) images.insert(dihedral_transform(m, d).vec());
  CHECK(images.size() == 8);
}

TEST_CASE("augment: deterministic and label-consistent") {
  auto pairs = synth_generate(3, 32, 32, 66);
  Sample s;
  s.id = "x";
  s.image = pairs[0].image;
  s.mask = pairs[0].mask;

  Sample a1 = augment(s, 42, false);
  Sample a2 = augment(s, 42, false);
  CHECK(a1.image.vec() == a2.image.vec());
  CHECK(a1.mask->vec() == a2.mask->vec());

  // Labels re-derived from the transformed mask are exactly the label
  // transforms of that mask.
  for (uint64_t seed = 0; seed < 12; ++seed) {
    Sample a = augment(s, seed, seed % 2 == 0);
    const LabelTriple t = derive_labels(*a.mask);
    const Tensor want_sdf = compute_sdf(*a.mask);
    const Tensor want_bnd = extract_boundary(*a.mask);
    for (int64_t i = 0; i < want_sdf.numel(); ++i) {
      CHECK(std::fabs(t.sdf[i] - want_sdf[i]) <= 1e-6);
      CHECK(t.boundary[i] == want_bnd[i]);
    }
    for (int64_t i = 0; i < a.mask->numel(); ++i)
      CHECK(((*a.mask)[i] == 0.0 || (*a.mask)[i] == 1.0));
  }
}

TEST_CASE("augment: some seed yields the identity element") {
  auto pairs = synth_generate(1, 32, 32, 77);
  Sample s;
  s.id = "x";
  s.image = pairs[0].image;
  s.mask = pairs[0].mask;
  bool found_identity = false, found_changed = false;
  for (uint64_t seed = 0; seed < 64 && !(found_identity && found_changed); ++seed) {
    Sample a = augment(s, seed, false);
    if (a.image.vec() == s.image.vec())
      found_identity = true;
    else
      found_changed = true;
  }
  CHECK(found_identity);
  CHECK(found_changed);
}

TEST_CASE("augment preserves unlabeled samples' lack of mask") {
  auto pairs = synth_generate(1, 32, 32, 88);
  Sample s;
  s.id = "u";
  s.image = pairs[0].image;
  Sample a = augment(s, 9, true);
  CHECK_FALSE(a.mask.has_value());
  CHECK(a.image.shape() == s.image.shape());
}

TEST_CASE("npy round-trip of an sdf map") {
  auto pairs = synth_generate(1, 32, 32, 99);
  const Tensor sdf = compute_sdf(pairs[0].mask);
  const auto path = (fs::temp_directory_path() / "semimoe_test.npy").string();
  write_npy_f32(path, sdf);
  const Tensor back = read_npy_f32(path);
  REQUIRE(back.shape() == sdf.shape());
  for (int64_t i = 0; i < sdf.numel(); ++i)
    CHECK(std::fabs(back[i] - sdf[i]) <= 1e-6);  // float32 quantization
  fs::remove(path);
}
