// Tests for the synthetic scene generator, the severity-graded corruptions,
// and the dataset plumbing (splits, manifests, round-trips).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "stylelab/scenes.hpp"
#include "stylelab/tensor.hpp"

using namespace stylelab;
namespace fs = std::filesystem;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && a.dtype() == b.dtype() &&
         std::memcmp(a.raw(), b.raw(), a.nbytes()) == 0;
}

double image_mean(const Tensor& img) {
  double m = 0.0;
  for (int64_t i = 0; i < img.numel(); ++i) m += img.at(i);
  return m / static_cast<double>(img.numel());
}

double image_variance(const Tensor& img) {
  const double m = image_mean(img);
  double v = 0.0;
  for (int64_t i = 0; i < img.numel(); ++i) {
    const double d = img.at(i) - m;
    v += d * d;
  }
  return v / static_cast<double>(img.numel());
}

}  // namespace

// ---------------------------------------------------------------- scenes

TEST_CASE("the same seed reproduces the scene bit for bit") {
  for (std::uint64_t seed : {0ULL, 1ULL, 77ULL, 123456789ULL}) {
    SegSample a = generate_scene(seed);
    SegSample b = generate_scene(seed);
    CHECK(a.scene_seed == seed);
    CHECK(bitwise_equal(a.image, b.image));
    CHECK(bitwise_equal(a.labels, b.labels));
  }
}

TEST_CASE("scenes have the contracted shapes, range, and label values") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    SegSample s = generate_scene(rng());
    REQUIRE(s.image.shape() == std::vector<int64_t>{3, 64, 64});
    REQUIRE(s.labels.shape() == std::vector<int64_t>{64, 64});
    for (int64_t i = 0; i < s.image.numel(); ++i) {
      CHECK(s.image.at(i) >= 0.0);
      CHECK(s.image.at(i) <= 1.0);
    }
    for (int64_t i = 0; i < s.labels.numel(); ++i) {
      const double l = s.labels.at(i);
      CHECK(l == std::floor(l));
      CHECK(l >= 0.0);
      CHECK(l <= 3.0);
    }
  }
}

TEST_CASE("every class appears in more than 95 percent of 1000 scenes") {
  std::array<int, kSceneClasses> present{};
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    SegSample s = generate_scene(seed);
    std::array<bool, kSceneClasses> seen{};
    for (int64_t i = 0; i < s.labels.numel(); ++i)
      seen[static_cast<std::size_t>(s.labels.at(i))] = true;
    for (int c = 0; c < kSceneClasses; ++c)
      present[static_cast<std::size_t>(c)] += seen[static_cast<std::size_t>(c)];
  }
  for (int c = 0; c < kSceneClasses; ++c) {
    INFO("class ", kClassNames[c], " present in ", present[c], " of 1000");
    CHECK(present[static_cast<std::size_t>(c)] > 950);
  }
}

// ------------------------------------------------------------ corruptions

TEST_CASE("corruptions keep shape and range, and never touch labels") {
  SegSample s = generate_scene(11);
  for (const std::string& kind : corruption_kinds()) {
    for (int sev : {1, 3, 5}) {
      CorruptionSpec spec;
      spec.kind = kind;
      spec.severity = sev;
      spec.seed = 9;
      Tensor out = corrupt(s.image, spec);
      REQUIRE(out.shape() == s.image.shape());
      for (int64_t i = 0; i < out.numel(); ++i) {
        CHECK(out.at(i) >= 0.0);
        CHECK(out.at(i) <= 1.0);
      }
    }
  }
}

TEST_CASE("corruption is deterministic in its seed") {
  SegSample s = generate_scene(13);
  for (const std::string& kind : corruption_kinds()) {
    CorruptionSpec spec;
    spec.kind = kind;
    spec.severity = 3;
    spec.seed = 21;
    CHECK(bitwise_equal(corrupt(s.image, spec), corrupt(s.image, spec)));
  }
}

TEST_CASE("severity and kind are validated") {
  SegSample s = generate_scene(17);
  CorruptionSpec spec;
  spec.kind = "haze";
  spec.severity = 0;
  CHECK_THROWS_AS(corrupt(s.image, spec), std::invalid_argument);
  spec.severity = 6;
  CHECK_THROWS_AS(corrupt(s.image, spec), std::invalid_argument);
  spec.severity = 3;
  spec.kind = "motion-blur";
  CHECK_THROWS_AS(corrupt(s.image, spec), std::invalid_argument);
}

TEST_CASE("haze at severity 5 blends the top row by exactly 0.85") {
  // alpha rises from 0.15*s at the bottom row to 0.15*s + 0.1 at the top;
  // on an all-black image the output equals alpha itself.
  Tensor black = Tensor::zeros({3, 64, 64}, Dtype::F32);
  CorruptionSpec spec;
  spec.kind = "haze";
  spec.severity = 5;
  spec.seed = 0;
  Tensor out = corrupt(black, spec);
  const float* px = out.f32().data();
  CHECK(px[0] == doctest::Approx(0.85).epsilon(1e-6));         // top row
  CHECK(px[63 * 64] == doctest::Approx(0.75).epsilon(1e-6));   // bottom row
  // Monotone down the image: farther rows are hazier.
  for (int r = 1; r < 64; ++r) CHECK(px[r * 64] <= px[(r - 1) * 64] + 1e-7);
}

TEST_CASE("strength zero is the exact identity for every kind") {
  SegSample s = generate_scene(19);
  for (const std::string& kind : corruption_kinds())
    CHECK(bitwise_equal(corrupt_strength(s.image, kind, 0.0, 5), s.image));
}

TEST_CASE("corrupt equals corrupt_strength at integer severities") {
  SegSample s = generate_scene(23);
  for (const std::string& kind : corruption_kinds()) {
    CorruptionSpec spec;
    spec.kind = kind;
    spec.severity = 4;
    spec.seed = 31;
    CHECK(bitwise_equal(corrupt(s.image, spec),
                        corrupt_strength(s.image, kind, 4.0, 31)));
  }
}

TEST_CASE("haze raises the mean and contrast shrinks the variance") {
  int haze_up = 0, contrast_down = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SegSample s = generate_scene(seed);
    CorruptionSpec h{"haze", 3, seed};
    CorruptionSpec c{"contrast", 3, seed};
    if (image_mean(corrupt(s.image, h)) > image_mean(s.image)) ++haze_up;
    if (image_variance(corrupt(s.image, c)) < image_variance(s.image))
      ++contrast_down;
  }
  CHECK(haze_up == 100);
  CHECK(contrast_down == 100);
}

TEST_CASE("corruption severity is monotone in image distortion") {
  // Mean absolute deviation from the clean image grows with severity for
  // the deterministic kinds on every probe scene.
  for (const std::string& kind : {"haze", "contrast", "gauss-blur"}) {
    for (std::uint64_t seed = 100; seed < 110; ++seed) {
      SegSample s = generate_scene(seed);
      double prev = -1.0;
      for (int sev = 1; sev <= 5; ++sev) {
        CorruptionSpec spec{kind, sev, 7};
        Tensor out = corrupt(s.image, spec);
        double mad = 0.0;
        for (int64_t i = 0; i < out.numel(); ++i)
          mad += std::abs(out.at(i) - s.image.at(i));
        mad /= static_cast<double>(out.numel());
        CHECK(mad >= prev);
        prev = mad;
      }
    }
  }
}

// ---------------------------------------------------------------- datasets

TEST_CASE("splits draw disjoint scene seeds") {
  Dataset train = generate_dataset("train", 40, 7);
  Dataset val = generate_dataset("val", 40, 7);
  Dataset test = generate_dataset("test", 40, 7);
  Dataset other = generate_dataset("train", 40, 8);
  std::set<std::uint64_t> seen;
  for (const Dataset* ds : {&train, &val, &test, &other})
    for (const SegSample& s : ds->samples) CHECK(seen.insert(s.scene_seed).second);
  CHECK_THROWS_AS(generate_dataset("holdout", 4, 1), std::invalid_argument);
}

TEST_CASE("dataset generation is deterministic and labeled with its id") {
  Dataset a = generate_dataset("test", 8, 99);
  Dataset b = generate_dataset("test", 8, 99);
  REQUIRE(a.samples.size() == 8);
  CHECK(a.info.split == "test");
  CHECK(a.info.n == 8);
  CHECK(a.info.seed == 99);
  CHECK(a.info.generator == std::string(kSceneGeneratorVersion));
  CHECK_FALSE(a.info.corrupted);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(bitwise_equal(a.samples[i].image, b.samples[i].image));
    CHECK(bitwise_equal(a.samples[i].labels, b.samples[i].labels));
  }
}

TEST_CASE("corrupting a dataset keeps labels and stamps the manifest") {
  Dataset clean = generate_dataset("test", 6, 3);
  CorruptionSpec spec{"rain", 2, 55};
  Dataset bad = corrupt_dataset(clean, spec);
  REQUIRE(bad.samples.size() == clean.samples.size());
  CHECK(bad.info.corrupted);
  CHECK(bad.info.corruption.kind == "rain");
  CHECK(bad.info.corruption.severity == 2);
  bool any_changed = false;
  for (std::size_t i = 0; i < bad.samples.size(); ++i) {
    CHECK(bitwise_equal(bad.samples[i].labels, clean.samples[i].labels));
    if (!bitwise_equal(bad.samples[i].image, clean.samples[i].image))
      any_changed = true;
  }
  CHECK(any_changed);
  // Per-sample corruption seeds differ, so two samples of the same scene
  // would not share rain streaks; spot-check via determinism of the whole.
  Dataset again = corrupt_dataset(clean, spec);
  for (std::size_t i = 0; i < bad.samples.size(); ++i)
    CHECK(bitwise_equal(bad.samples[i].image, again.samples[i].image));
}

TEST_CASE("datasets round-trip through their directory format") {
  fs::path dir = fs::temp_directory_path() /
                 ("stylelab-scenes-" + std::to_string(::getpid()));
  fs::remove_all(dir);

  Dataset ds = generate_dataset("val", 5, 41);
  CorruptionSpec spec{"gauss-noise", 4, 17};
  Dataset bad = corrupt_dataset(ds, spec);
  save_dataset(bad, dir.string());

  Dataset back = load_dataset(dir.string());
  CHECK(back.info.id == bad.info.id);
  CHECK(back.info.split == "val");
  CHECK(back.info.n == 5);
  CHECK(back.info.corrupted);
  CHECK(back.info.corruption.kind == "gauss-noise");
  CHECK(back.info.corruption.severity == 4);
  CHECK(back.info.corruption.seed == 17);
  REQUIRE(back.samples.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(bitwise_equal(back.samples[i].image, bad.samples[i].image));
    CHECK(bitwise_equal(back.samples[i].labels, bad.samples[i].labels));
    CHECK(back.samples[i].scene_seed == bad.samples[i].scene_seed);
  }

  CHECK_THROWS_AS(load_dataset((dir / "nope").string()), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("the corruption kind list is the five documented families") {
  const auto& kinds = corruption_kinds();
  REQUIRE(kinds.size() == 5);
  CHECK(kinds[0] == "haze");
  CHECK(kinds[1] == "rain");
  CHECK(kinds[2] == "gauss-noise");
  CHECK(kinds[3] == "gauss-blur");
  CHECK(kinds[4] == "contrast");
}
