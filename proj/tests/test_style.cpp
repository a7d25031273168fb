// Tests for the Gram-matrix style analytics: normalized Gram computation,
// content/style reconstruction losses, the style-retention score, pixel-space
// style transfer, and the Gram summary statistics.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "stylelab/scenes.hpp"
#include "stylelab/style.hpp"
#include "stylelab/tensor.hpp"

using namespace stylelab;

namespace {

// Cyclic Jacobi eigenvalue iteration for small symmetric matrices; used as an
// independent oracle for positive semi-definiteness.
std::vector<double> jacobi_eigenvalues(std::vector<double> a, int n) {
  auto at = [&](int r, int c) -> double& { return a[r * n + c]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int r = 0; r < n; ++r)
      for (int c = r + 1; c < n; ++c) off += at(r, c) * at(r, c);
    if (off < 1e-26) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(at(p, q)) < 1e-300) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (int i = 0; i < n; ++i) eig[i] = at(i, i);
  std::sort(eig.begin(), eig.end());
  return eig;
}

Tensor feature(std::vector<int64_t> shape, std::mt19937_64& rng,
               Dtype dt = Dtype::F64) {
  return rand_uniform(std::move(shape), -1.5, 1.5, rng, dt);
}

}  // namespace

// ------------------------------------------------------------------- gram

TEST_CASE("gram of a zero feature map is the zero matrix") {
  Tensor f = Tensor::zeros({3, 4, 5}, Dtype::F64);
  Tensor g = gram(f);
  REQUIRE(g.shape() == std::vector<int64_t>{3, 3});
  for (int64_t i = 0; i < g.numel(); ++i) CHECK(g.at(i) == 0.0);
}

TEST_CASE("gram of a 1x1 two-channel map matches the hand computation") {
  // Channels (1, 2) at a single pixel: X X^T = [[1,2],[2,4]], divided by
  // h*w*c = 2 gives [[0.5,1.0],[1.0,2.0]].
  for (Dtype dt : {Dtype::F32, Dtype::F64}) {
    Tensor f = Tensor::of({2, 1, 1}, {1.0, 2.0}, dt);
    Tensor g = gram(f);
    REQUIRE(g.shape() == std::vector<int64_t>{2, 2});
    CHECK(g.at(0) == 0.5);
    CHECK(g.at(1) == 1.0);
    CHECK(g.at(2) == 1.0);
    CHECK(g.at(3) == 2.0);
  }
}

TEST_CASE("scaling the features by 3 scales the Gram matrix by exactly 9") {
  // Integer-valued features keep every product exact in floating point.
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> d(-3, 3);
  Tensor f = Tensor::zeros({4, 3, 5}, Dtype::F64);
  for (int64_t i = 0; i < f.numel(); ++i) f.set(i, static_cast<double>(d(rng)));
  Tensor f3 = scale(f, 3.0);
  Tensor g1 = gram(f);
  Tensor g3 = gram(f3);
  for (int64_t i = 0; i < g1.numel(); ++i) CHECK(g3.at(i) == 9.0 * g1.at(i));
}

TEST_CASE("quadratic scaling gram(aF) = a^2 gram(F) over 100 random maps") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> ad(0.1, 4.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t c = 1 + static_cast<int64_t>(rng() % 6);
    const int64_t h = 1 + static_cast<int64_t>(rng() % 7);
    const int64_t w = 1 + static_cast<int64_t>(rng() % 7);
    Tensor f = feature({c, h, w}, rng);
    const double a = ad(rng);
    Tensor ga = gram(scale(f, a));
    Tensor g = gram(f);
    for (int64_t i = 0; i < g.numel(); ++i) {
      const double want = a * a * g.at(i);
      const double got = ga.at(i);
      CHECK(std::abs(got - want) <=
            1e-10 * std::max({1.0, std::abs(got), std::abs(want)}));
    }
  }
}

TEST_CASE("gram matrices are symmetric and positive semi-definite") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t c = 2 + static_cast<int64_t>(rng() % 7);  // 2..8
    const int64_t h = 1 + static_cast<int64_t>(rng() % 6);
    const int64_t w = 1 + static_cast<int64_t>(rng() % 6);
    const Dtype dt = (trial % 2 == 0) ? Dtype::F64 : Dtype::F32;
    Tensor g = gram(feature({c, h, w}, rng, dt));
    const double sym_tol = dt == Dtype::F64 ? 1e-9 : 1e-5;
    double max_abs = 0.0;
    std::vector<double> dense(static_cast<std::size_t>(c * c));
    for (int64_t r = 0; r < c; ++r)
      for (int64_t k = 0; k < c; ++k) {
        const double v = g.at(r * c + k);
        dense[static_cast<std::size_t>(r * c + k)] = v;
        max_abs = std::max(max_abs, std::abs(v));
        CHECK(std::abs(v - g.at(k * c + r)) < sym_tol);
      }
    const auto eig = jacobi_eigenvalues(dense, static_cast<int>(c));
    CHECK(eig.front() >= -1e-6 * max_abs);
  }
}

// ---------------------------------------------------------- content loss

TEST_CASE("content loss of identical feature stacks is exactly zero") {
  std::mt19937_64 rng(3);
  std::vector<Tensor> fs = {feature({3, 4, 4}, rng), feature({5, 2, 2}, rng)};
  CHECK(content_loss(fs, fs).item() == 0.0);
}

TEST_CASE("content loss of a unit map differing by 3 is 9") {
  std::vector<Tensor> a = {Tensor::of({1, 1, 1}, {4.0}, Dtype::F64)};
  std::vector<Tensor> b = {Tensor::of({1, 1, 1}, {1.0}, Dtype::F64)};
  CHECK(content_loss(a, b).item() == 9.0);
  CHECK(content_loss(b, a).item() == 9.0);
}

TEST_CASE("content loss rejects mismatched layer sets") {
  std::mt19937_64 rng(4);
  std::vector<Tensor> a = {feature({2, 3, 3}, rng), feature({2, 3, 3}, rng)};
  std::vector<Tensor> b = {feature({2, 3, 3}, rng)};
  CHECK_THROWS_AS(content_loss(a, b), std::invalid_argument);
  std::vector<Tensor> c = {feature({2, 3, 3}, rng), feature({2, 4, 3}, rng)};
  CHECK_THROWS_AS(content_loss(a, c), std::invalid_argument);
}

TEST_CASE("content loss is non-negative on random stacks") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor> a = {feature({3, 4, 5}, rng)};
    std::vector<Tensor> b = {feature({3, 4, 5}, rng)};
    CHECK(content_loss(a, b).item() >= 0.0);
  }
}

// ------------------------------------------------------------ style loss

TEST_CASE("style loss of an image against itself is zero") {
  std::mt19937_64 rng(6);
  std::vector<Tensor> fs = {feature({3, 4, 4}, rng), feature({6, 2, 5}, rng)};
  CHECK(style_loss(fs, fs).item() == 0.0);
}

TEST_CASE("style loss with scalar Grams 2 and 5 is (2-5)^2 = 9") {
  // c=1, h=1, w=2 features (2,0) and (3,1): Grams (4+0)/2 = 2 and
  // (9+1)/2 = 5, all exact in binary floating point.
  std::vector<Tensor> a = {Tensor::of({1, 1, 2}, {2.0, 0.0}, Dtype::F64)};
  std::vector<Tensor> b = {Tensor::of({1, 1, 2}, {3.0, 1.0}, Dtype::F64)};
  CHECK(style_loss(a, b).item() == 9.0);
}

TEST_CASE("style loss is symmetric in its arguments") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Tensor> a = {feature({3, 4, 5}, rng), feature({2, 6, 3}, rng)};
    std::vector<Tensor> b = {feature({3, 2, 7}, rng), feature({2, 3, 3}, rng)};
    CHECK(style_loss(a, b).item() ==
          doctest::Approx(style_loss(b, a).item()).epsilon(1e-12));
  }
}

TEST_CASE("style loss allows different spatial sizes but not channels") {
  std::mt19937_64 rng(9);
  std::vector<Tensor> a = {feature({3, 4, 4}, rng)};
  std::vector<Tensor> ok = {feature({3, 7, 2}, rng)};
  CHECK(style_loss(a, ok).item() >= 0.0);
  std::vector<Tensor> bad = {feature({4, 4, 4}, rng)};
  CHECK_THROWS_AS(style_loss(a, bad), std::invalid_argument);
}

// ------------------------------------------------------------- gram loss

TEST_CASE("equal input and output Grams score exactly 1") {
  std::mt19937_64 rng(10);
  std::vector<Tensor> gs;
  for (int l = 0; l < 4; ++l) gs.push_back(gram(feature({4, 3, 3}, rng)));
  CHECK(gram_loss(gs, gs).item() == 1.0);
}

TEST_CASE("single layer [[2]] -> [[1]] scores exactly 0.5") {
  std::vector<Tensor> gin = {Tensor::of({1, 1}, {2.0}, Dtype::F64)};
  std::vector<Tensor> gout = {Tensor::of({1, 1}, {1.0}, Dtype::F64)};
  CHECK(gram_loss(gin, gout).item() == 0.5);
}

TEST_CASE("zeroing a constant Gram matrix scores exactly 0") {
  // Entry values whose sums and quotients are exact in binary floating
  // point, so the anchor is hit exactly rather than to within an ulp.
  for (double v : {0.5, 2.0, 64.0}) {
    std::vector<Tensor> gin = {Tensor::full({3, 3}, v, Dtype::F64)};
    std::vector<Tensor> gout = {Tensor::zeros({3, 3}, Dtype::F64)};
    CHECK(gram_loss(gin, gout).item() == 0.0);
  }
}

TEST_CASE("layers with a vanishing input peak are skipped, not divided by") {
  // A dead layer (all-zero input Gram) contributes 0 to the sum while still
  // counting toward L.
  std::vector<Tensor> gin = {Tensor::of({1, 1}, {2.0}, Dtype::F64),
                             Tensor::zeros({2, 2}, Dtype::F64)};
  std::vector<Tensor> gout = {Tensor::of({1, 1}, {1.0}, Dtype::F64),
                              Tensor::zeros({2, 2}, Dtype::F64)};
  CHECK(gram_loss(gin, gout).item() == 0.75);  // 1 - (1/2)(0.5 + 0)
  std::vector<Tensor> tiny_in = {Tensor::full({2, 2}, 1e-13, Dtype::F64)};
  std::vector<Tensor> tiny_out = {Tensor::zeros({2, 2}, Dtype::F64)};
  CHECK(gram_loss(tiny_in, tiny_out).item() == 1.0);
}

TEST_CASE("gram loss is invariant to scaling both Grams by a > 0") {
  std::mt19937_64 rng(12);
  for (double a : {0.01, 0.5, 7.3, 1234.5}) {
    std::vector<Tensor> gin, gout, sin_, sout;
    for (int l = 0; l < 3; ++l) {
      Tensor gi = gram(feature({4, 3, 3}, rng));
      Tensor go = gram(feature({4, 3, 3}, rng));
      gin.push_back(gi);
      gout.push_back(go);
      sin_.push_back(scale(gi, a));
      sout.push_back(scale(go, a));
    }
    const double base = gram_loss(gin, gout).item();
    const double scaled = gram_loss(sin_, sout).item();
    CHECK(std::abs(base - scaled) <= 1e-12 * std::max(1.0, std::abs(base)));
  }
}

TEST_CASE("gram loss rejects an empty pair list and mismatched shapes") {
  CHECK_THROWS_AS(gram_loss({}, {}), std::invalid_argument);
  std::vector<Tensor> gin = {Tensor::full({2, 2}, 1.0, Dtype::F64)};
  std::vector<Tensor> gout = {Tensor::full({3, 3}, 1.0, Dtype::F64)};
  CHECK_THROWS_AS(gram_loss(gin, gout), std::invalid_argument);
}

TEST_CASE("gram loss can exceed 1 when the output Gram grows") {
  std::vector<Tensor> gin = {Tensor::of({1, 1}, {1.0}, Dtype::F64)};
  std::vector<Tensor> gout = {Tensor::of({1, 1}, {3.0}, Dtype::F64)};
  CHECK(gram_loss(gin, gout).item() == 3.0);  // 1 - (1-3)/1
}

// ------------------------------------------------------------ gradchecks

TEST_CASE("gram, content, style, and gram-loss pass gradient checks") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = feature({4, 5, 3}, rng);
    Tensor ref = feature({4, 5, 3}, rng);
    Tensor probe = rand_uniform({4, 4}, 0.0, 1.0, rng, Dtype::F64);

    CHECK(gradcheck([](const Tensor& t) { return mean_all(gram(t)); }, x) <
          1e-6);
    CHECK(gradcheck([&](const Tensor& t) { return content_loss({t}, {ref}); },
                    x) < 1e-6);
    CHECK(gradcheck([&](const Tensor& t) { return style_loss({t}, {ref}); },
                    x) < 1e-6);
    // Through both arguments of the retention score.
    CHECK(gradcheck(
              [&](const Tensor& t) {
                return gram_loss({gram(t)}, {gram(ref)});
              },
              x) < 1e-6);
    CHECK(gradcheck(
              [&](const Tensor& t) {
                return gram_loss({probe}, {gram(t)});
              },
              x) < 1e-6);
  }
}

// --------------------------------------------------------- style transfer

namespace {

// Two fixed convolutions with ReLU; cheap stand-in for a trained backbone.
FeatureExtractor toy_extractor() {
  std::mt19937_64 rng(77);
  Tensor w1 = rand_uniform({4, 3, 3, 3}, -0.4, 0.4, rng, Dtype::F32);
  Tensor b1 = Tensor::zeros({4}, Dtype::F32);
  Tensor w2 = rand_uniform({6, 4, 3, 3}, -0.3, 0.3, rng, Dtype::F32);
  Tensor b2 = Tensor::zeros({6}, Dtype::F32);
  return [=](const Tensor& img) {
    Tensor f1 = relu(conv2d(img, w1, b1, 1));
    Tensor f2 = relu(conv2d(f1, w2, b2, 1));
    return std::vector<Tensor>{f1, f2};
  };
}

}  // namespace

TEST_CASE("zero steps returns the content image unchanged") {
  std::mt19937_64 rng(13);
  Tensor x = rand_uniform({3, 12, 12}, 0.0, 1.0, rng);
  Tensor s = rand_uniform({3, 12, 12}, 0.0, 1.0, rng);
  StyleTransferConfig cfg;
  cfg.steps = 0;
  auto r = style_transfer(toy_extractor(), x, s, cfg);
  REQUIRE(r.loss_trace.empty());
  REQUIRE(r.image.numel() == x.numel());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(r.image.at(i) == x.at(i));
}

TEST_CASE("styling an image with itself is a fixed point") {
  std::mt19937_64 rng(14);
  Tensor x = rand_uniform({3, 12, 12}, 0.1, 0.9, rng);
  StyleTransferConfig cfg;
  cfg.steps = 5;
  auto r = style_transfer(toy_extractor(), x, x, cfg);
  REQUIRE(r.loss_trace.size() == 5);
  for (double l : r.loss_trace) CHECK(l == doctest::Approx(0.0).epsilon(1e-9));
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(r.image.at(i) == doctest::Approx(x.at(i)).epsilon(1e-6));
}

TEST_CASE("two hundred steps at least halve the transfer objective") {
  // Clean scene vs. its heavily hazed copy. Content is matched at the top
  // tap only (the usual transfer recipe); the step size is sized to the
  // tiny pixel gradients produced by (h*w*c)-normalized Gram matrices.
  FeatureExtractor ex = toy_extractor();
  for (unsigned seed : {11u, 13u, 14u}) {
    SegSample s = generate_scene(seed);
    CorruptionSpec cs;
    cs.kind = "haze";
    cs.severity = 5;
    cs.seed = 5;
    Tensor hazy = corrupt(s.image, cs);
    StyleTransferConfig cfg;
    cfg.steps = 200;
    cfg.lr = 256.0;
    cfg.content_taps = {1};
    cfg.style_taps = {0, 1};
    auto r = style_transfer(ex, s.image, hazy, cfg);
    REQUIRE(r.loss_trace.size() == 200);
    CHECK(r.loss_trace.back() < 0.5 * r.loss_trace.front());
    for (int64_t i = 0; i < r.image.numel(); ++i) {
      CHECK(r.image.at(i) >= 0.0);
      CHECK(r.image.at(i) <= 1.0);
    }
  }
}

// ------------------------------------------------------------- gram stats

TEST_CASE("gram stats report extrema, mean, Frobenius norm, and top entries") {
  // 3x3 symmetric matrix with a tie between (0,1)/(1,0) to pin the ordering:
  // value descending, then row ascending, then column ascending.
  Tensor g = Tensor::of({3, 3},
                        {2.0, 5.0, 1.0,  //
                         5.0, 3.0, 0.0,  //
                         1.0, 0.0, 4.0},
                        Dtype::F64);
  GramStats st = gram_stats(g, 4);
  CHECK(st.channels == 3);
  CHECK(st.min == 0.0);
  CHECK(st.max == 5.0);
  CHECK(st.mean == doctest::Approx(21.0 / 9.0).epsilon(1e-12));
  CHECK(st.frobenius ==
        doctest::Approx(std::sqrt(4 + 25 + 1 + 25 + 9 + 0 + 1 + 0 + 16))
            .epsilon(1e-12));
  REQUIRE(st.diagonal.size() == 3);
  CHECK(st.diagonal[0] == 2.0);
  CHECK(st.diagonal[1] == 3.0);
  CHECK(st.diagonal[2] == 4.0);
  REQUIRE(st.top.size() == 4);
  CHECK(st.top[0] == std::tuple<int64_t, int64_t, double>{0, 1, 5.0});
  CHECK(st.top[1] == std::tuple<int64_t, int64_t, double>{1, 0, 5.0});
  CHECK(st.top[2] == std::tuple<int64_t, int64_t, double>{2, 2, 4.0});
  CHECK(st.top[3] == std::tuple<int64_t, int64_t, double>{1, 1, 3.0});
}

TEST_CASE("gram stats top-k is clamped to the number of entries") {
  Tensor g = Tensor::of({1, 1}, {2.5}, Dtype::F64);
  GramStats st = gram_stats(g, 10);
  REQUIRE(st.top.size() == 1);
  CHECK(std::get<2>(st.top[0]) == 2.5);
}
