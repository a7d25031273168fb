#include "stylelab/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

#include "json.hpp"
#include "stylelab/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace stylelab {

namespace {

constexpr int H = kSceneSize;
constexpr int W = kSceneSize;

inline float& px(Tensor& img, int c, int y, int x) {
  return img.f32()[static_cast<std::size_t>((c * H + y) * W + x)];
}

inline float clamp01(double v) {
  return static_cast<float>(std::clamp(v, 0.0, 1.0));
}

// Seeded value noise: a coarse lattice of uniform values, bilinearly
// interpolated to the full resolution.
struct ValueNoise {
  int cells;
  std::vector<double> grid;  // (cells+1)^2
  ValueNoise(int cells_, double amp, std::mt19937_64& rng) : cells(cells_) {
    std::uniform_real_distribution<double> d(-amp, amp);
    grid.resize(static_cast<std::size_t>((cells + 1) * (cells + 1)));
    for (double& g : grid) g = d(rng);
  }
  double at(int y, int x) const {
    const double gy = static_cast<double>(y) / H * cells;
    const double gx = static_cast<double>(x) / W * cells;
    const int iy = std::min(static_cast<int>(gy), cells - 1);
    const int ix = std::min(static_cast<int>(gx), cells - 1);
    const double fy = gy - iy, fx = gx - ix;
    const int s = cells + 1;
    const double v00 = grid[static_cast<std::size_t>(iy * s + ix)];
    const double v01 = grid[static_cast<std::size_t>(iy * s + ix + 1)];
    const double v10 = grid[static_cast<std::size_t>((iy + 1) * s + ix)];
    const double v11 = grid[static_cast<std::size_t>((iy + 1) * s + ix + 1)];
    return (1 - fy) * ((1 - fx) * v00 + fx * v01) +
           fy * ((1 - fx) * v10 + fx * v11);
  }
};

int pick_count(std::mt19937_64& rng, double p0, double p1, double p2) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  const double u = d(rng);
  if (u < p0) return 0;
  if (u < p0 + p1) return 1;
  if (u < p0 + p1 + p2) return 2;
  return 3;
}

struct RoadShape {
  int top_row;
  double top_cx, top_hw;   // center / half-width at top_row
  double bot_cx, bot_hw;   // at row H-1
  double cx(int r) const {
    const double t = static_cast<double>(r - top_row) / (H - 1 - top_row);
    return top_cx + (bot_cx - top_cx) * t;
  }
  double hw(int r) const {
    const double t = static_cast<double>(r - top_row) / (H - 1 - top_row);
    return top_hw + (bot_hw - top_hw) * t;
  }
};

void separable_gauss_blur(Tensor& img, double sigma) {
  if (sigma <= 1e-12) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] =
        std::exp(-static_cast<double>(i) * i / (2.0 * sigma * sigma));
    norm += k[static_cast<std::size_t>(i + radius)];
  }
  for (double& v : k) v /= norm;

  const int h = static_cast<int>(img.dim(1)), w = static_cast<int>(img.dim(2));
  std::vector<float> tmp(static_cast<std::size_t>(h * w));
  auto at = [&](int c, int y, int x) -> float& {
    return img.f32()[static_cast<std::size_t>((c * h + y) * w + x)];
  };
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y)  // horizontal, replicate edges
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[static_cast<std::size_t>(i + radius)] *
                 at(c, y, std::clamp(x + i, 0, w - 1));
        tmp[static_cast<std::size_t>(y * w + x)] = static_cast<float>(acc);
      }
    for (int y = 0; y < h; ++y)  // vertical
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[static_cast<std::size_t>(i + radius)] *
                 tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1) * w + x)];
        at(c, y, x) = clamp01(acc);
      }
  }
}

}  // namespace

SegSample generate_scene(std::uint64_t seed) {
  std::mt19937_64 master(seed);
  // One child stream per section, drawn up front, so the amount of geometry
  // painted in one section cannot shift the draws of the next.
  std::mt19937_64 bg_rng(master());
  std::mt19937_64 road_rng(master());
  std::mt19937_64 veh_rng(master());
  std::mt19937_64 vul_rng(master());

  SegSample s;
  s.scene_seed = seed;
  s.image = Tensor::zeros({3, H, W}, Dtype::F32);
  s.labels = Tensor::zeros({H, W}, Dtype::F32);

  // Background: tinted two-octave value noise.
  {
    std::uniform_real_distribution<double> base_d(0.25, 0.65);
    const double base[3] = {base_d(bg_rng), base_d(bg_rng), base_d(bg_rng)};
    ValueNoise coarse(8, 0.18, bg_rng);
    ValueNoise fine(16, 0.08, bg_rng);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double n = coarse.at(y, x) + fine.at(y, x);
        for (int c = 0; c < 3; ++c)
          px(s.image, c, y, x) = clamp01(base[c] + n);
      }
  }

  // Road: bottom-anchored trapezoid, class 1.
  RoadShape road{};
  {
    std::uniform_int_distribution<int> top_row_d(18, 30), top_cx_d(26, 38),
        top_hw_d(3, 7), bot_cx_d(24, 40), bot_hw_d(14, 24);
    road.top_row = top_row_d(road_rng);
    road.top_cx = top_cx_d(road_rng);
    road.top_hw = top_hw_d(road_rng);
    road.bot_cx = bot_cx_d(road_rng);
    road.bot_hw = bot_hw_d(road_rng);
    std::uniform_real_distribution<double> tone_d(0.30, 0.38);
    const double tone = tone_d(road_rng);
    ValueNoise grain(16, 0.03, road_rng);
    for (int r = road.top_row; r < H; ++r) {
      const int x0 = std::max(0, static_cast<int>(std::ceil(road.cx(r) - road.hw(r))));
      const int x1 = std::min(W - 1, static_cast<int>(std::floor(road.cx(r) + road.hw(r))));
      for (int x = x0; x <= x1; ++x) {
        const double g = tone + grain.at(r, x);
        for (int c = 0; c < 3; ++c) px(s.image, c, r, x) = clamp01(g);
        s.labels.f32()[static_cast<std::size_t>(r * W + x)] = 1.0f;
      }
    }
  }

  // Vehicles: shaded rectangles on the road, class 2.
  {
    const int count = pick_count(veh_rng, 0.015, 0.415, 0.37);
    std::uniform_int_distribution<int> row_d(road.top_row + 6, H - 6);
    std::uniform_int_distribution<int> vw_d(6, 13), vh_d(4, 9), chan_d(0, 2);
    std::uniform_real_distribution<double> hi_d(0.45, 0.85), lo_d(0.08, 0.40);
    for (int v = 0; v < count; ++v) {
      const int rv = row_d(veh_rng);
      const int vw = vw_d(veh_rng), vh = vh_d(veh_rng);
      const double cx = road.cx(rv), hw = road.hw(rv);
      std::uniform_int_distribution<int> off_d(-static_cast<int>(hw),
                                               static_cast<int>(hw));
      const int xc = std::clamp(static_cast<int>(cx) + off_d(veh_rng),
                                1 + vw / 2, W - 2 - vw / 2);
      const int dominant = chan_d(veh_rng);
      double col[3];
      for (int c = 0; c < 3; ++c)
        col[c] = (c == dominant) ? hi_d(veh_rng) : lo_d(veh_rng);
      const int y0 = std::max(0, rv - vh), y1 = std::min(H - 1, rv);
      const int x0 = xc - vw / 2, x1 = x0 + vw - 1;
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double band = (y - y0 < (y1 - y0 + 1) * 2 / 5) ? 0.12
                              : (y == y1)                      ? -0.14
                                                               : -0.04;
          for (int c = 0; c < 3; ++c)
            px(s.image, c, y, x) = clamp01(col[c] + band);
          s.labels.f32()[static_cast<std::size_t>(y * W + x)] = 2.0f;
        }
    }
  }

  // Vulnerables: small ellipses hugging the road edges, class 3.
  {
    const int count = pick_count(vul_rng, 0.015, 0.515, 0.32);
    std::uniform_int_distribution<int> row_d(road.top_row + 4, H - 4);
    std::uniform_int_distribution<int> side_d(0, 1), gap_d(1, 4), rx_d(1, 2),
        dy_d(1, 3);
    std::uniform_real_distribution<double> r_d(0.55, 0.90), g_d(0.30, 0.60),
        b_d(0.20, 0.50);
    for (int v = 0; v < count; ++v) {
      const int rv = row_d(vul_rng);
      const int side = side_d(vul_rng);
      const int gap = gap_d(vul_rng);
      const int rx = rx_d(vul_rng);
      const int ry = rx + dy_d(vul_rng);
      const double edge =
          road.cx(rv) + (side ? road.hw(rv) + gap : -road.hw(rv) - gap);
      const int xc = std::clamp(static_cast<int>(edge), 2, W - 3);
      const double col[3] = {r_d(vul_rng), g_d(vul_rng), b_d(vul_rng)};
      for (int y = std::max(0, rv - ry); y <= std::min(H - 1, rv + ry); ++y)
        for (int x = std::max(0, xc - rx); x <= std::min(W - 1, xc + rx); ++x) {
          const double dx = static_cast<double>(x - xc) / rx;
          const double dy = static_cast<double>(y - rv) / ry;
          if (dx * dx + dy * dy > 1.0) continue;
          for (int c = 0; c < 3; ++c)
            px(s.image, c, y, x) = clamp01(col[c]);
          s.labels.f32()[static_cast<std::size_t>(y * W + x)] = 3.0f;
        }
    }
  }

  return s;
}

// -------------------------------------------------------------- corruption

const std::vector<std::string>& corruption_kinds() {
  static const std::vector<std::string> kinds = {
      "haze", "rain", "gauss-noise", "gauss-blur", "contrast"};
  return kinds;
}

Tensor corrupt_strength(const Tensor& image, const std::string& kind,
                        double strength, std::uint64_t seed) {
  if (!image.defined() || image.ndim() != 3 || image.dim(0) != 3 ||
      image.dtype() != Dtype::F32)
    throw std::invalid_argument("corrupt: image must be float32 3xHxW");
  if (strength < 0.0)
    throw std::invalid_argument("corrupt: negative strength");
  const int h = static_cast<int>(image.dim(1));
  const int w = static_cast<int>(image.dim(2));
  Tensor out = image.clone();
  auto at = [&](int c, int y, int x) -> float& {
    return out.f32()[static_cast<std::size_t>((c * h + y) * w + x)];
  };

  if (kind == "haze") {
    // Blend toward white, stronger near the top row (depth proxy).
    const double base = 0.15 * strength;
    const double span = 0.1 * std::min(1.0, strength);
    for (int y = 0; y < h; ++y) {
      const double a =
          base + span * (h > 1 ? static_cast<double>(h - 1 - y) / (h - 1) : 0.0);
      for (int c = 0; c < 3; ++c)
        for (int x = 0; x < w; ++x)
          at(c, y, x) = clamp01(at(c, y, x) * (1.0 - a) + a);
    }
  } else if (kind == "rain") {
    const auto n = static_cast<int>(std::llround(20.0 * strength));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> x_d(0.0, w - 1.0), y_d(0.0, h - 1.0),
        ang_d(70.0, 110.0), len_d(8.0, 16.0);
    std::vector<double> cov(static_cast<std::size_t>(h * w), 0.0);
    for (int k = 0; k < n; ++k) {
      const double x0 = x_d(rng), y0 = y_d(rng);
      const double ang = ang_d(rng) * 3.14159265358979323846 / 180.0;
      const double len = len_d(rng);
      const double dx = std::cos(ang), dy = std::sin(ang);
      for (double t = 0.0; t <= len; t += 0.35) {
        const double fx = x0 + dx * t, fy = y0 + dy * t;
        const int ix = static_cast<int>(std::floor(fx));
        const int iy = static_cast<int>(std::floor(fy));
        const double wx = fx - ix, wy = fy - iy;
        const double w4[4] = {(1 - wx) * (1 - wy), wx * (1 - wy),
                              (1 - wx) * wy, wx * wy};
        const int xs[4] = {ix, ix + 1, ix, ix + 1};
        const int ys[4] = {iy, iy, iy + 1, iy + 1};
        for (int q = 0; q < 4; ++q)
          if (xs[q] >= 0 && xs[q] < w && ys[q] >= 0 && ys[q] < h)
            cov[static_cast<std::size_t>(ys[q] * w + xs[q])] += 0.35 * w4[q];
      }
    }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double a =
            0.5 * std::min(1.0, cov[static_cast<std::size_t>(y * w + x)]);
        if (a <= 0.0) continue;
        for (int c = 0; c < 3; ++c)
          at(c, y, x) = clamp01(at(c, y, x) * (1.0 - a) + a);
      }
    separable_gauss_blur(out, 0.5 * std::min(1.0, strength));
  } else if (kind == "gauss-noise") {
    const double sigma = 0.04 * strength;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n_d(0.0, 1.0);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          at(c, y, x) = clamp01(at(c, y, x) + sigma * n_d(rng));
  } else if (kind == "gauss-blur") {
    separable_gauss_blur(out, 0.5 * strength);
  } else if (kind == "contrast") {
    const double f = 1.0 - 0.15 * strength;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          at(c, y, x) = clamp01(0.5 + (at(c, y, x) - 0.5) * f);
  } else {
    throw std::invalid_argument("corrupt: unknown kind '" + kind + "'");
  }
  return out;
}

Tensor corrupt(const Tensor& image, const CorruptionSpec& spec) {
  if (spec.severity < 1 || spec.severity > 5)
    throw std::invalid_argument("corrupt: severity " +
                                std::to_string(spec.severity) +
                                " outside [1, 5]");
  return corrupt_strength(image, spec.kind, spec.severity, spec.seed);
}

// ---------------------------------------------------------------- datasets

Dataset generate_dataset(const std::string& split, int64_t n,
                         std::uint64_t seed) {
  int offset;
  if (split == "train")
    offset = 0;
  else if (split == "val")
    offset = 1;
  else if (split == "test")
    offset = 2;
  else
    throw std::invalid_argument("generate_dataset: split '" + split +
                                "' (train|val|test)");
  if (n < 1 || n >= (1 << 20))
    throw std::invalid_argument("generate_dataset: n out of range");

  Dataset ds;
  ds.info.split = split;
  ds.info.n = n;
  ds.info.seed = seed;
  ds.info.id =
      split + "-n" + std::to_string(n) + "-seed" + std::to_string(seed);
  const std::uint64_t base =
      seed * (1ULL << 22) + static_cast<std::uint64_t>(offset) * (1ULL << 20);
  ds.samples.reserve(static_cast<std::size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    ds.samples.push_back(generate_scene(base + static_cast<std::uint64_t>(i)));
  return ds;
}

Dataset corrupt_dataset(const Dataset& clean, const CorruptionSpec& spec) {
  Dataset ds;
  ds.info = clean.info;
  ds.info.corrupted = true;
  ds.info.corruption = spec;
  ds.info.id =
      clean.info.id + "+" + spec.kind + std::to_string(spec.severity);
  ds.samples.reserve(clean.samples.size());
  for (std::size_t i = 0; i < clean.samples.size(); ++i) {
    CorruptionSpec s = spec;
    s.seed = spec.seed + i;
    SegSample out;
    out.image = corrupt(clean.samples[i].image, s);
    out.labels = clean.samples[i].labels;
    out.scene_seed = clean.samples[i].scene_seed;
    ds.samples.push_back(std::move(out));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "labels");

  json manifest;
  manifest["format"] = "stylelab-data-v1";
  manifest["id"] = ds.info.id;
  manifest["split"] = ds.info.split;
  manifest["n"] = ds.info.n;
  manifest["seed"] = ds.info.seed;
  manifest["generator"] = ds.info.generator;
  manifest["class_names"] = json::array();
  for (const char* c : kClassNames) manifest["class_names"].push_back(c);
  if (ds.info.corrupted) {
    manifest["corruption"] = {{"kind", ds.info.corruption.kind},
                              {"severity", ds.info.corruption.severity},
                              {"seed", ds.info.corruption.seed}};
  } else {
    manifest["corruption"] = nullptr;
  }

  json samples = json::array();
  char name[32];
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    std::snprintf(name, sizeof name, "%06zu.stls1", i);
    const std::string img_rel = std::string("images/") + name;
    const std::string lab_rel = std::string("labels/") + name;
    io::save_tensor((fs::path(dir) / img_rel).string(), ds.samples[i].image);

    const Tensor& lab = ds.samples[i].labels;
    std::vector<std::uint8_t> lab8(static_cast<std::size_t>(lab.numel()));
    for (int64_t p = 0; p < lab.numel(); ++p)
      lab8[static_cast<std::size_t>(p)] =
          static_cast<std::uint8_t>(std::llround(lab.at(p)));
    io::save_u8((fs::path(dir) / lab_rel).string(), lab.shape(), lab8);

    samples.push_back({{"image", img_rel},
                       {"labels", lab_rel},
                       {"scene_seed", ds.samples[i].scene_seed}});
  }
  manifest["samples"] = samples;

  std::ofstream os(fs::path(dir) / "manifest.json",
                   std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("save_dataset: cannot write " + dir);
  os << manifest.dump(2) << '\n';
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!is)
    throw std::runtime_error("dataset " + dir + ": no manifest.json");
  json manifest;
  try {
    manifest = json::parse(is);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("dataset " + dir +
                             ": corrupt manifest: " + e.what());
  }
  if (manifest.value("format", "") != "stylelab-data-v1")
    throw std::runtime_error("dataset " + dir + ": unknown format");

  Dataset ds;
  ds.info.id = manifest.at("id").get<std::string>();
  ds.info.split = manifest.at("split").get<std::string>();
  ds.info.n = manifest.at("n").get<int64_t>();
  ds.info.seed = manifest.at("seed").get<std::uint64_t>();
  ds.info.generator = manifest.value("generator", kSceneGeneratorVersion);
  if (!manifest.at("corruption").is_null()) {
    ds.info.corrupted = true;
    const json& c = manifest.at("corruption");
    ds.info.corruption.kind = c.at("kind").get<std::string>();
    ds.info.corruption.severity = c.at("severity").get<int>();
    ds.info.corruption.seed = c.at("seed").get<std::uint64_t>();
  }

  for (const json& e : manifest.at("samples")) {
    SegSample s;
    s.image = io::load_tensor(
        (fs::path(dir) / e.at("image").get<std::string>()).string());
    auto [shape, lab8] = io::load_u8(
        (fs::path(dir) / e.at("labels").get<std::string>()).string());
    s.labels = Tensor::zeros(shape, Dtype::F32);
    for (std::size_t p = 0; p < lab8.size(); ++p)
      s.labels.set(static_cast<int64_t>(p), lab8[p]);
    s.scene_seed = e.value("scene_seed", std::uint64_t{0});
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace stylelab
