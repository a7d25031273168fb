#include "stylelab/filters.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <tuple>

#include "stylelab/kernels.hpp"
#include "stylelab/style.hpp"

namespace stylelab {

namespace {

void check_fmap(const Tensor& fmap, const char* op) {
  if (!fmap.defined() || fmap.ndim() != 3)
    throw std::invalid_argument(std::string(op) +
                                ": feature map must be CxHxW");
}

Tensor own_gram(const Tensor& fmap) { return gram(fmap.detach()); }

}  // namespace

FilterKind filter_kind_from_string(const std::string& s) {
  if (s == "none") return FilterKind::None;
  if (s == "remove") return FilterKind::Remove;
  if (s == "weighting") return FilterKind::Weighting;
  if (s == "noise") return FilterKind::Noise;
  throw std::invalid_argument("unknown filter kind '" + s +
                              "' (none|remove|weighting|noise)");
}

const char* filter_kind_name(FilterKind k) {
  switch (k) {
    case FilterKind::None:
      return "none";
    case FilterKind::Remove:
      return "remove";
    case FilterKind::Weighting:
      return "weighting";
    case FilterKind::Noise:
      return "noise";
  }
  return "?";
}

std::vector<int64_t> select_phi(const Tensor& gram_matrix, double percent) {
  if (!gram_matrix.defined() || gram_matrix.ndim() != 2 ||
      gram_matrix.dim(0) != gram_matrix.dim(1))
    throw std::invalid_argument("select_phi: expects a square Gram matrix");
  if (percent < 0.0 || percent > 100.0)
    throw std::invalid_argument("select_phi: percent " +
                                std::to_string(percent) + " outside [0, 100]");
  const int64_t c = gram_matrix.dim(0);
  const int64_t total = c * c;
  const auto m = static_cast<int64_t>(
      std::ceil(percent / 100.0 * static_cast<double>(total)));

  std::vector<std::tuple<double, int64_t, int64_t>> entries;
  entries.reserve(static_cast<std::size_t>(total));
  for (int64_t r = 0; r < c; ++r)
    for (int64_t col = 0; col < c; ++col)
      entries.emplace_back(gram_matrix.at(r * c + col), r, col);
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b))
      return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b))
      return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });

  std::vector<bool> in(static_cast<std::size_t>(c), false);
  for (int64_t e = 0; e < std::min(m, total); ++e) {
    const auto& ent = entries[static_cast<std::size_t>(e)];
    in[static_cast<std::size_t>(std::get<1>(ent))] = true;
    in[static_cast<std::size_t>(std::get<2>(ent))] = true;
  }
  std::vector<int64_t> phi;
  for (int64_t i = 0; i < c; ++i)
    if (in[static_cast<std::size_t>(i)]) phi.push_back(i);
  return phi;
}

Tensor gram_remove(const Tensor& fmap, double percent) {
  check_fmap(fmap, "gram_remove");
  const std::vector<int64_t> phi = select_phi(own_gram(fmap), percent);
  const int64_t hw = fmap.dim(1) * fmap.dim(2);
  Tensor out = fmap.clone();
  for (int64_t ch : phi)
    for (int64_t p = 0; p < hw; ++p) out.set(ch * hw + p, 0.0);
  return out;
}

Tensor gram_weighting(const Tensor& fmap) {
  check_fmap(fmap, "gram_weighting");
  const int64_t c = fmap.dim(0);
  const int64_t hw = fmap.dim(1) * fmap.dim(2);
  const Tensor g = own_gram(fmap);

  double dmax = 0.0;
  for (int64_t i = 0; i < c; ++i) dmax = std::max(dmax, g.at(i * c + i));
  Tensor out = fmap.clone();
  if (dmax <= 1e-12) return out;

  for (int64_t ch = 0; ch < c; ++ch) {
    const double w = 1.0 - g.at(ch * c + ch) / dmax;
    for (int64_t p = 0; p < hw; ++p)
      out.set(ch * hw + p, fmap.at(ch * hw + p) * w);
  }
  return out;
}

Tensor gram_noise(const Tensor& fmap, double percent, double tau,
                  std::uint64_t seed) {
  check_fmap(fmap, "gram_noise");
  if (!(tau > 0.0))
    throw std::invalid_argument("gram_noise: tau must be positive, got " +
                                std::to_string(tau));
  const int64_t c = fmap.dim(0);
  const int64_t hw = fmap.dim(1) * fmap.dim(2);
  const Tensor g = own_gram(fmap);
  const std::vector<int64_t> phi = select_phi(g, percent);
  if (phi.empty()) return fmap.clone();

  // Per-channel population std over spatial positions.
  std::vector<double> sigma(static_cast<std::size_t>(c));
  for (int64_t ch = 0; ch < c; ++ch) {
    double s = 0.0, s2 = 0.0;
    for (int64_t p = 0; p < hw; ++p) {
      const double v = fmap.at(ch * hw + p);
      s += v;
      s2 += v * v;
    }
    const double m = s / static_cast<double>(hw);
    sigma[static_cast<std::size_t>(ch)] =
        std::sqrt(std::max(0.0, s2 / static_cast<double>(hw) - m * m));
  }

  // E is (h*w) x c drawn row-major; D = E * G keeps that layout.
  const double inv_sqrt_tau = 1.0 / std::sqrt(tau);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<double> noise(static_cast<std::size_t>(hw * c));
  for (int64_t p = 0; p < hw; ++p)
    for (int64_t j = 0; j < c; ++j)
      noise[static_cast<std::size_t>(p * c + j)] =
          unit(rng) * sigma[static_cast<std::size_t>(j)] * inv_sqrt_tau;

  std::vector<double> gmat(static_cast<std::size_t>(c * c));
  for (int64_t i = 0; i < c * c; ++i)
    gmat[static_cast<std::size_t>(i)] = g.at(i);
  std::vector<double> delta(static_cast<std::size_t>(hw * c));
  kernels::ref::matmul<double>(noise.data(), gmat.data(), delta.data(), hw, c,
                               c);

  Tensor out = fmap.clone();
  for (int64_t ch : phi)
    for (int64_t p = 0; p < hw; ++p)
      out.set(ch * hw + p, fmap.at(ch * hw + p) +
                               delta[static_cast<std::size_t>(p * c + ch)]);
  return out;
}

Tensor apply_filter(const Tensor& fmap, const FilterConfig& cfg,
                    int64_t layer_index) {
  switch (cfg.kind) {
    case FilterKind::None:
      return fmap;
    case FilterKind::Remove:
      return gram_remove(fmap, cfg.percent);
    case FilterKind::Weighting:
      return gram_weighting(fmap);
    case FilterKind::Noise:
      return gram_noise(fmap, cfg.percent, cfg.tau,
                        cfg.seed ^ (0x9E3779B97F4A7C15ULL *
                                    static_cast<std::uint64_t>(layer_index + 1)));
  }
  return fmap;
}

}  // namespace stylelab
