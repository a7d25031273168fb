#include "stylelab/style.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stylelab {

Tensor gram(const Tensor& fmap) {
  if (!fmap.defined() || fmap.ndim() != 3)
    throw std::invalid_argument("gram: feature map must be CxHxW, got " +
                                (fmap.defined() ? fmap.shape_str() : "?"));
  const int64_t c = fmap.dim(0), h = fmap.dim(1), w = fmap.dim(2);
  Tensor x = reshape(fmap, {c, h * w});
  Tensor g = matmul(x, transpose2d(x));
  return scale(g, 1.0 / static_cast<double>(h * w * c));
}

Tensor content_loss(const std::vector<Tensor>& feats,
                    const std::vector<Tensor>& ref_feats) {
  if (feats.size() != ref_feats.size() || feats.empty())
    throw std::invalid_argument("content_loss: got " +
                                std::to_string(feats.size()) + " and " +
                                std::to_string(ref_feats.size()) + " layers");
  Tensor total;
  for (std::size_t l = 0; l < feats.size(); ++l) {
    const Tensor& f = feats[l];
    if (f.ndim() != 3)
      throw std::invalid_argument("content_loss: layer " + std::to_string(l) +
                                  " is not CxHxW: " + f.shape_str());
    const double norm =
        static_cast<double>(f.dim(0) * f.dim(1) * f.dim(2));
    Tensor term = scale(frobenius_sq(sub(f, ref_feats[l])), 1.0 / norm);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

Tensor style_loss(const std::vector<Tensor>& feats,
                  const std::vector<Tensor>& style_feats) {
  if (feats.size() != style_feats.size() || feats.empty())
    throw std::invalid_argument("style_loss: got " +
                                std::to_string(feats.size()) + " and " +
                                std::to_string(style_feats.size()) +
                                " layers");
  Tensor total;
  for (std::size_t l = 0; l < feats.size(); ++l) {
    if (feats[l].ndim() != 3 || style_feats[l].ndim() != 3 ||
        feats[l].dim(0) != style_feats[l].dim(0))
      throw std::invalid_argument(
          "style_loss: layer " + std::to_string(l) + " channel mismatch " +
          feats[l].shape_str() + " vs " + style_feats[l].shape_str());
    Tensor term = frobenius_sq(sub(gram(feats[l]), gram(style_feats[l])));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

Tensor gram_loss(const std::vector<Tensor>& grams_in,
                 const std::vector<Tensor>& grams_out) {
  if (grams_in.size() != grams_out.size() || grams_in.empty())
    throw std::invalid_argument("gram_loss: got " +
                                std::to_string(grams_in.size()) + " and " +
                                std::to_string(grams_out.size()) + " layers");
  const Dtype dt = grams_in[0].dtype();
  Tensor acc;
  for (std::size_t l = 0; l < grams_in.size(); ++l) {
    const Tensor& gi = grams_in[l];
    const Tensor& go = grams_out[l];
    if (!gi.same_shape(go))
      throw std::invalid_argument("gram_loss: layer " + std::to_string(l) +
                                  " shape mismatch " + gi.shape_str() +
                                  " vs " + go.shape_str());
    // A degenerate (all-but-zero) incoming Gram matrix carries no style to
    // remove; skip it rather than divide by ~0.
    double peak = gi.at(0);
    for (int64_t i = 1; i < gi.numel(); ++i) peak = std::max(peak, gi.at(i));
    if (peak <= 1e-12) continue;
    Tensor term = div(mean_all(sub(gi, go)), max_all(gi));
    acc = acc.defined() ? add(acc, term) : term;
  }
  Tensor one = Tensor::scalar(1.0, dt);
  if (!acc.defined()) return one;
  return sub(one, scale(acc, 1.0 / static_cast<double>(grams_in.size())));
}

StyleTransferResult style_transfer(const FeatureExtractor& extract,
                                   const Tensor& content_image,
                                   const Tensor& style_image,
                                   const StyleTransferConfig& cfg) {
  if (!content_image.defined() || content_image.ndim() != 3)
    throw std::invalid_argument("style_transfer: content image must be CxHxW");
  if (!style_image.defined() || style_image.ndim() != 3)
    throw std::invalid_argument("style_transfer: style image must be CxHxW");
  if (cfg.steps < 0)
    throw std::invalid_argument("style_transfer: negative step count");

  auto pick = [](const std::vector<Tensor>& feats,
                 const std::vector<std::size_t>& taps) {
    if (taps.empty()) return feats;
    std::vector<Tensor> out;
    for (std::size_t i : taps) {
      if (i >= feats.size())
        throw std::invalid_argument("style_transfer: tap index " +
                                    std::to_string(i) + " out of range");
      out.push_back(feats[i]);
    }
    return out;
  };

  // Fixed targets; no gradient flows into them.
  std::vector<Tensor> content_ref, style_ref;
  {
    std::vector<Tensor> cf = pick(extract(content_image), cfg.content_taps);
    for (Tensor& t : cf) content_ref.push_back(t.detach());
    std::vector<Tensor> sf = pick(extract(style_image), cfg.style_taps);
    for (Tensor& t : sf) style_ref.push_back(t.detach());
  }

  StyleTransferResult res;
  res.image = content_image.clone();
  for (int64_t step = 0; step < cfg.steps; ++step) {
    Tensor img = res.image;
    img.set_requires_grad(true);
    double loss_val = 0.0;
    {
      TapeScope ts;
      std::vector<Tensor> feats = extract(img);
      Tensor loss =
          add(content_loss(pick(feats, cfg.content_taps), content_ref),
              style_loss(pick(feats, cfg.style_taps), style_ref));
      loss_val = loss.item();
      if (!std::isfinite(loss_val))
        throw std::runtime_error("style_transfer: loss became " +
                                 std::to_string(loss_val) + " at step " +
                                 std::to_string(step));
      backward(loss);
    }
    Tensor g = img.grad();
    for (int64_t i = 0; i < img.numel(); ++i) {
      const double v = img.at(i) - cfg.lr * g.at(i);
      img.set(i, std::clamp(v, 0.0, 1.0));
    }
    img.set_requires_grad(false);
    img.zero_grad();
    res.loss_trace.push_back(loss_val);
  }
  return res;
}

GramStats gram_stats(const Tensor& gram_matrix, int64_t top_k) {
  if (!gram_matrix.defined() || gram_matrix.ndim() != 2 ||
      gram_matrix.dim(0) != gram_matrix.dim(1))
    throw std::invalid_argument("gram_stats: expects a square matrix");
  const int64_t c = gram_matrix.dim(0);
  GramStats s;
  s.channels = c;
  double sum = 0.0, sq = 0.0;
  double mx = gram_matrix.at(0), mn = gram_matrix.at(0);
  for (int64_t i = 0; i < c * c; ++i) {
    const double v = gram_matrix.at(i);
    sum += v;
    sq += v * v;
    mx = std::max(mx, v);
    mn = std::min(mn, v);
  }
  s.mean = sum / static_cast<double>(c * c);
  s.min = mn;
  s.max = mx;
  s.frobenius = std::sqrt(sq);
  s.diagonal.reserve(static_cast<std::size_t>(c));
  for (int64_t i = 0; i < c; ++i) s.diagonal.push_back(gram_matrix.at(i * c + i));

  std::vector<std::tuple<int64_t, int64_t, double>> entries;
  entries.reserve(static_cast<std::size_t>(c * c));
  for (int64_t r = 0; r < c; ++r)
    for (int64_t col = 0; col < c; ++col)
      entries.emplace_back(r, col, gram_matrix.at(r * c + col));
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (std::get<2>(a) != std::get<2>(b)) return std::get<2>(a) > std::get<2>(b);
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
    return std::get<1>(a) < std::get<1>(b);
  });
  const auto keep = static_cast<std::size_t>(
      std::min<int64_t>(top_k, static_cast<int64_t>(entries.size())));
  s.top.assign(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(keep));
  return s;
}

}  // namespace stylelab
