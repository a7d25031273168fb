#pragma once

#include <cstdint>
#include <functional>
#include <tuple>
#include <vector>

#include "stylelab/tensor.hpp"

namespace stylelab {

/// Normalized Gram matrix of a c x h x w feature map: with X the c x (h*w)
/// flattening, G = X X^T / (h*w*c). Symmetric positive semi-definite, c x c.
/// Differentiable.
Tensor gram(const Tensor& fmap);

/// Sum over layers of ||A_l - B_l||_F^2 / (c_l*h_l*w_l) between two stacks
/// of feature maps. Differentiable.
Tensor content_loss(const std::vector<Tensor>& feats,
                    const std::vector<Tensor>& ref_feats);

/// Sum over layers of ||gram(F_l) - gram(S_l)||_F^2 between two stacks of
/// feature maps; spatial sizes may differ per layer, channel counts must
/// match. Differentiable.
Tensor style_loss(const std::vector<Tensor>& feats,
                  const std::vector<Tensor>& style_feats);

/// Style-retention score for a style-removal layer:
///   1 - (1/L) * sum_l mean(G_in_l - G_out_l) / max(G_in_l).
/// Equal Gram matrices give exactly 1; a layer that zeroes a constant Gram
/// matrix gives 0. Layers whose incoming Gram peak is <= 1e-12 are skipped.
/// Differentiable through the mean and the max.
Tensor gram_loss(const std::vector<Tensor>& grams_in,
                 const std::vector<Tensor>& grams_out);

// -------------------------------------------------------- style transfer

/// Maps an image to the feature maps used for content/style matching.
using FeatureExtractor = std::function<std::vector<Tensor>(const Tensor&)>;

struct StyleTransferConfig {
  int64_t steps = 200;
  double lr = 0.25;  // gradient-descent step size on the pixels
  // Indices into the extractor's output; empty means every tapped layer.
  std::vector<std::size_t> content_taps;
  std::vector<std::size_t> style_taps;
};

struct StyleTransferResult {
  Tensor image;                    // optimized image, clamped to [0, 1]
  std::vector<double> loss_trace;  // total loss after each step
};

/// Gradient descent on the pixels of a copy of `content_image`, minimizing
/// content_loss against the content image plus style_loss against the style
/// image. Pixels are clamped to [0, 1] after every step. Throws when the
/// loss becomes non-finite.
StyleTransferResult style_transfer(const FeatureExtractor& extract,
                                   const Tensor& content_image,
                                   const Tensor& style_image,
                                   const StyleTransferConfig& cfg);

// ------------------------------------------------------------- analytics

struct GramStats {
  int64_t channels = 0;
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double frobenius = 0.0;  // sqrt of sum of squares
  std::vector<double> diagonal;
  std::vector<std::tuple<int64_t, int64_t, double>> top;  // (row, col, value)
};

/// Summary statistics plus the top_k largest entries (value descending,
/// row/column ascending on ties — the same ranking the filters use).
GramStats gram_stats(const Tensor& gram_matrix, int64_t top_k);

}  // namespace stylelab
