#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stylelab/nn.hpp"
#include "stylelab/tensor.hpp"

namespace stylelab {

/// Residual bottleneck inserted into a trained backbone to learn style
/// removal: F_out = F_in + exit(relu(mid(relu(entry(F_in))))), with a 1x1
/// entry conv down to the bottleneck width, a 3x3 conv inside it, and a 1x1
/// exit conv back up. The exit conv starts at zero, so a freshly inserted
/// layer is an exact identity and leaves the host model's outputs untouched.
struct StylelessLayer {
  ConvLayer entry, mid, exit_conv;
  int64_t channels = 0;
  int64_t bottleneck = 0;

  StylelessLayer() = default;
  StylelessLayer(const std::string& name, int64_t channels);
  StylelessLayer(const std::string& name, int64_t channels,
                 int64_t bottleneck);

  /// max(4, channels / 8); keeps the add-on under ~3% of the host's budget.
  static int64_t default_bottleneck(int64_t channels);

  Tensor forward(const Tensor& f_in) const;
  void collect(std::vector<Param*>& out);
  int64_t param_count() const;
};

/// Forward pass that also reports the Gram matrices before and after the
/// layer, the pair the style-retention loss is computed from. Differentiable.
struct StylelessTrace {
  Tensor f_out;
  Tensor gram_in;
  Tensor gram_out;
};

StylelessTrace styleless_forward(const StylelessLayer& layer,
                                 const Tensor& f_in);

}  // namespace stylelab
