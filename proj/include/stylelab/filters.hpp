#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stylelab/tensor.hpp"

namespace stylelab {

/// Training-free feature perturbations steered by the Gram matrix of the
/// map they act on. Applied at evaluation/analysis time to probe how much a
/// model leans on style statistics; never differentiated through.
enum class FilterKind { None, Remove, Weighting, Noise };

FilterKind filter_kind_from_string(const std::string& s);
const char* filter_kind_name(FilterKind k);

struct FilterConfig {
  FilterKind kind = FilterKind::None;
  double percent = 10.0;   // P: share of Gram entries that select channels
  double tau = 4.0;        // noise attenuation (> 0; higher = weaker noise)
  std::uint64_t seed = 0;  // base seed; per-layer streams derive from it
};

/// Channels implicated in the strongest Gram correlations: rank all c*c
/// entries by value (descending; ties broken by ascending row, then column),
/// keep the top ceil(percent/100 * c*c), and return the sorted union of
/// their row and column indices. Growing percent never drops a channel.
std::vector<int64_t> select_phi(const Tensor& gram_matrix, double percent);

/// Zeroes the channels selected by the top-percent Gram entries of the
/// map's own Gram matrix; other channels are copied bit-identically.
Tensor gram_remove(const Tensor& fmap, double percent);

/// Scales channel i by 1 - d_i / max(d), where d is the Gram diagonal:
/// the channel with the most style energy is fully suppressed, quiet
/// channels pass almost unchanged. A degenerate diagonal (max <= 1e-12)
/// returns the input unchanged.
Tensor gram_weighting(const Tensor& fmap);

/// Adds Gram-correlated noise to the selected channels. With s_j the
/// per-channel population std over spatial positions, draws
/// E[p][j] ~ N(0, s_j^2 / tau) row-major from the seed and forms
/// D = E * G; channel i receives D[:, i] when i is in the top-percent
/// selection. Var(D[p][i]) = sum_j s_j^2 G_ji^2 / tau.
Tensor gram_noise(const Tensor& fmap, double percent, double tau,
                  std::uint64_t seed);

/// Applies the configured filter to one tapped feature map. The noise
/// stream is derived from (seed, layer_index), so evaluations reproduce
/// layer by layer.
Tensor apply_filter(const Tensor& fmap, const FilterConfig& cfg,
                    int64_t layer_index);

}  // namespace stylelab
