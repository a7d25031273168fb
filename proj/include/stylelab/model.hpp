#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stylelab/filters.hpp"
#include "stylelab/nn.hpp"
#include "stylelab/style.hpp"
#include "stylelab/styleless.hpp"
#include "stylelab/tensor.hpp"

namespace stylelab {

/// What a forward pass should return beyond the logits, and the optional
/// evaluation-time feature perturbation.
struct ForwardOptions {
  bool want_taps = false;   // collect the feature map at every block output
  bool want_grams = false;  // collect (gram_in, gram_out) per style layer
  // Perturbation applied to each tapped feature map before it is handed to
  // the (optional) style-removal layer and the rest of the network.
  const FilterConfig* filter = nullptr;
  std::vector<int> filter_layers;  // tap indices; empty = all taps
};

struct ForwardResult {
  Tensor logits;  // num_classes x H x W
  std::vector<Tensor> taps;
  std::vector<Tensor> grams_in, grams_out;
};

/// Small encoder-decoder segmentation net: a 3x3 stem, four residual blocks
/// (two of them behind stride-2 1x1 transitions), a fixed bilinear 4x
/// upsample, and a 1x1 classifier head. Style-removal layers can be inserted
/// after each residual block; they start as exact identities.
///
/// Architectures:
///   toyseg-v1       block widths {16, 32, 32, 64}
///   toyseg-wide-v1  block widths {17, 32, 32, 65}; parameter count matches
///                   toyseg-v1 plus its style-removal layers (within 0.2%),
///                   for capacity-controlled comparisons
class ToySegNet {
 public:
  static constexpr int kNumClasses = 4;
  static constexpr int kBlocks = 4;

  ToySegNet() = default;
  static ToySegNet make(const std::string& arch);

  const std::string& arch() const { return arch_; }
  const std::vector<int64_t>& widths() const { return widths_; }
  bool has_styleless() const { return styleless_present_; }

  /// Fresh Xavier weights for the backbone, deterministic in seed.
  void init(std::uint64_t seed);

  /// Appends one style-removal layer after every residual block (entry/mid
  /// convs freshly initialized from `seed`, exit convs zero so the network's
  /// outputs are untouched). Throws if layers are already present.
  void insert_styleless(std::uint64_t seed);

  ForwardResult forward(const Tensor& image,
                        const ForwardOptions& opts = {}) const;
  Tensor logits(const Tensor& image) const;
  /// Feature maps at the block outputs (post style-removal if present).
  std::vector<Tensor> extract_taps(const Tensor& image) const;

  std::vector<Param*> parameters();
  std::vector<const Param*> parameters() const;
  int64_t parameter_count() const;
  int64_t parameter_count(ParamGroup g) const;

  /// Order-insensitive fingerprint of the architecture + shapes; stored in
  /// checkpoints and embedded in evaluation reports.
  std::uint64_t config_hash() const;

  // Layers are public so tests and tools can poke at them directly.
  ConvLayer stem;
  ResidualBlock block1, block2, block3, block4;
  ConvLayer trans1, trans2, trans3;
  ConvLayer head;
  std::vector<StylelessLayer> style_layers;  // one per block when present

 private:
  std::string arch_;
  std::vector<int64_t> widths_;
  bool styleless_present_ = false;
};

// ------------------------------------------------------------ checkpoints

struct CheckpointMeta {
  int stage = 0;  // 0 untrained, 1 task-trained, 2 fine-tuned
  std::uint64_t seed = 0;
};

/// Directory layout: manifest.json (arch id, stage, seed, config hash,
/// parameter table with group tags, insertion map) + one tensor file per
/// parameter. save -> load -> save reproduces every byte.
void save_checkpoint(const ToySegNet& net, const CheckpointMeta& meta,
                     const std::string& dir);

struct LoadedCheckpoint {
  ToySegNet net;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& dir);

/// FNV-1a over manifest.json plus every parameter file, in manifest order.
std::uint64_t checkpoint_hash(const std::string& dir);
std::string hash_hex(std::uint64_t h);

/// Pixel-space analog of the paper's optimization: see style_transfer in
/// style.hpp; features come from the net's block taps.
StyleTransferResult style_transfer_with_net(const ToySegNet& net,
                                            const Tensor& content_image,
                                            const Tensor& style_image,
                                            int64_t steps, double step_size);

}  // namespace stylelab
