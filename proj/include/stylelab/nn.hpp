#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stylelab/tensor.hpp"

namespace stylelab {

/// Parameter group, used for per-group learning-rate multipliers and for
/// counting parameter budgets separately.
enum class ParamGroup : int { Backbone = 0, Styleless = 1 };

const char* param_group_name(ParamGroup g);

struct Param {
  std::string name;
  Tensor value;
  ParamGroup group = ParamGroup::Backbone;
  bool decay = true;       // biases opt out of weight decay
  bool zero_init = false;  // start at zero regardless of shape
};

/// 2-D convolution with bias; padding (k-1)/2 so stride 1 preserves the
/// spatial extents.
struct ConvLayer {
  Param weight;  // cout x cin x k x k
  Param bias;    // cout
  int64_t stride = 1;

  ConvLayer() = default;
  ConvLayer(const std::string& name, int64_t cin, int64_t cout, int64_t k,
            int64_t stride, ParamGroup group);

  Tensor forward(const Tensor& x) const;
  void collect(std::vector<Param*>& out);
  int64_t param_count() const;
};

/// x + conv2(relu(conv1(x))), both convs 3x3 with the same channel width.
/// No activation after the addition, so zero kernels give an exact identity.
struct ResidualBlock {
  ConvLayer conv1, conv2;

  ResidualBlock() = default;
  ResidualBlock(const std::string& name, int64_t channels, ParamGroup group);

  Tensor forward(const Tensor& x) const;
  void collect(std::vector<Param*>& out);
};

/// Xavier/Glorot uniform bound sqrt(6 / (fan_in + fan_out)).
double xavier_bound(int64_t fan_in, int64_t fan_out);

/// Weights (ndim >= 2) get Xavier uniform draws, biases (ndim == 1) zero.
/// Each parameter is filled from its own generator seeded by the master
/// stream in registration order, so layer shapes decouple the draws.
void init_parameters(const std::vector<Param*>& params, std::uint64_t seed);

int64_t count_parameters(const std::vector<Param*>& params);
int64_t count_parameters(const std::vector<Param*>& params, ParamGroup group);

// -------------------------------------------------------------------- sgd

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int64_t total_steps = 0;  // 0 disables the schedule (constant lr)
  double power = 0.9;       // polynomial decay exponent
};

/// lr * (1 - step/total_steps)^power; constant when total_steps == 0,
/// zero once step reaches total_steps.
double poly_lr(const SgdConfig& cfg, int64_t step);

/// Momentum SGD:  v <- momentum*v + grad + weight_decay*p  (decay only where
/// the parameter opts in), then  p <- p - lr(step)*group_mult*v.
class Sgd {
 public:
  Sgd(std::vector<Param*> params, SgdConfig cfg);

  void set_group_multiplier(ParamGroup g, double mult);
  double group_multiplier(ParamGroup g) const;

  void zero_grad();
  void step();

  int64_t step_count() const { return step_; }
  double current_lr() const { return poly_lr(cfg_, step_); }
  const SgdConfig& config() const { return cfg_; }

 private:
  std::vector<Param*> params_;
  std::vector<Tensor> velocity_;
  SgdConfig cfg_;
  double mult_[2] = {1.0, 1.0};
  int64_t step_ = 0;
};

}  // namespace stylelab
