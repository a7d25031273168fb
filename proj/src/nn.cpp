#include "stylelab/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace stylelab {

const char* param_group_name(ParamGroup g) {
  return g == ParamGroup::Backbone ? "backbone" : "styleless";
}

ConvLayer::ConvLayer(const std::string& name, int64_t cin, int64_t cout,
                     int64_t k, int64_t stride_, ParamGroup group) {
  if (cin < 1 || cout < 1)
    throw std::invalid_argument("ConvLayer " + name +
                                ": channel counts must be >= 1");
  if (k < 1 || k % 2 == 0)
    throw std::invalid_argument("ConvLayer " + name +
                                ": kernel size must be odd (got " +
                                std::to_string(k) + ")");
  if (stride_ < 1)
    throw std::invalid_argument("ConvLayer " + name + ": stride must be >= 1");
  weight.name = name + ".weight";
  weight.value = Tensor::zeros({cout, cin, k, k}, Dtype::F32, true);
  weight.group = group;
  weight.decay = true;
  bias.name = name + ".bias";
  bias.value = Tensor::zeros({cout}, Dtype::F32, true);
  bias.group = group;
  bias.decay = false;
  stride = stride_;
}

Tensor ConvLayer::forward(const Tensor& x) const {
  return conv2d(x, weight.value, bias.value, stride);
}

void ConvLayer::collect(std::vector<Param*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

int64_t ConvLayer::param_count() const {
  return weight.value.numel() + bias.value.numel();
}

ResidualBlock::ResidualBlock(const std::string& name, int64_t channels,
                             ParamGroup group)
    : conv1(name + ".conv1", channels, channels, 3, 1, group),
      conv2(name + ".conv2", channels, channels, 3, 1, group) {}

Tensor ResidualBlock::forward(const Tensor& x) const {
  return add(x, conv2.forward(relu(conv1.forward(x))));
}

void ResidualBlock::collect(std::vector<Param*>& out) {
  conv1.collect(out);
  conv2.collect(out);
}

double xavier_bound(int64_t fan_in, int64_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

void init_parameters(const std::vector<Param*>& params, std::uint64_t seed) {
  std::mt19937_64 master(seed);
  for (Param* p : params) {
    const std::uint64_t sub = master();  // consumed even when unused so the
                                         // stream is stable across flags
    Tensor& v = p->value;
    if (v.ndim() <= 1 || p->zero_init) {
      for (int64_t i = 0; i < v.numel(); ++i) v.set(i, 0.0);
      continue;
    }
    int64_t fan_in = 1, fan_out = 1;
    if (v.ndim() == 4) {  // cout x cin x k x k
      fan_in = v.dim(1) * v.dim(2) * v.dim(3);
      fan_out = v.dim(0) * v.dim(2) * v.dim(3);
    } else {  // rows x cols matrix
      fan_in = v.dim(1);
      fan_out = v.dim(0);
    }
    const double b = xavier_bound(fan_in, fan_out);
    std::mt19937_64 rng(sub);
    std::uniform_real_distribution<double> dist(-b, b);
    for (int64_t i = 0; i < v.numel(); ++i) v.set(i, dist(rng));
  }
}

int64_t count_parameters(const std::vector<Param*>& params) {
  int64_t n = 0;
  for (const Param* p : params) n += p->value.numel();
  return n;
}

int64_t count_parameters(const std::vector<Param*>& params, ParamGroup group) {
  int64_t n = 0;
  for (const Param* p : params)
    if (p->group == group) n += p->value.numel();
  return n;
}

double poly_lr(const SgdConfig& cfg, int64_t step) {
  if (cfg.total_steps <= 0) return cfg.lr;
  if (step >= cfg.total_steps) return 0.0;
  const double frac =
      1.0 - static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  return cfg.lr * std::pow(frac, cfg.power);
}

Sgd::Sgd(std::vector<Param*> params, SgdConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.lr > 0.0))
    throw std::invalid_argument("sgd: learning rate must be > 0");
  if (cfg_.momentum < 0.0 || cfg_.momentum >= 1.0)
    throw std::invalid_argument("sgd: momentum must be in [0, 1)");
  velocity_.reserve(params_.size());
  for (Param* p : params_)
    velocity_.push_back(Tensor::zeros(p->value.shape(), p->value.dtype()));
}

void Sgd::set_group_multiplier(ParamGroup g, double mult) {
  if (!(mult > 0.0))
    throw std::invalid_argument("sgd: group multiplier must be > 0");
  mult_[static_cast<int>(g)] = mult;
}

double Sgd::group_multiplier(ParamGroup g) const {
  return mult_[static_cast<int>(g)];
}

void Sgd::zero_grad() {
  for (Param* p : params_) p->value.zero_grad();
}

void Sgd::step() {
  const double lr = poly_lr(cfg_, step_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param* p = params_[i];
    Tensor g = p->value.grad();
    if (!g.defined())
      throw std::logic_error("sgd_step: no gradient for parameter " + p->name);
    Tensor& v = velocity_[i];
    const double eta = lr * mult_[static_cast<int>(p->group)];
    const double wd = p->decay ? cfg_.weight_decay : 0.0;
    const int64_t n = p->value.numel();
    if (p->value.dtype() == Dtype::F32) {
      float* pv = p->value.f32().data();
      float* vv = v.f32().data();
      const float* gv = g.f32().data();
      for (int64_t e = 0; e < n; ++e) {
        const double ge =
            static_cast<double>(gv[e]) + wd * static_cast<double>(pv[e]);
        const double vel = cfg_.momentum * static_cast<double>(vv[e]) + ge;
        vv[e] = static_cast<float>(vel);
        pv[e] = static_cast<float>(static_cast<double>(pv[e]) - eta * vel);
      }
    } else {
      double* pv = p->value.f64().data();
      double* vv = v.f64().data();
      const double* gv = g.f64().data();
      for (int64_t e = 0; e < n; ++e) {
        const double ge = gv[e] + wd * pv[e];
        const double vel = cfg_.momentum * vv[e] + ge;
        vv[e] = vel;
        pv[e] = pv[e] - eta * vel;
      }
    }
  }
  ++step_;
}

}  // namespace stylelab
