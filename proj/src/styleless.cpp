#include "stylelab/styleless.hpp"

#include <algorithm>
#include <stdexcept>

#include "stylelab/style.hpp"

namespace stylelab {

int64_t StylelessLayer::default_bottleneck(int64_t channels) {
  return std::max<int64_t>(4, channels / 8);
}

StylelessLayer::StylelessLayer(const std::string& name, int64_t channels_)
    : StylelessLayer(name, channels_, default_bottleneck(channels_)) {}

StylelessLayer::StylelessLayer(const std::string& name, int64_t channels_,
                               int64_t bottleneck_)
    : entry(name + ".entry", channels_, bottleneck_, 1, 1,
            ParamGroup::Styleless),
      mid(name + ".mid", bottleneck_, bottleneck_, 3, 1,
          ParamGroup::Styleless),
      exit_conv(name + ".exit", bottleneck_, channels_, 1, 1,
                ParamGroup::Styleless),
      channels(channels_),
      bottleneck(bottleneck_) {
  if (channels_ < 1 || bottleneck_ < 1)
    throw std::invalid_argument("StylelessLayer: bad widths " +
                                std::to_string(channels_) + "/" +
                                std::to_string(bottleneck_));
  exit_conv.weight.zero_init = true;  // identity on insertion
}

Tensor StylelessLayer::forward(const Tensor& f_in) const {
  if (!f_in.defined() || f_in.ndim() != 3 || f_in.dim(0) != channels)
    throw std::invalid_argument(
        "StylelessLayer: input must be " + std::to_string(channels) +
        " x H x W, got " + (f_in.defined() ? f_in.shape_str() : "?"));
  Tensor r = exit_conv.forward(relu(mid.forward(relu(entry.forward(f_in)))));
  return add(f_in, r);
}

void StylelessLayer::collect(std::vector<Param*>& out) {
  entry.collect(out);
  mid.collect(out);
  exit_conv.collect(out);
}

int64_t StylelessLayer::param_count() const {
  return entry.param_count() + mid.param_count() + exit_conv.param_count();
}

StylelessTrace styleless_forward(const StylelessLayer& layer,
                                 const Tensor& f_in) {
  StylelessTrace t;
  t.gram_in = gram(f_in);
  t.f_out = layer.forward(f_in);
  t.gram_out = gram(t.f_out);
  return t;
}

}  // namespace stylelab
