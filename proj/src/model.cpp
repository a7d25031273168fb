#include "stylelab/model.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "stylelab/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace stylelab {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(const void* data, std::size_t n,
                    std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t fnv1a_str(const std::string& s, std::uint64_t h = kFnvOffset) {
  return fnv1a(s.data(), s.size(), h);
}

bool filter_wants_layer(const ForwardOptions& opts, int layer) {
  if (opts.filter_layers.empty()) return true;
  return std::find(opts.filter_layers.begin(), opts.filter_layers.end(),
                   layer) != opts.filter_layers.end();
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace

ToySegNet ToySegNet::make(const std::string& arch) {
  ToySegNet net;
  net.arch_ = arch;
  if (arch == "toyseg-v1") {
    net.widths_ = {16, 32, 32, 64};
  } else if (arch == "toyseg-wide-v1") {
    net.widths_ = {17, 32, 32, 65};
  } else {
    throw std::invalid_argument("unknown architecture '" + arch +
                                "' (toyseg-v1|toyseg-wide-v1)");
  }
  const auto& w = net.widths_;
  net.stem = ConvLayer("stem", 3, w[0], 3, 1, ParamGroup::Backbone);
  net.block1 = ResidualBlock("block1", w[0], ParamGroup::Backbone);
  net.trans1 = ConvLayer("trans1", w[0], w[1], 1, 2, ParamGroup::Backbone);
  net.block2 = ResidualBlock("block2", w[1], ParamGroup::Backbone);
  net.trans2 = ConvLayer("trans2", w[1], w[2], 1, 2, ParamGroup::Backbone);
  net.block3 = ResidualBlock("block3", w[2], ParamGroup::Backbone);
  net.trans3 = ConvLayer("trans3", w[2], w[3], 1, 1, ParamGroup::Backbone);
  net.block4 = ResidualBlock("block4", w[3], ParamGroup::Backbone);
  net.head = ConvLayer("head", w[3], kNumClasses, 1, 1, ParamGroup::Backbone);
  return net;
}

void ToySegNet::init(std::uint64_t seed) {
  init_parameters(parameters(), seed);
}

void ToySegNet::insert_styleless(std::uint64_t seed) {
  if (styleless_present_)
    throw std::logic_error(
        "insert_styleless: style-removal layers already inserted");
  style_layers.reserve(kBlocks);
  for (int i = 0; i < kBlocks; ++i)
    style_layers.emplace_back("styleless" + std::to_string(i + 1),
                              widths_[static_cast<std::size_t>(i)]);
  std::vector<Param*> fresh;
  for (StylelessLayer& l : style_layers) l.collect(fresh);
  init_parameters(fresh, seed);
  styleless_present_ = true;
}

ForwardResult ToySegNet::forward(const Tensor& image,
                                 const ForwardOptions& opts) const {
  if (arch_.empty()) throw std::logic_error("forward: uninitialized network");
  if (!image.defined() || image.ndim() != 3 || image.dim(0) != 3)
    throw std::invalid_argument(
        "forward: input must be 3xHxW, got " +
        (image.defined() ? image.shape_str() : std::string("?")));
  if (image.dim(1) % 4 != 0 || image.dim(2) % 4 != 0 || image.dim(1) < 8 ||
      image.dim(2) < 8)
    throw std::invalid_argument(
        "forward: spatial extents must be multiples of 4 and >= 8, got " +
        image.shape_str());

  ForwardResult res;
  auto through_tap = [&](Tensor f, int layer) {
    if (opts.filter != nullptr && opts.filter->kind != FilterKind::None &&
        filter_wants_layer(opts, layer))
      f = apply_filter(f, *opts.filter, layer);
    if (styleless_present_) {
      const auto& sl = style_layers[static_cast<std::size_t>(layer)];
      if (opts.want_grams) {
        StylelessTrace tr = styleless_forward(sl, f);
        res.grams_in.push_back(tr.gram_in);
        res.grams_out.push_back(tr.gram_out);
        f = tr.f_out;
      } else {
        f = sl.forward(f);
      }
    }
    if (opts.want_taps) res.taps.push_back(f);
    return f;
  };

  Tensor x = relu(stem.forward(image));
  x = through_tap(block1.forward(x), 0);
  x = relu(trans1.forward(x));
  x = through_tap(block2.forward(x), 1);
  x = relu(trans2.forward(x));
  x = through_tap(block3.forward(x), 2);
  x = relu(trans3.forward(x));
  x = through_tap(block4.forward(x), 3);
  x = upsample_bilinear(x, 4);
  res.logits = head.forward(x);
  return res;
}

Tensor ToySegNet::logits(const Tensor& image) const {
  return forward(image).logits;
}

std::vector<Tensor> ToySegNet::extract_taps(const Tensor& image) const {
  ForwardOptions opts;
  opts.want_taps = true;
  return forward(image, opts).taps;
}

std::vector<Param*> ToySegNet::parameters() {
  std::vector<Param*> out;
  stem.collect(out);
  block1.collect(out);
  trans1.collect(out);
  block2.collect(out);
  trans2.collect(out);
  block3.collect(out);
  trans3.collect(out);
  block4.collect(out);
  head.collect(out);
  for (StylelessLayer& l : style_layers) l.collect(out);
  return out;
}

std::vector<const Param*> ToySegNet::parameters() const {
  std::vector<Param*> mut = const_cast<ToySegNet*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

int64_t ToySegNet::parameter_count() const {
  int64_t n = 0;
  for (const Param* p : parameters()) n += p->value.numel();
  return n;
}

int64_t ToySegNet::parameter_count(ParamGroup g) const {
  int64_t n = 0;
  for (const Param* p : parameters())
    if (p->group == g) n += p->value.numel();
  return n;
}

std::uint64_t ToySegNet::config_hash() const {
  std::ostringstream os;
  os << arch_ << '|' << kNumClasses << '|' << styleless_present_;
  for (int64_t w : widths_) os << '|' << w;
  for (const Param* p : parameters()) {
    os << '|' << p->name << ':' << shape_to_string(p->value.shape()) << ':'
       << dtype_name(p->value.dtype()) << ':' << param_group_name(p->group);
  }
  return fnv1a_str(os.str());
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------- checkpointing

void save_checkpoint(const ToySegNet& net, const CheckpointMeta& meta,
                     const std::string& dir) {
  if (net.arch().empty())
    throw std::logic_error("save_checkpoint: uninitialized network");
  fs::create_directories(dir);

  json manifest;
  manifest["format"] = "stylelab-ckpt-v1";
  manifest["arch"] = net.arch();
  manifest["stage"] = meta.stage;
  manifest["seed"] = meta.seed;
  manifest["config_hash"] = hash_hex(net.config_hash());
  manifest["num_classes"] = ToySegNet::kNumClasses;
  manifest["widths"] = net.widths();
  manifest["styleless"] = net.has_styleless();
  json insertion = json::object();
  if (net.has_styleless())
    for (int i = 0; i < ToySegNet::kBlocks; ++i)
      insertion["block" + std::to_string(i + 1)] =
          "styleless" + std::to_string(i + 1);
  manifest["insertion_map"] = insertion;

  json params = json::array();
  for (const Param* p : net.parameters()) {
    json e;
    e["name"] = p->name;
    e["file"] = p->name + ".stls1";
    e["shape"] = p->value.shape();
    e["dtype"] = dtype_name(p->value.dtype());
    e["group"] = param_group_name(p->group);
    e["decay"] = p->decay;
    params.push_back(e);
    io::save_tensor((fs::path(dir) / (p->name + ".stls1")).string(),
                    p->value);
  }
  manifest["parameters"] = params;

  std::ofstream os(fs::path(dir) / "manifest.json",
                   std::ios::binary | std::ios::trunc);
  if (!os)
    throw std::runtime_error("save_checkpoint: cannot write manifest in " +
                             dir);
  os << manifest.dump(2) << '\n';
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
  const fs::path mp = fs::path(dir) / "manifest.json";
  if (!fs::exists(mp))
    throw std::runtime_error("checkpoint " + dir + ": no manifest.json");
  json manifest;
  try {
    manifest = json::parse(read_file(mp));
  } catch (const json::parse_error& e) {
    throw std::runtime_error("checkpoint " + dir +
                             ": corrupt manifest: " + e.what());
  }
  if (manifest.value("format", "") != "stylelab-ckpt-v1")
    throw std::runtime_error("checkpoint " + dir + ": unknown format '" +
                             manifest.value("format", "") + "'");

  LoadedCheckpoint out;
  out.net = ToySegNet::make(manifest.at("arch").get<std::string>());
  out.meta.stage = manifest.at("stage").get<int>();
  out.meta.seed = manifest.at("seed").get<std::uint64_t>();
  if (manifest.at("styleless").get<bool>()) out.net.insert_styleless(0);

  std::vector<Param*> params = out.net.parameters();
  std::size_t next = 0;
  for (const json& e : manifest.at("parameters")) {
    const auto name = e.at("name").get<std::string>();
    if (next >= params.size())
      throw std::runtime_error("checkpoint " + dir + ": extra parameter '" +
                               name + "'");
    Param* p = params[next++];
    if (p->name != name)
      throw std::runtime_error("checkpoint " + dir + ": expected parameter '" +
                               p->name + "', manifest has '" + name + "'");
    Tensor t = io::load_tensor(
        (fs::path(dir) / e.at("file").get<std::string>()).string());
    if (t.shape() != p->value.shape() || t.dtype() != p->value.dtype())
      throw std::runtime_error("checkpoint " + dir + ": parameter '" + name +
                               "' is " + t.shape_str() + ", expected " +
                               p->value.shape_str());
    std::memcpy(const_cast<std::byte*>(p->value.raw()), t.raw(), t.nbytes());
  }
  if (next != params.size())
    throw std::runtime_error("checkpoint " + dir + ": manifest lists " +
                             std::to_string(next) + " parameters, network has " +
                             std::to_string(params.size()));

  const auto expect_hash = manifest.value("config_hash", "");
  if (!expect_hash.empty() && expect_hash != hash_hex(out.net.config_hash()))
    throw std::runtime_error("checkpoint " + dir + ": config hash mismatch");
  return out;
}

std::uint64_t checkpoint_hash(const std::string& dir) {
  const std::string manifest_text = read_file(fs::path(dir) / "manifest.json");
  std::uint64_t h = fnv1a_str(manifest_text);
  const json manifest = json::parse(manifest_text);
  for (const json& e : manifest.at("parameters")) {
    const std::string bytes =
        read_file(fs::path(dir) / e.at("file").get<std::string>());
    h = fnv1a_str(bytes, h);
  }
  return h;
}

StyleTransferResult style_transfer_with_net(const ToySegNet& net,
                                            const Tensor& content_image,
                                            const Tensor& style_image,
                                            int64_t steps, double step_size) {
  // Freeze a deep copy so no gradients accumulate on the host's parameters.
  ToySegNet frozen = net;
  for (Param* p : frozen.parameters()) {
    Tensor v = p->value.clone();
    v.set_requires_grad(false);
    p->value = v;
  }
  StyleTransferConfig cfg;
  cfg.steps = steps;
  cfg.lr = step_size;
  FeatureExtractor extract = [&frozen](const Tensor& img) {
    return frozen.extract_taps(img);
  };
  return style_transfer(extract, content_image, style_image, cfg);
}

}  // namespace stylelab
