#include "stylelab/eval.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace stylelab {

using nlohmann::json;

const std::vector<int>& foreground_classes() {
  static const std::vector<int> fg = {1, 2, 3};  // road, vehicle, vulnerable
  return fg;
}

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : num_classes_(num_classes),
      counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
  if (num_classes < 1)
    throw std::invalid_argument("ConfusionMatrix: need at least one class");
}

void ConfusionMatrix::add(const Tensor& preds, const Tensor& labels) {
  if (!preds.defined() || !labels.defined() || preds.ndim() != 2 ||
      preds.shape() != labels.shape())
    throw std::invalid_argument(
        "ConfusionMatrix::add: preds/labels must be HxW with equal shapes");
  for (int64_t i = 0; i < preds.numel(); ++i) {
    const auto p = static_cast<int64_t>(preds.at(i));
    const auto l = static_cast<int64_t>(labels.at(i));
    if (p < 0 || p >= num_classes_ || l < 0 || l >= num_classes_)
      throw std::invalid_argument("ConfusionMatrix::add: class id " +
                                  std::to_string(p < 0 || p >= num_classes_
                                                     ? p
                                                     : l) +
                                  " outside [0, " +
                                  std::to_string(num_classes_ - 1) + "]");
    ++counts_[static_cast<std::size_t>(l * num_classes_ + p)];
  }
}

int64_t ConfusionMatrix::count(int label, int pred) const {
  return counts_[static_cast<std::size_t>(label * num_classes_ + pred)];
}

int64_t ConfusionMatrix::tp(int c) const { return count(c, c); }

int64_t ConfusionMatrix::fp(int c) const {
  int64_t s = 0;
  for (int l = 0; l < num_classes_; ++l)
    if (l != c) s += count(l, c);
  return s;
}

int64_t ConfusionMatrix::fn(int c) const {
  int64_t s = 0;
  for (int p = 0; p < num_classes_; ++p)
    if (p != c) s += count(c, p);
  return s;
}

bool ConfusionMatrix::present(int c) const {
  return tp(c) + fp(c) + fn(c) > 0;
}

double ConfusionMatrix::iou(int c) const {
  const int64_t denom = tp(c) + fp(c) + fn(c);
  if (denom == 0) return 0.0;
  return static_cast<double>(tp(c)) / static_cast<double>(denom);
}

double ConfusionMatrix::mean_iou(const std::vector<int>& classes) const {
  double sum = 0.0;
  int64_t n = 0;
  for (int c : classes) {
    if (c < 0 || c >= num_classes_)
      throw std::invalid_argument("mean_iou: class id out of range");
    if (!present(c)) continue;
    sum += iou(c);
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

Tensor argmax_classes(const Tensor& logits) {
  if (!logits.defined() || logits.ndim() != 3)
    throw std::invalid_argument("argmax_classes: want CxHxW logits");
  const int64_t c = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  Tensor out = Tensor::zeros({h, w}, Dtype::F32);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      int64_t best = 0;
      double best_v = logits.at((0 * h + y) * w + x);
      for (int64_t k = 1; k < c; ++k) {
        const double v = logits.at((k * h + y) * w + x);
        if (v > best_v) {
          best_v = v;
          best = k;
        }
      }
      out.set(y * w + x, static_cast<double>(best));
    }
  return out;
}

IouResult miou(const Tensor& preds, const Tensor& labels,
               const std::vector<int>& classes) {
  int max_id = kSceneClasses - 1;
  for (int c : classes) max_id = std::max(max_id, c);
  ConfusionMatrix cm(max_id + 1);
  cm.add(preds, labels);
  IouResult r;
  r.iou.resize(static_cast<std::size_t>(cm.num_classes()));
  r.present.resize(static_cast<std::size_t>(cm.num_classes()));
  for (int c = 0; c < cm.num_classes(); ++c) {
    r.iou[static_cast<std::size_t>(c)] = cm.iou(c);
    r.present[static_cast<std::size_t>(c)] = cm.present(c);
  }
  r.mean = cm.mean_iou(classes);
  return r;
}

// ----------------------------------------------------------------- report

json MetricsReport::canonical_json() const {
  json j;
  j["class_iou"] = class_iou;
  j["class_present"] = class_present;
  j["miou"] = miou;
  j["dataset_id"] = dataset_id;
  if (corrupted) {
    j["corruption"] = {{"kind", corruption.kind},
                       {"severity", corruption.severity},
                       {"seed", corruption.seed}};
  } else {
    j["corruption"] = nullptr;
  }
  j["checkpoint"] = checkpoint;
  j["seed"] = seed;
  return j;
}

json MetricsReport::to_json() const {
  json j = canonical_json();
  j["wall_clock_seconds"] = wall_clock_seconds;
  return j;
}

MetricsReport MetricsReport::from_json(const json& j) {
  MetricsReport r;
  for (std::size_t c = 0; c < kSceneClasses; ++c) {
    r.class_iou[c] = j.at("class_iou").at(c).get<double>();
    r.class_present[c] = j.at("class_present").at(c).get<bool>();
  }
  r.miou = j.at("miou").get<double>();
  r.dataset_id = j.at("dataset_id").get<std::string>();
  if (!j.at("corruption").is_null()) {
    r.corrupted = true;
    r.corruption.kind = j.at("corruption").at("kind").get<std::string>();
    r.corruption.severity = j.at("corruption").at("severity").get<int>();
    r.corruption.seed = j.at("corruption").at("seed").get<std::uint64_t>();
  }
  r.checkpoint = j.at("checkpoint").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
  return r;
}

void MetricsReport::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("MetricsReport: cannot write " + path);
  os << to_json().dump(2) << '\n';
}

MetricsReport MetricsReport::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("MetricsReport: cannot read " + path);
  return from_json(json::parse(is));
}

MetricsReport evaluate(const ToySegNet& net, const Dataset& ds,
                       const EvalOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  FilterConfig filter_cfg;
  ForwardOptions fo;
  if (opts.filter) {
    filter_cfg = *opts.filter;
    filter_cfg.seed = opts.seed;
    fo.filter = &filter_cfg;
    fo.filter_layers = opts.filter_layers;
  }
  ConfusionMatrix cm(kSceneClasses);
  for (const SegSample& s : ds.samples) {
    const ForwardResult fr = net.forward(s.image, fo);
    cm.add(argmax_classes(fr.logits), s.labels);
  }

  MetricsReport r;
  for (int c = 0; c < kSceneClasses; ++c) {
    r.class_iou[static_cast<std::size_t>(c)] = cm.iou(c);
    r.class_present[static_cast<std::size_t>(c)] = cm.present(c);
  }
  r.miou = cm.mean_iou(foreground_classes());
  r.dataset_id = ds.info.id;
  r.corrupted = ds.info.corrupted;
  r.corruption = ds.info.corruption;
  r.checkpoint = opts.checkpoint;
  r.seed = opts.seed;
  r.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return r;
}

}  // namespace stylelab
