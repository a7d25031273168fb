#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "stylelab/model.hpp"
#include "stylelab/scenes.hpp"

namespace stylelab {

/// Foreground classes (road, vehicle, vulnerable) enter the mIoU mean;
/// background is reported but excluded, matching the three per-class columns
/// of the headline results table.
const std::vector<int>& foreground_classes();

/// Dataset-global confusion matrix: counts[label * C + pred]. IoU and means
/// are computed after all instances have been accumulated, never per image.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = kSceneClasses);

  /// preds and labels are HxW float32 class-id maps of equal shape.
  void add(const Tensor& preds, const Tensor& labels);

  int num_classes() const { return num_classes_; }
  int64_t count(int label, int pred) const;
  int64_t tp(int c) const;
  int64_t fp(int c) const;
  int64_t fn(int c) const;
  /// Class appears in either predictions or labels.
  bool present(int c) const;
  /// TP / (TP + FP + FN). Classes absent from both sides have an undefined
  /// IoU; they report 0 here and are excluded from mean_iou.
  double iou(int c) const;
  /// Arithmetic mean of iou(c) over the given classes, skipping the ones
  /// absent from both predictions and labels.
  double mean_iou(const std::vector<int>& classes) const;

 private:
  int num_classes_;
  std::vector<int64_t> counts_;
};

/// Channel-argmax class map: CxHxW logits -> HxW float32 ids (ties break to
/// the lowest class id).
Tensor argmax_classes(const Tensor& logits);

struct IouResult {
  std::vector<double> iou;      // one per class id 0..C-1
  std::vector<bool> present;    // class seen in preds or labels
  double mean = 0.0;            // over the requested classes, absent skipped
};

/// Single-instance IoU against a confusion matrix built from one (preds,
/// labels) pair; `classes` selects which ids enter the mean.
IouResult miou(const Tensor& preds, const Tensor& labels,
               const std::vector<int>& classes);

// ----------------------------------------------------------------- report

struct MetricsReport {
  std::array<double, kSceneClasses> class_iou{};
  std::array<bool, kSceneClasses> class_present{};
  double miou = 0.0;  // mean over present foreground classes
  std::string dataset_id;
  bool corrupted = false;
  CorruptionSpec corruption;  // meaningful when corrupted
  std::string checkpoint;    // hex hash of the evaluated checkpoint ("" = n/a)
  std::uint64_t seed = 0;
  double wall_clock_seconds = 0.0;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  /// to_json minus the wall clock: the fields that must be bit-identical
  /// across reruns with the same (checkpoint, dataset, seed).
  nlohmann::json canonical_json() const;

  void save(const std::string& path) const;
  static MetricsReport load(const std::string& path);
};

struct EvalOptions {
  const FilterConfig* filter = nullptr;  // optional feature perturbation
  std::vector<int> filter_layers;        // empty = all taps
  std::uint64_t seed = 0;                // recorded; also seeds the filter
  std::string checkpoint;                // hex hash recorded in the report
};

/// Global-confusion evaluation of a network on a dataset.
MetricsReport evaluate(const ToySegNet& net, const Dataset& ds,
                       const EvalOptions& opts = {});

}  // namespace stylelab
