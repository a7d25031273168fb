#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stylelab/tensor.hpp"

namespace stylelab {

inline constexpr int kSceneSize = 64;
inline constexpr int kSceneClasses = 4;
inline constexpr const char* kClassNames[kSceneClasses] = {
    "background", "road", "vehicle", "vulnerable"};
inline constexpr const char* kSceneGeneratorVersion = "toyscenes-v1";

/// One synthetic driving scene: a textured background (class 0), a
/// bottom-anchored trapezoid road (1), up to three shaded rectangle vehicles
/// on the road (2), and up to three small ellipse figures near the road
/// edges (3). Labels mark exactly the painted geometry.
struct SegSample {
  Tensor image;   // 3 x 64 x 64 float32 in [0, 1]
  Tensor labels;  // 64 x 64 float32 holding class ids 0..3
  std::uint64_t scene_seed = 0;
};

/// Deterministic in seed.
SegSample generate_scene(std::uint64_t seed);

// ------------------------------------------------------------ corruptions

/// Severity-graded test-time image corruptions. Labels are never touched;
/// shape and [0,1] range are preserved; outputs are deterministic in seed.
struct CorruptionSpec {
  std::string kind;  // haze | rain | gauss-noise | gauss-blur | contrast
  int severity = 1;  // 1..5
  std::uint64_t seed = 0;
};

const std::vector<std::string>& corruption_kinds();

/// Validates kind and severity in [1, 5].
Tensor corrupt(const Tensor& image, const CorruptionSpec& spec);

/// Same operators with a real-valued strength; strength 0 is the identity
/// for every kind (all severity-derived parameters scale to zero). corrupt()
/// is corrupt_strength at strength = severity.
Tensor corrupt_strength(const Tensor& image, const std::string& kind,
                        double strength, std::uint64_t seed);

// --------------------------------------------------------------- datasets

struct DatasetInfo {
  std::string id;  // directory-friendly name, e.g. "test-s7" or "test-s7+haze3"
  std::string split;  // train | val | test
  int64_t n = 0;
  std::uint64_t seed = 0;
  std::string generator = kSceneGeneratorVersion;
  bool corrupted = false;
  CorruptionSpec corruption;  // meaningful when corrupted
};

struct Dataset {
  DatasetInfo info;
  std::vector<SegSample> samples;
};

/// Scene seeds come from disjoint ranges per (seed, split), so train/val/test
/// never share a scene.
Dataset generate_dataset(const std::string& split, int64_t n,
                         std::uint64_t seed);

/// Applies one corruption to every image (labels copied); sample i uses
/// spec.seed + i so corruption draws are independent across samples.
Dataset corrupt_dataset(const Dataset& clean, const CorruptionSpec& spec);

/// Directory layout: manifest.json + images/NNNNNN.stls1 (float32) and
/// labels/NNNNNN.stls1 (uint8).
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace stylelab
