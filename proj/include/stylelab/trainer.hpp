#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stylelab/model.hpp"
#include "stylelab/nn.hpp"
#include "stylelab/scenes.hpp"

namespace stylelab {

/// Knobs for one training run. Stage 1 task-trains a fresh backbone; stage 2
/// inserts the style-removal layers into a stage-1 network and fine-tunes
/// everything on task loss + alpha * gram loss.
struct TrainConfig {
  int stage = 1;
  int64_t epochs = 0;  // 0 = stage default (stage 1: 20; stage 2: half that)
  int64_t batch_size = 8;
  SgdConfig sgd;  // total_steps is derived from epochs * batches per epoch
  double alpha = 0.1;               // gram-loss weight (stage 2)
  double styleless_lr_mult = 10.0;  // lr multiplier for the inserted layers
  std::uint64_t seed = 1;
  int64_t crop = 48;  // random square crop; multiple of 4, <= image size
  std::string arch = "toyseg-v1";
  std::string data;  // dataset directory, for CLI round-trips
};

inline constexpr int64_t kDefaultStage1Epochs = 20;

int64_t resolve_epochs(const TrainConfig& cfg);

struct StepRecord {
  int64_t step = 0;
  double l_task = 0.0;
  double l_gram = 0.0;  // raw (unweighted) gram loss; 0 when not computed
  double l_total = 0.0;
  double lr = 0.0;
};

/// Append-only per-step training trace plus end-of-run summary figures.
struct TrainLog {
  std::vector<StepRecord> steps;
  double final_l_task = 0.0;  // mean over the last epoch
  double final_l_gram = 0.0;
  double wall_clock_seconds = 0.0;

  void append(const StepRecord& r);  // rejects non-increasing step ids
  void save_jsonl(const std::string& path) const;
};

struct TrainResult {
  ToySegNet net;
  CheckpointMeta meta;
  TrainLog log;
};

/// Deep copy: shares no tensor storage with the source network.
ToySegNet clone_net(const ToySegNet& net);

/// Builds a fresh cfg.arch network, initializes it from cfg.seed, and
/// task-trains it. Deterministic: same cfg -> bit-identical parameters.
TrainResult train_stage1(const Dataset& train_data, const TrainConfig& cfg);

/// Same, but starting from the given (already initialized) network. The
/// argument is deep-copied, never mutated. Only the task loss is optimized,
/// whatever layers the network contains.
TrainResult train_stage1(const ToySegNet& net, const Dataset& train_data,
                         const TrainConfig& cfg);

/// Stage 2: rejects anything but a task-trained (stage-1) network without
/// style-removal layers, inserts the layers (identity at insertion), then
/// fine-tunes all parameters on L_task + alpha * L_gram with the inserted
/// layers' learning rate scaled by cfg.styleless_lr_mult. The raw gram loss
/// is logged every step even when alpha = 0, in which case it contributes
/// nothing to any gradient.
TrainResult train_stage2(const ToySegNet& stage1_net,
                         const CheckpointMeta& stage1_meta,
                         const Dataset& train_data, const TrainConfig& cfg);

/// Convenience overload reading the stage-1 network from a checkpoint dir.
TrainResult train_stage2(const std::string& stage1_ckpt_dir,
                         const Dataset& train_data, const TrainConfig& cfg);

/// Writes checkpoint directory + train_log.jsonl beside it.
void save_train_result(const TrainResult& r, const std::string& dir);

}  // namespace stylelab
