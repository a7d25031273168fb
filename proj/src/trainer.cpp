#include "stylelab/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "json.hpp"
#include "stylelab/style.hpp"

namespace stylelab {

namespace {

constexpr std::uint64_t kSeedStride = 0x9E3779B97F4A7C15ULL;

void validate_common(const TrainConfig& cfg, const Dataset& data) {
  if (data.samples.empty())
    throw std::invalid_argument("train: empty dataset");
  if (cfg.batch_size < 1)
    throw std::invalid_argument("train: batch_size must be >= 1");
  if (cfg.alpha < 0.0)
    throw std::invalid_argument("train: alpha must be >= 0");
  if (cfg.styleless_lr_mult <= 0.0)
    throw std::invalid_argument("train: styleless_lr_mult must be > 0");
  const int64_t hw = kSceneSize;
  if (cfg.crop < 8 || cfg.crop > hw || cfg.crop % 4 != 0)
    throw std::invalid_argument(
        "train: crop must be a multiple of 4 in [8, " + std::to_string(hw) +
        "]");
}

struct CropPair {
  Tensor image, labels;
};

CropPair random_crop(const SegSample& s, int64_t crop, std::mt19937_64& rng) {
  const int64_t h = s.image.dim(1), w = s.image.dim(2);
  std::uniform_int_distribution<int64_t> oy_d(0, h - crop), ox_d(0, w - crop);
  const int64_t oy = oy_d(rng), ox = ox_d(rng);

  CropPair out;
  out.image = Tensor::zeros({3, crop, crop}, Dtype::F32);
  out.labels = Tensor::zeros({crop, crop}, Dtype::F32);
  auto src = s.image.f32();
  auto dst = out.image.f32();
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < crop; ++y)
      for (int64_t x = 0; x < crop; ++x)
        dst[static_cast<std::size_t>((c * crop + y) * crop + x)] =
            src[static_cast<std::size_t>((c * h + oy + y) * w + ox + x)];
  auto lsrc = s.labels.f32();
  auto ldst = out.labels.f32();
  for (int64_t y = 0; y < crop; ++y)
    for (int64_t x = 0; x < crop; ++x)
      ldst[static_cast<std::size_t>(y * crop + x)] =
          lsrc[static_cast<std::size_t>((oy + y) * w + ox + x)];
  return out;
}

/// The shared optimization loop. `with_gram` adds alpha * gram_loss over the
/// style-removal layers to the objective (and logs the raw value either way,
/// when the network has such layers).
TrainResult run_training(ToySegNet net, int stage, const Dataset& data,
                         const TrainConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const int64_t n = static_cast<int64_t>(data.samples.size());
  const int64_t batch = std::min<int64_t>(cfg.batch_size, n);
  const int64_t steps_per_epoch = (n + batch - 1) / batch;
  const int64_t epochs = resolve_epochs(cfg);

  SgdConfig sc = cfg.sgd;
  sc.total_steps = epochs * steps_per_epoch;

  for (Param* p : net.parameters()) p->value.set_requires_grad(true);
  Sgd opt(net.parameters(), sc);
  if (stage == 2)
    opt.set_group_multiplier(ParamGroup::Styleless, cfg.styleless_lr_mult);

  const bool with_gram = stage == 2;
  if (with_gram && !net.has_styleless())
    throw std::logic_error("train: stage 2 requires style-removal layers");

  std::mt19937_64 shuffle_rng(cfg.seed * kSeedStride + 0x1);
  std::mt19937_64 crop_rng(cfg.seed * kSeedStride + 0x2);

  std::vector<int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  TrainLog log;
  int64_t step = 0;
  for (int64_t epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_task = 0.0, epoch_gram = 0.0;
    int64_t epoch_steps = 0;
    for (int64_t b0 = 0; b0 < n; b0 += batch) {
      const int64_t bn = std::min(batch, n - b0);
      opt.zero_grad();
      double batch_task = 0.0, batch_gram = 0.0;
      for (int64_t k = 0; k < bn; ++k) {
        const SegSample& s = data.samples[static_cast<std::size_t>(
            order[static_cast<std::size_t>(b0 + k)])];
        CropPair cp = random_crop(s, cfg.crop, crop_rng);

        TapeScope tape;
        ForwardOptions fo;
        fo.want_grams = with_gram;
        ForwardResult fr = net.forward(cp.image, fo);
        Tensor l_task = softmax_cross_entropy(fr.logits, cp.labels);
        Tensor objective = l_task;
        double gram_value = 0.0;
        if (with_gram) {
          Tensor l_gram = gram_loss(fr.grams_in, fr.grams_out);
          gram_value = l_gram.item();
          // alpha = 0 keeps the gram term out of the objective entirely, so
          // the parameter trajectory matches plain fine-tuning bit for bit.
          if (cfg.alpha > 0.0)
            objective = add(l_task, scale(l_gram, cfg.alpha));
        }
        const double task_value = l_task.item();
        if (!std::isfinite(task_value) || !std::isfinite(gram_value))
          throw std::runtime_error("train: non-finite loss at step " +
                                   std::to_string(step));
        backward(scale(objective, 1.0 / static_cast<double>(bn)));
        batch_task += task_value;
        batch_gram += gram_value;
      }
      batch_task /= static_cast<double>(bn);
      batch_gram /= static_cast<double>(bn);
      log.append({step, batch_task, batch_gram,
                  batch_task + cfg.alpha * batch_gram, opt.current_lr()});
      opt.step();
      ++step;
      epoch_task += batch_task;
      epoch_gram += batch_gram;
      ++epoch_steps;
    }
    if (epoch == epochs - 1 && epoch_steps > 0) {
      log.final_l_task = epoch_task / static_cast<double>(epoch_steps);
      log.final_l_gram = epoch_gram / static_cast<double>(epoch_steps);
    }
  }
  log.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  for (Param* p : net.parameters()) {
    p->value.zero_grad();
    p->value.set_requires_grad(false);
  }
  return {std::move(net), CheckpointMeta{stage, cfg.seed}, std::move(log)};
}

}  // namespace

int64_t resolve_epochs(const TrainConfig& cfg) {
  if (cfg.epochs > 0) return cfg.epochs;
  return cfg.stage == 2 ? kDefaultStage1Epochs / 2 : kDefaultStage1Epochs;
}

void TrainLog::append(const StepRecord& r) {
  if (!steps.empty() && r.step <= steps.back().step)
    throw std::logic_error("TrainLog: step ids must increase");
  steps.push_back(r);
}

void TrainLog::save_jsonl(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("TrainLog: cannot write " + path);
  for (const StepRecord& r : steps) {
    nlohmann::json j{{"step", r.step},
                     {"l_task", r.l_task},
                     {"l_gram", r.l_gram},
                     {"l_total", r.l_total},
                     {"lr", r.lr}};
    os << j.dump() << '\n';
  }
  nlohmann::json tail{{"final_l_task", final_l_task},
                      {"final_l_gram", final_l_gram},
                      {"wall_clock_seconds", wall_clock_seconds}};
  os << tail.dump() << '\n';
}

ToySegNet clone_net(const ToySegNet& net) {
  ToySegNet copy = net;
  for (Param* p : copy.parameters()) {
    Tensor v = p->value.clone();
    v.set_requires_grad(false);
    p->value = v;
  }
  return copy;
}

TrainResult train_stage1(const Dataset& train_data, const TrainConfig& cfg) {
  ToySegNet net = ToySegNet::make(cfg.arch);
  net.init(cfg.seed);
  return train_stage1(net, train_data, cfg);
}

TrainResult train_stage1(const ToySegNet& net, const Dataset& train_data,
                         const TrainConfig& cfg) {
  if (cfg.stage != 1)
    throw std::invalid_argument("train_stage1: cfg.stage must be 1");
  validate_common(cfg, train_data);
  return run_training(clone_net(net), 1, train_data, cfg);
}

TrainResult train_stage2(const ToySegNet& stage1_net,
                         const CheckpointMeta& stage1_meta,
                         const Dataset& train_data, const TrainConfig& cfg) {
  if (cfg.stage != 2)
    throw std::invalid_argument("train_stage2: cfg.stage must be 2");
  validate_common(cfg, train_data);
  if (stage1_meta.stage != 1)
    throw std::invalid_argument(
        "train_stage2: needs a task-trained (stage-1) checkpoint, got stage " +
        std::to_string(stage1_meta.stage));
  if (stage1_net.has_styleless())
    throw std::invalid_argument(
        "train_stage2: network already contains style-removal layers");

  ToySegNet net = clone_net(stage1_net);
  net.insert_styleless(cfg.seed * kSeedStride + 0x51);
  return run_training(std::move(net), 2, train_data, cfg);
}

TrainResult train_stage2(const std::string& stage1_ckpt_dir,
                         const Dataset& train_data, const TrainConfig& cfg) {
  LoadedCheckpoint lc = load_checkpoint(stage1_ckpt_dir);
  return train_stage2(lc.net, lc.meta, train_data, cfg);
}

void save_train_result(const TrainResult& r, const std::string& dir) {
  save_checkpoint(r.net, r.meta, dir);
  r.log.save_jsonl((std::filesystem::path(dir) / "train_log.jsonl").string());
}

}  // namespace stylelab
