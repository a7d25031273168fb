#include "stylelab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "stylelab/image_io.hpp"

namespace fs = std::filesystem;

namespace stylelab {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string cfg_token(const TrainConfig& t, int64_t train_n) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s|%.6g|%.6g|%.6g|%.6g|%.6g|%lld|%lld",
                t.arch.c_str(), t.sgd.lr, t.sgd.momentum, t.sgd.weight_decay,
                t.alpha, t.styleless_lr_mult,
                static_cast<long long>(t.crop),
                static_cast<long long>(train_n));
  char out[12];
  std::snprintf(out, sizeof out, "%08llx",
                static_cast<unsigned long long>(fnv1a(buf) & 0xFFFFFFFFULL));
  return out;
}

/// Train-or-load with an on-disk cache keyed by everything that shapes the
/// parameter trajectory.
std::string cached_stage1(const fs::path& cache, const std::string& arch,
                          std::uint64_t seed, int64_t epochs,
                          const Dataset& train_data, const TrainConfig& tmpl,
                          int64_t train_n) {
  TrainConfig cfg = tmpl;
  cfg.stage = 1;
  cfg.arch = arch;
  cfg.seed = seed;
  cfg.epochs = epochs;
  const fs::path dir =
      cache / ("stage1-" + arch + "-s" + std::to_string(seed) + "-e" +
               std::to_string(resolve_epochs(cfg)) + "-" +
               cfg_token(cfg, train_n));
  if (fs::exists(dir / "manifest.json")) {
    try {
      (void)load_checkpoint(dir.string());
      return dir.string();
    } catch (const std::exception&) {
      fs::remove_all(dir);  // stale/corrupt cache entry: retrain
    }
  }
  TrainResult r = train_stage1(train_data, cfg);
  fs::create_directories(dir);
  save_train_result(r, dir.string());
  return dir.string();
}

std::string cached_stage2(const fs::path& cache, const std::string& stage1_dir,
                          std::uint64_t seed, int64_t epochs,
                          const Dataset& train_data, const TrainConfig& tmpl,
                          int64_t train_n) {
  TrainConfig cfg = tmpl;
  cfg.stage = 2;
  cfg.seed = seed;
  cfg.epochs = epochs;
  const fs::path dir =
      cache / ("stage2-" + cfg.arch + "-s" + std::to_string(seed) + "-e" +
               std::to_string(resolve_epochs(cfg)) + "-" +
               cfg_token(cfg, train_n));
  if (fs::exists(dir / "manifest.json")) {
    try {
      (void)load_checkpoint(dir.string());
      return dir.string();
    } catch (const std::exception&) {
      fs::remove_all(dir);
    }
  }
  TrainResult r = train_stage2(stage1_dir, train_data, cfg);
  fs::create_directories(dir);
  save_train_result(r, dir.string());
  return dir.string();
}

struct ModelVariant {
  std::string name;
  std::vector<std::string> ckpt_dirs;  // one per seed
  FilterConfig filter;                 // kind None when unused
};

std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == '.') c = 'p';
  return s;
}

}  // namespace

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  const bool known = cfg.protocol == "baseline-vs-styleless" ||
                     cfg.protocol == "filters-ablation" ||
                     cfg.protocol == "capacity-ablation";
  if (!known)
    throw std::invalid_argument("run_experiment: unknown protocol '" +
                                cfg.protocol + "'");
  if (cfg.seeds.empty())
    throw std::invalid_argument("run_experiment: no seeds");
  if (cfg.out_dir.empty())
    throw std::invalid_argument("run_experiment: out_dir required");
  for (int s : cfg.severities)
    if (s < 1 || s > 5)
      throw std::invalid_argument("run_experiment: severity outside [1,5]");

  const fs::path out(cfg.out_dir);
  const fs::path cache =
      cfg.checkpoint_cache.empty() ? out / "ckpts" : fs::path(cfg.checkpoint_cache);
  fs::create_directories(out / "reports");
  fs::create_directories(cache);

  const std::vector<std::string>& kinds =
      cfg.kinds.empty() ? corruption_kinds() : cfg.kinds;

  // ---- test datasets: clean + one per (kind, severity), fixed scenes
  const Dataset clean_test = generate_dataset("test", cfg.test_n, cfg.data_seed);
  std::vector<std::pair<std::string, Dataset>> datasets;
  datasets.emplace_back("clean", clean_test);
  for (std::size_t ki = 0; ki < kinds.size(); ++ki)
    for (int sev : cfg.severities) {
      CorruptionSpec spec{kinds[ki], sev,
                          cfg.data_seed * 1000 + ki * 100 +
                              static_cast<std::uint64_t>(sev)};
      datasets.emplace_back(kinds[ki] + "-s" + std::to_string(sev),
                            corrupt_dataset(clean_test, spec));
    }

  // ---- model variants (trained or loaded per seed)
  TrainConfig s2_tmpl = cfg.train;
  if (cfg.stage2_lr > 0.0) s2_tmpl.sgd.lr = cfg.stage2_lr;
  std::vector<ModelVariant> variants;
  for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
    const std::uint64_t seed = cfg.seeds[si];
    const Dataset train_data = generate_dataset("train", cfg.train_n, seed);

    if (cfg.protocol == "baseline-vs-styleless") {
      if (si == 0) {
        variants.push_back({"baseline", {}, {}});
        variants.push_back({"styleless", {}, {}});
      }
      const std::string s1 = cached_stage1(cache, cfg.train.arch, seed,
                                           cfg.stage1_epochs, train_data,
                                           cfg.train, cfg.train_n);
      const std::string s2 = cached_stage2(cache, s1, seed, cfg.stage2_epochs,
                                           train_data, s2_tmpl, cfg.train_n);
      variants[0].ckpt_dirs.push_back(s1);
      variants[1].ckpt_dirs.push_back(s2);
    } else if (cfg.protocol == "filters-ablation") {
      const std::string s1 = cached_stage1(cache, cfg.train.arch, seed,
                                           cfg.stage1_epochs, train_data,
                                           cfg.train, cfg.train_n);
      if (si == 0) {
        variants.push_back({"baseline", {}, {}});
        for (double p : {5.0, 10.0, 20.0}) {
          FilterConfig f;
          f.kind = FilterKind::Remove;
          f.percent = p;
          variants.push_back(
              {"remove-p" + sanitize(std::to_string(static_cast<int>(p))), {}, f});
        }
        {
          FilterConfig f;
          f.kind = FilterKind::Weighting;
          variants.push_back({"weighting", {}, f});
        }
        for (double p : {5.0, 10.0, 20.0})
          for (double tau : {2.0, 4.0, 8.0}) {
            FilterConfig f;
            f.kind = FilterKind::Noise;
            f.percent = p;
            f.tau = tau;
            variants.push_back({"noise-p" + std::to_string(static_cast<int>(p)) +
                                    "-t" + std::to_string(static_cast<int>(tau)),
                                {},
                                f});
          }
      }
      for (ModelVariant& v : variants) v.ckpt_dirs.push_back(s1);
    } else {  // capacity-ablation
      if (si == 0) {
        variants.push_back({"backbone", {}, {}});
        variants.push_back({"styleless", {}, {}});
        variants.push_back({"widened", {}, {}});
      }
      const std::string s1 = cached_stage1(cache, "toyseg-v1", seed,
                                           cfg.stage1_epochs, train_data,
                                           cfg.train, cfg.train_n);
      const std::string s2 = cached_stage2(cache, s1, seed, cfg.stage2_epochs,
                                           train_data, s2_tmpl, cfg.train_n);
      // The widened control gets the same total number of optimization steps
      // as stage 1 + stage 2 combined, so the comparison isolates capacity.
      TrainConfig e1 = cfg.train, e2 = cfg.train;
      e1.stage = 1;
      e1.epochs = cfg.stage1_epochs;
      e2.stage = 2;
      e2.epochs = cfg.stage2_epochs;
      const std::string wide = cached_stage1(
          cache, "toyseg-wide-v1", seed, resolve_epochs(e1) + resolve_epochs(e2),
          train_data, cfg.train, cfg.train_n);
      variants[0].ckpt_dirs.push_back(s1);
      variants[1].ckpt_dirs.push_back(s2);
      variants[2].ckpt_dirs.push_back(wide);
    }
  }

  // ---- evaluate every (variant, dataset, seed)
  ExperimentResult result;
  for (const auto& [label, ds] : datasets) result.datasets.push_back(label);
  for (const ModelVariant& v : variants) result.models.push_back(v.name);

  for (const ModelVariant& v : variants) {
    for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
      const LoadedCheckpoint lc = load_checkpoint(v.ckpt_dirs[si]);
      const std::string hash = hash_hex(checkpoint_hash(v.ckpt_dirs[si]));
      for (const auto& [label, ds] : datasets) {
        EvalOptions eo;
        eo.seed = cfg.seeds[si];
        eo.checkpoint = hash;
        if (v.filter.kind != FilterKind::None) eo.filter = &v.filter;
        MetricsReport rep = evaluate(lc.net, ds, eo);
        rep.save((out / "reports" /
                  (v.name + "--" + label + "--seed" +
                   std::to_string(cfg.seeds[si]) + ".json"))
                     .string());
        result.reports[v.name][label].push_back(std::move(rep));
      }
    }
    for (const auto& [label, ds] : datasets) {
      std::vector<double> mious;
      for (const MetricsReport& r : result.reports[v.name][label])
        mious.push_back(r.miou * 100.0);
      result.median_miou[v.name][label] = median(std::move(mious));
    }
  }

  // ---- CSV table: rows = models, columns = datasets, cells = median mIoU %
  {
    const fs::path csv_path = out / "table.csv";
    std::ofstream os(csv_path, std::ios::trunc);
    if (!os)
      throw std::runtime_error("run_experiment: cannot write " +
                               csv_path.string());
    os << "model";
    for (const std::string& d : result.datasets) os << ',' << d;
    os << '\n';
    for (const std::string& m : result.models) {
      os << m;
      for (const std::string& d : result.datasets) {
        char cell[32];
        std::snprintf(cell, sizeof cell, "%.2f", result.median_miou[m][d]);
        os << ',' << cell;
      }
      os << '\n';
    }
    result.table_csv = csv_path.string();
  }

  // ---- qualitative grids: input / ground truth / one row per model
  if (cfg.write_quals && cfg.qualitative_n > 0) {
    fs::create_directories(out / "quals");
    const int64_t n = std::min<int64_t>(cfg.qualitative_n, cfg.test_n);
    std::vector<LoadedCheckpoint> first_seed_nets;
    for (const ModelVariant& v : variants)
      first_seed_nets.push_back(load_checkpoint(v.ckpt_dirs[0]));
    for (const auto& [label, ds] : datasets) {
      std::vector<std::vector<RgbImage>> rows(2 + variants.size());
      for (int64_t i = 0; i < n; ++i) {
        rows[0].push_back(to_rgb(ds.samples[static_cast<std::size_t>(i)].image));
        rows[1].push_back(
            labels_to_rgb(ds.samples[static_cast<std::size_t>(i)].labels));
      }
      for (std::size_t vi = 0; vi < variants.size(); ++vi) {
        ForwardOptions fo;
        if (variants[vi].filter.kind != FilterKind::None)
          fo.filter = &variants[vi].filter;
        for (int64_t i = 0; i < n; ++i) {
          const Tensor logits =
              first_seed_nets[vi]
                  .net.forward(ds.samples[static_cast<std::size_t>(i)].image, fo)
                  .logits;
          rows[2 + vi].push_back(labels_to_rgb(argmax_classes(logits)));
        }
      }
      write_png((out / "quals" / (label + ".png")).string(), tile_grid(rows));
    }
  }

  return result;
}

}  // namespace stylelab
