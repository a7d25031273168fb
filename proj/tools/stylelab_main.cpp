// Command-line front end: dataset generation and corruption, two-stage
// training, evaluation (optionally through a style filter), the experiment
// protocols, and per-layer Gram analytics.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "stylelab/eval.hpp"
#include "stylelab/experiment.hpp"
#include "stylelab/image_io.hpp"
#include "stylelab/model.hpp"
#include "stylelab/scenes.hpp"
#include "stylelab/style.hpp"
#include "stylelab/tensor_io.hpp"
#include "stylelab/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stylelab;

namespace {

void add_sgd_flags(CLI::App* cmd, TrainConfig& cfg) {
  cmd->add_option("--lr", cfg.sgd.lr, "base learning rate");
  cmd->add_option("--momentum", cfg.sgd.momentum, "SGD momentum");
  cmd->add_option("--weight-decay", cfg.sgd.weight_decay, "L2 on weights");
  cmd->add_option("--batch", cfg.batch_size, "batch size");
  cmd->add_option("--crop", cfg.crop, "square crop size (multiple of 4)");
}

MetricsReport eval_to_report(const std::string& model_dir,
                             const std::string& data_dir,
                             const EvalOptions& base_opts) {
  const LoadedCheckpoint lc = load_checkpoint(model_dir);
  const Dataset ds = load_dataset(data_dir);
  EvalOptions opts = base_opts;
  opts.checkpoint = hash_hex(checkpoint_hash(model_dir));
  return evaluate(lc.net, ds, opts);
}

void print_report(const MetricsReport& r) {
  std::printf("dataset %s\n", r.dataset_id.c_str());
  for (int c = 0; c < kSceneClasses; ++c)
    std::printf("  IoU %-11s %6.2f%%%s\n", kClassNames[c],
                r.class_iou[static_cast<std::size_t>(c)] * 100.0,
                r.class_present[static_cast<std::size_t>(c)] ? "" : " (absent)");
  std::printf("  mIoU (road/vehicle/vulnerable) %6.2f%%\n", r.miou * 100.0);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gram-matrix style analytics, style-robust training, and "
               "evaluation on synthetic driving scenes"};
  app.require_subcommand(1);

  // ------------------------------------------------------------ gen-data
  struct {
    std::string out, split = "train";
    int64_t n = 160;
    std::uint64_t seed = 1;
  } gen;
  {
    CLI::App* c = app.add_subcommand("gen-data", "generate a dataset");
    c->add_option("--out", gen.out, "output directory")->required();
    c->add_option("--n", gen.n, "number of samples")->required();
    c->add_option("--seed", gen.seed, "dataset seed");
    c->add_option("--split", gen.split, "train|val|test");
    c->callback([&] {
      Dataset ds = generate_dataset(gen.split, gen.n, gen.seed);
      save_dataset(ds, gen.out);
      std::printf("wrote %s (%lld samples, id %s)\n", gen.out.c_str(),
                  static_cast<long long>(ds.info.n), ds.info.id.c_str());
    });
  }

  // ------------------------------------------------------------- corrupt
  struct {
    std::string in, out, kind = "haze";
    int severity = 3;
    std::uint64_t seed = 0;
  } cor;
  {
    CLI::App* c = app.add_subcommand("corrupt", "corrupt a dataset");
    c->add_option("--in", cor.in, "clean dataset directory")->required();
    c->add_option("--out", cor.out, "output directory")->required();
    c->add_option("--kind", cor.kind, "haze|rain|gauss-noise|gauss-blur|contrast")
        ->required();
    c->add_option("--severity", cor.severity, "1..5")->required();
    c->add_option("--seed", cor.seed, "corruption seed");
    c->callback([&] {
      Dataset clean = load_dataset(cor.in);
      Dataset out = corrupt_dataset(clean, {cor.kind, cor.severity, cor.seed});
      save_dataset(out, cor.out);
      std::printf("wrote %s (id %s)\n", cor.out.c_str(), out.info.id.c_str());
    });
  }

  // --------------------------------------------------------------- train
  struct {
    std::string data, out;
    TrainConfig cfg;
  } tr;
  {
    CLI::App* c = app.add_subcommand("train", "stage-1 task training");
    c->add_option("--data", tr.data, "training dataset directory")->required();
    c->add_option("--out", tr.out, "checkpoint directory")->required();
    c->add_option("--epochs", tr.cfg.epochs, "epochs (0 = default)");
    c->add_option("--seed", tr.cfg.seed, "training seed");
    c->add_option("--arch", tr.cfg.arch, "toyseg-v1|toyseg-wide-v1");
    add_sgd_flags(c, tr.cfg);
    c->callback([&] {
      tr.cfg.stage = 1;
      tr.cfg.data = tr.data;
      TrainResult r = train_stage1(load_dataset(tr.data), tr.cfg);
      fs::create_directories(tr.out);
      save_train_result(r, tr.out);
      std::printf("stage-1 done: final task loss %.4f, wrote %s\n",
                  r.log.final_l_task, tr.out.c_str());
    });
  }

  // ------------------------------------------------------------ finetune
  struct {
    std::string model, data, out;
    TrainConfig cfg;
  } ft;
  {
    CLI::App* c = app.add_subcommand(
        "finetune", "stage-2: insert style-removal layers, fine-tune");
    c->add_option("--model", ft.model, "stage-1 checkpoint")->required();
    c->add_option("--data", ft.data, "training dataset directory")->required();
    c->add_option("--out", ft.out, "output checkpoint directory")->required();
    c->add_option("--alpha", ft.cfg.alpha, "gram-loss weight");
    c->add_option("--sl-lr-mult", ft.cfg.styleless_lr_mult,
                  "lr multiplier for the inserted layers");
    c->add_option("--epochs", ft.cfg.epochs, "epochs (0 = half stage-1 default)");
    c->add_option("--seed", ft.cfg.seed, "training seed");
    add_sgd_flags(c, ft.cfg);
    c->callback([&] {
      ft.cfg.stage = 2;
      ft.cfg.data = ft.data;
      TrainResult r = train_stage2(ft.model, load_dataset(ft.data), ft.cfg);
      fs::create_directories(ft.out);
      save_train_result(r, ft.out);
      std::printf(
          "stage-2 done: final task loss %.4f, final gram loss %.4f, wrote %s\n",
          r.log.final_l_task, r.log.final_l_gram, ft.out.c_str());
    });
  }

  // ---------------------------------------------------------------- eval
  struct {
    std::string model, data, report;
    std::uint64_t seed = 0;
  } ev;
  {
    CLI::App* c = app.add_subcommand("eval", "evaluate a checkpoint");
    c->add_option("--model", ev.model, "checkpoint directory")->required();
    c->add_option("--data", ev.data, "dataset directory")->required();
    c->add_option("--report", ev.report, "write JSON report here");
    c->add_option("--seed", ev.seed, "evaluation seed");
    c->callback([&] {
      EvalOptions opts;
      opts.seed = ev.seed;
      MetricsReport r = eval_to_report(ev.model, ev.data, opts);
      if (!ev.report.empty()) r.save(ev.report);
      print_report(r);
    });
  }

  // -------------------------------------------------------- filter-apply
  struct {
    std::string model, data, report, filter = "remove", layers;
    double p = 10.0, tau = 4.0;
    std::uint64_t seed = 0;
  } fa;
  {
    CLI::App* c = app.add_subcommand(
        "filter-apply", "evaluate with a style filter at the feature taps");
    c->add_option("--model", fa.model, "checkpoint directory")->required();
    c->add_option("--data", fa.data, "dataset directory")->required();
    c->add_option("--filter", fa.filter, "remove|weighting|noise")->required();
    c->add_option("--p", fa.p, "percent of Gram entries selecting channels");
    c->add_option("--tau", fa.tau, "noise attenuation");
    c->add_option("--seed", fa.seed, "filter/evaluation seed");
    c->add_option("--layers", fa.layers, "comma-separated tap indices (default all)");
    c->add_option("--report", fa.report, "write JSON report here");
    c->callback([&] {
      FilterConfig f;
      f.kind = filter_kind_from_string(fa.filter);
      f.percent = fa.p;
      f.tau = fa.tau;
      EvalOptions opts;
      opts.filter = &f;
      opts.seed = fa.seed;
      if (!fa.layers.empty()) {
        std::stringstream ss(fa.layers);
        for (std::string tok; std::getline(ss, tok, ',');)
          opts.filter_layers.push_back(std::stoi(tok));
      }
      MetricsReport r = eval_to_report(fa.model, fa.data, opts);
      if (!fa.report.empty()) r.save(fa.report);
      print_report(r);
    });
  }

  // ---------------------------------------------------------- experiment
  struct {
    ExperimentConfig cfg;
    std::string seeds = "1,2,3,4,5", kinds, severities;
  } ex;
  {
    CLI::App* c = app.add_subcommand("experiment", "run a full protocol");
    c->add_option("--protocol", ex.cfg.protocol,
                  "baseline-vs-styleless|filters-ablation|capacity-ablation")
        ->required();
    c->add_option("--out", ex.cfg.out_dir, "output directory")->required();
    c->add_option("--seeds", ex.seeds, "comma-separated training seeds");
    c->add_option("--train-n", ex.cfg.train_n, "training scenes per seed");
    c->add_option("--test-n", ex.cfg.test_n, "test scenes");
    c->add_option("--data-seed", ex.cfg.data_seed, "test dataset seed");
    c->add_option("--stage1-epochs", ex.cfg.stage1_epochs, "0 = default");
    c->add_option("--stage2-epochs", ex.cfg.stage2_epochs, "0 = default");
    c->add_option("--stage2-lr", ex.cfg.stage2_lr,
                  "stage-2 base learning rate (0 = same as --lr)");
    c->add_option("--kinds", ex.kinds, "comma-separated corruption kinds");
    c->add_option("--severities", ex.severities, "comma-separated severities");
    c->add_option("--cache", ex.cfg.checkpoint_cache, "checkpoint cache dir");
    c->add_option("--alpha", ex.cfg.train.alpha, "stage-2 gram-loss weight");
    add_sgd_flags(c, ex.cfg.train);
    c->callback([&] {
      auto split_list = [](const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        for (std::string tok; std::getline(ss, tok, ',');)
          if (!tok.empty()) out.push_back(tok);
        return out;
      };
      ex.cfg.seeds.clear();
      for (const std::string& t : split_list(ex.seeds))
        ex.cfg.seeds.push_back(std::stoull(t));
      ex.cfg.kinds = split_list(ex.kinds);
      if (!ex.severities.empty()) {
        ex.cfg.severities.clear();
        for (const std::string& t : split_list(ex.severities))
          ex.cfg.severities.push_back(std::stoi(t));
      }
      ExperimentResult r = run_experiment(ex.cfg);
      std::printf("table: %s\n", r.table_csv.c_str());
      std::printf("%-14s", "model");
      for (const std::string& d : r.datasets) std::printf(" %12s", d.c_str());
      std::printf("\n");
      for (const std::string& m : r.models) {
        std::printf("%-14s", m.c_str());
        for (const std::string& d : r.datasets)
          std::printf(" %12.2f", r.median_miou[m][d]);
        std::printf("\n");
      }
    });
  }

  // -------------------------------------------------------- gram-analyze
  struct {
    std::string model, image, data, out;
    int64_t index = 0, top_k = 5;
  } ga;
  {
    CLI::App* c = app.add_subcommand(
        "gram-analyze", "per-layer Gram summaries for one image");
    c->add_option("--model", ga.model, "checkpoint directory")->required();
    c->add_option("--image", ga.image, "image tensor file (3xHxW float32)");
    c->add_option("--data", ga.data, "dataset directory (with --index)");
    c->add_option("--index", ga.index, "sample index into --data");
    c->add_option("--top-k", ga.top_k, "top entries to report per layer");
    c->add_option("--out", ga.out, "write JSON here (default stdout)");
    c->callback([&] {
      if (ga.image.empty() == ga.data.empty())
        throw CLI::ValidationError(
            "gram-analyze: need exactly one of --image / --data");
      Tensor img;
      if (!ga.image.empty()) {
        img = io::load_tensor(ga.image);
      } else {
        Dataset ds = load_dataset(ga.data);
        img = ds.samples.at(static_cast<std::size_t>(ga.index)).image;
      }
      const LoadedCheckpoint lc = load_checkpoint(ga.model);
      const std::vector<Tensor> taps = lc.net.extract_taps(img);
      json layers = json::array();
      for (std::size_t l = 0; l < taps.size(); ++l) {
        const GramStats st = gram_stats(gram(taps[l]), ga.top_k);
        json top = json::array();
        for (const auto& [row, col, value] : st.top)
          top.push_back({{"row", row}, {"col", col}, {"value", value}});
        layers.push_back({{"layer", l},
                          {"channels", st.channels},
                          {"min", st.min},
                          {"max", st.max},
                          {"mean", st.mean},
                          {"frobenius", st.frobenius},
                          {"diagonal", st.diagonal},
                          {"top", top}});
      }
      const json doc = {{"layers", layers}};
      if (ga.out.empty()) {
        std::cout << doc.dump(2) << '\n';
      } else {
        std::ofstream os(ga.out, std::ios::trunc);
        os << doc.dump(2) << '\n';
      }
    });
  }

  try {
    CLI11_PARSE(app, argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
